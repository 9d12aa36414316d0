#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "ssrl/imageops.hpp"
#include "ssrl/layers.hpp"
#include "ssrl/modelzoo.hpp"

namespace ssrl {

enum class Task { Rotation, Exemplar, Jigsaw, RelPatchLoc, Supervised };

Task task_from_string(const std::string& s);
std::string task_to_string(Task t);
bool task_uses_patches(Task t);

struct AugmentParams {
    float area_lo = 0.08f;
    float area_hi = 1.0f;
    float flip_prob = 0.5f;
    float jitter = 0.4f;
};

struct PretextSpec {
    Task task = Task::Rotation;
    int num_classes = 0;          // supervised only
    int rotation_count = 4;
    int examples_per_image = 8;   // exemplar
    float triplet_margin = 0.5f;
    int embed_dim = 1000;         // exemplar logits layer
    int perms_per_image = 16;     // jigsaw
    int permset_count = 100;
    uint64_t permset_seed = 1;
    int head_hidden = 4096;       // jigsaw / relpatchloc MLP width
    AugmentParams augment;

    // Output classes of the task head.
    int64_t head_classes() const;
};

// Patch pipeline geometry; base constants scale by input_side/255.
struct PatchGeometry {
    int64_t resize_side = 292;
    int64_t crop_side = 255;
    int64_t cell_side = 85;
    int64_t patch_side = 64;
    int64_t eval_scale_side = 255;
    int64_t eval_center_side = 192;

    static PatchGeometry base();
    static PatchGeometry scaled(int64_t input_side);
    void validate() const;
    int64_t jitter_range() const { return cell_side - patch_side; }
};

struct PermutationSet {
    std::vector<std::array<int, 9>> perms;
    uint64_t seed = 0;
    int min_hamming = 0;

    static PermutationSet generate(uint64_t seed, int count = 100);
    void save(const std::string& path) const;
    static PermutationSet load(const std::string& path);
    int index_of_identity() const;
};

struct PretextBatch {
    Tensor inputs;                 // (E * patches_per_example, 3, S, S)
    std::vector<int32_t> targets;  // class index or instance id, one per example
    Task task = Task::Rotation;
    int64_t patches_per_example = 1;
    int64_t examples() const { return int64_t(targets.size()); }
};

// Square inputs already sized for the model; emits 4 copies per image in
// image-major order, label r <=> rotation by r*90 degrees counterclockwise.
PretextBatch make_rotation_batch(const Tensor& images);

// Raw (possibly larger) images; each yields n_examples heavily augmented
// views sharing one instance id.
PretextBatch make_exemplar_batch(const std::vector<Tensor>& images, int64_t side,
                                 int n_examples, const AugmentParams& aug, Rng& rng);

struct PatchGridResult {
    std::vector<Tensor> patches;  // 9, raster order
    bool grayscaled = false;
    int sigma_clamps = 0;
};
// Train mode: resize, random crop, random grayscale (p = 2/3), per-cell
// jittered patch crop, per-patch standardization. Eval mode: fixed central
// 3x3 grid, color kept, standardized.
PatchGridResult extract_patch_grid(const Tensor& image, const PatchGeometry& geom,
                                   bool train_mode, Rng& rng);

PretextBatch make_jigsaw_batch(const std::vector<Tensor>& images, const PermutationSet& perms,
                               const PatchGeometry& geom, int perms_per_image, bool train_mode,
                               Rng& rng);

// Center patch paired with one uniformly drawn neighbor; labels follow the
// row-major offset table (-1,-1)...(1,1) -> 0..7.
PretextBatch make_relpatchloc_batch(const std::vector<Tensor>& images,
                                    const PatchGeometry& geom, bool train_mode, Rng& rng);
int relpatchloc_label(int dy, int dx);

PretextBatch supervised_baseline_batch(const Tensor& images, const std::vector<int32_t>& labels,
                                       int num_classes);

// Mean of the nine eval-mode patch pre-logits vectors.
Tensor average_patch_representation(Model& model, const Tensor& image,
                                    const PatchGeometry& geom);

struct TripletResult {
    float loss = 0.0f;
    Tensor dembeddings;
    float accuracy = 0.0f;  // fraction of anchors whose nearest neighbor shares the id
};
// Semi-hard negative mining over squared Euclidean distances, hinge margin,
// averaged over ordered positive pairs.
TripletResult triplet_loss(const Tensor& embeddings, const std::vector<int32_t>& ids,
                           float margin = 0.5f, bool need_grad = true);

// Task head consuming backbone pre-logits (concatenated for patch tasks).
std::unique_ptr<Sequential> build_task_head(const PretextSpec& spec, int64_t rep_dim,
                                            uint64_t seed);

}  // namespace ssrl
