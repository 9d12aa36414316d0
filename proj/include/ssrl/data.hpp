#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ssrl/imageops.hpp"
#include "ssrl/rng.hpp"
#include "ssrl/tensor.hpp"

namespace ssrl {

struct DatasetSpec {
    std::string name;
    std::string root;          // directory of class folders per split
    int num_classes = 0;       // 0 = take from directory scan
    int image_side = 0;        // declared side; 0 = any
    int64_t holdout_size = 0;
    uint64_t split_seed = 1;
};

// In-memory desk-scale dataset; images kept as decoded 8-bit RGB.
class Dataset {
public:
    struct Item {
        std::vector<uint8_t> rgb;  // h*w*3, row-major, interleaved
        int h = 0, w = 0;
        int32_t label = -1;
        std::string path;
    };

    std::string name;
    std::vector<std::string> class_names;
    std::vector<Item> items;
    int64_t skipped = 0;  // corrupt files skipped during load

    int64_t size() const { return int64_t(items.size()); }
    int num_classes() const { return int(class_names.size()); }
    // Decoded to float [0,1], shape (1,3,h,w).
    Tensor image(int64_t idx) const;
    std::vector<int32_t> labels() const;
    std::vector<int64_t> label_histogram() const;
};

// Loads root/<split>; class folders sorted by name, files sorted by name.
// Corrupt files are skipped with a logged warning; a missing root is fatal.
Dataset load_dataset(const DatasetSpec& spec, const std::string& split);

struct SplitIndex {
    std::vector<int64_t> indices;  // strictly increasing
    uint64_t seed = 0;

    void save(const std::string& path) const;
    static SplitIndex load(const std::string& path);
};

struct HoldoutSplit {
    std::vector<int64_t> train;  // remaining training indices
    SplitIndex holdout;
};
// Seeded uniform sample without replacement from [0, train_size).
HoldoutSplit make_holdout_split(int64_t train_size, int64_t holdout_size, uint64_t seed);

// Aspect-preserving resize to smallest side round(256*f), then a random crop
// of round(224*f), with f = target_side/224.
Tensor standard_augment(const Tensor& image, int64_t target_side, Rng& rng);
// Deterministic evaluation counterpart: resize then center crop.
Tensor standard_eval_view(const Tensor& image, int64_t target_side);

// PPM (P6) codec used by the bundled datasets.
void write_ppm(const std::string& path, const Tensor& image);
Tensor read_ppm(const std::string& path);

// manifest.txt: one "<class_name> <count>" line per class.
void write_manifest(const std::string& dir, const std::vector<std::string>& classes,
                    const std::vector<int64_t>& counts);

}  // namespace ssrl
