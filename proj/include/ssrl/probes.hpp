#pragma once

#include <map>
#include <string>
#include <vector>

#include "ssrl/data.hpp"
#include "ssrl/lbfgs.hpp"
#include "ssrl/modelzoo.hpp"
#include "ssrl/pretext.hpp"

namespace ssrl {

// Frozen features with provenance; rows align with labels.
struct RepresentationMatrix {
    Tensor x;  // (N, M)
    std::vector<int32_t> y;
    std::string model_id, layer, dataset, split;
    float fraction = 1.0f;

    int64_t n() const { return x.n(); }
    int64_t m() const { return x.c(); }
    void validate(int num_classes) const;
    RepresentationMatrix select(const std::vector<int64_t>& rows) const;

    // Binary cache: text header, float32 rows, int32 labels (little-endian).
    void save(const std::string& path) const;
    static RepresentationMatrix load(const std::string& path);
};

enum class ProbeKind { ConvexLinear, SgdLinear, Mlp };
ProbeKind probe_kind_from_string(const std::string& s);
std::string probe_kind_to_string(ProbeKind k);

struct ConvexLinearSpec {
    int max_updates = 800;
    double lambda_numerator = 100.0;  // lambda = numerator / (M*C)
    double grad_tol = 1e-6;
};

struct SgdLinearSpec {
    int batch = 2048;
    float lr = 0.1f;
    int first_decay_epoch = 30;
    int extra_epochs = 40;        // trained past the first decay
    int second_decay_after = 20;  // epochs after the first decay
    float decay_factor = 0.1f;
    float momentum = 0.9f;
    int reference_batch = 256;    // B/256 learning-rate scaling
    bool augment = true;          // fresh augmented views through the frozen net
    int total_epochs() const { return first_decay_epoch + extra_epochs; }
    float lr_at_epoch(int epoch) const;
};

struct MlpProbeSpec {
    int hidden = 1000;
    float dropout = 0.5f;
    int epochs = 180;
    int batch = 512;
    float lr = 0.01f;
    std::vector<int> decay_epochs = {60, 120};
    float decay_factor = 0.1f;
    float momentum = 0.9f;
    double lambda_numerator = 100.0;
};

struct ProbeSpec {
    ProbeKind kind = ProbeKind::ConvexLinear;
    ConvexLinearSpec convex;
    SgdLinearSpec sgd;
    MlpProbeSpec mlp;
    uint64_t seed = 1;
};

struct LinearModel {
    Tensor w;  // (C, M)
    std::vector<float> b;
};

Tensor linear_scores(const LinearModel& m, const Tensor& x);

// Fraction of rows whose label sits among the k best scores; ties broken
// toward the lower class index.
float top_k_accuracy(const Tensor& scores, const std::vector<int32_t>& y, int k);

struct ConvexFitResult {
    LinearModel model;
    double lambda = 0.0;
    int iterations = 0;
    double objective = 0.0;
    double grad_norm = 0.0;
    float train_top1 = 0.0f;
};
// Multinomial logistic regression, L-BFGS, lambda = 100/(M*C) on W only.
ConvexFitResult fit_convex_linear(const RepresentationMatrix& train, int num_classes,
                                  const ConvexLinearSpec& spec);

struct ProbeOutcome {
    float top1 = 0.0f;
    float top5 = 0.0f;
    float train_top1 = 0.0f;
    std::vector<float> curve;  // per-epoch validation top-1 (SGD probes)
};

ProbeOutcome eval_linear(const LinearModel& m, const RepresentationMatrix& train,
                         const RepresentationMatrix& eval);

// SGD probe on cached features (the augment=false route).
ProbeOutcome fit_sgd_linear_features(const RepresentationMatrix& train,
                                     const RepresentationMatrix& eval, int num_classes,
                                     const SgdLinearSpec& spec, uint64_t seed);

// SGD probe through the frozen model with fresh augmented views per epoch.
ProbeOutcome fit_sgd_linear(Model& model, const std::string& layer, const Dataset& data,
                            const std::vector<int64_t>& train_idx,
                            const std::vector<int64_t>& eval_idx, const SgdLinearSpec& spec,
                            uint64_t seed);

// Single-hidden-layer MLP probe with dropout and the convex probe's
// lambda rule.
ProbeOutcome fit_mlp_probe(const RepresentationMatrix& train, const RepresentationMatrix& eval,
                           int num_classes, const MlpProbeSpec& spec, uint64_t seed);

// Dispatch on spec.kind over cached features.
ProbeOutcome run_probe(const RepresentationMatrix& train, const RepresentationMatrix& eval,
                       int num_classes, const ProbeSpec& spec);

// Frozen-feature extraction over a dataset; patch_mode averages the nine
// eval-grid patch representations per image.
RepresentationMatrix extract_features(Model& model, const std::string& layer,
                                      const Dataset& data, const std::vector<int64_t>& idx,
                                      bool patch_mode, const std::string& split_name,
                                      int64_t batch = 64);

// One probe per tap on identical splits, keyed by tap name in depth order.
std::vector<std::pair<std::string, float>> layerwise_eval(Model& model, const Dataset& data,
                                                          const std::vector<int64_t>& train_idx,
                                                          const std::vector<int64_t>& eval_idx,
                                                          const ProbeSpec& probe,
                                                          bool patch_mode);

// Class-stratified row subsample; floor(fraction * per-class count) each.
std::vector<int64_t> stratified_subsample(const std::vector<int32_t>& y, double fraction,
                                          uint64_t seed);
float subsample_eval(const RepresentationMatrix& train, const RepresentationMatrix& eval,
                     int num_classes, double fraction, uint64_t seed, const ProbeSpec& probe);

}  // namespace ssrl
