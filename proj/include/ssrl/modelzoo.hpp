#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "ssrl/layers.hpp"

namespace ssrl {

enum class Family { ResNetV1, ResNetV2, RevNet50, Vgg19Bn };

Family family_from_string(const std::string& s);
std::string family_to_string(Family f);

struct ModelSpec {
    Family family = Family::ResNetV2;
    int widening_k = 4;
    bool final_relu = true;   // false = the "(-)" variant
    int rep_size = 0;         // 0 = no extra representation layer
    int input_side = 224;

    void validate() const;
    // Short stable identifier used in checkpoint paths and result records.
    std::string id() const;
};

// Pre-logits width: 512*k for every family, unless rep_size overrides it.
int64_t representation_dim(const ModelSpec& spec);

// Channel width of each tap's feature map (block1..block4, pre_logits).
int64_t tap_channels(const ModelSpec& spec, const std::string& tap);

struct TapEntry {
    std::string name;
    const Tensor* value;
};

// A backbone: stem + blocks + pooling head, ending at the pre-logits vector.
// Task heads live outside; backward() takes the gradient at pre-logits.
class Model {
public:
    Model(const ModelSpec& spec, uint64_t seed);

    const ModelSpec& spec() const { return spec_; }

    const Tensor& forward(const Tensor& images, bool train);
    Tensor backward(const Tensor& d_prelogits);

    // Tap outputs from the most recent forward, in depth order.
    std::vector<TapEntry> taps() const;
    static const std::vector<std::string>& tap_names();

    std::vector<ParamRef> params();
    std::vector<StateRef> state();
    int64_t parameter_count();
    uint64_t param_checksum();

    // RevNet only: the stride-free unit stacks, one per block.
    std::vector<class RevUnit*> rev_units(int block) const;
    int num_blocks() const { return 4; }

private:
    friend struct ModelBuilder;
    ModelSpec spec_;
    std::vector<std::unique_ptr<Layer>> stages_;
    std::vector<std::string> stage_names_;
    std::vector<const Tensor*> stage_out_;
    std::map<std::string, size_t> tap_stage_;
    std::vector<std::vector<RevUnit*>> rev_units_;
};

// One invertible unit: input split channel-wise into (x1, x2); output is the
// concatenation of y2 := x2 and y1 := x1 + F(x2).
class RevUnit : public Layer {
public:
    RevUnit(int64_t channels, int64_t bottleneck_mid);
    const Tensor& forward(const Tensor& x, bool train) override;
    Tensor backward(const Tensor& dy) override;
    void collect_params(const std::string& prefix, std::vector<ParamRef>& out) override;
    void collect_state(const std::string& prefix, std::vector<StateRef>& out) override;
    void init(Rng& rng) override;
    // Closed-form inverse; evaluates F forward in inference mode.
    Tensor inverse(const Tensor& y);

private:
    int64_t channels_;
    Sequential f_;
    Tensor x1_, x2_;
};

// Free-function forms of the unit algebra, usable with any residual callable.
using RevResidualFn = std::function<Tensor(const Tensor&)>;
std::pair<Tensor, Tensor> rev_unit_forward(const Tensor& x1, const Tensor& x2,
                                           const RevResidualFn& f);
std::pair<Tensor, Tensor> rev_unit_inverse(const Tensor& y1, const Tensor& y2,
                                           const RevResidualFn& f);

Tensor concat_channels(const Tensor& a, const Tensor& b);
std::pair<Tensor, Tensor> split_channels(const Tensor& x);

// Frozen-network feature extraction: inference mode, spatial taps reduced by
// global average pooling. Returns an (N, M) matrix.
Tensor extract_representation(Model& model, const std::string& layer_name,
                              const Tensor& images, int64_t batch_size = 64);

// Checkpoint directory: human-readable manifest plus a parameter blob.
void save_model(const std::string& dir, Model& model, const std::string& task_id,
                int64_t training_step);
struct LoadedModel {
    std::unique_ptr<Model> model;
    std::string task_id;
    int64_t training_step = 0;
};
LoadedModel load_model(const std::string& dir);

}  // namespace ssrl
