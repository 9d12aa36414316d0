#pragma once

#include <memory>
#include <string>
#include <vector>

#include "ssrl/kernels.hpp"
#include "ssrl/rng.hpp"
#include "ssrl/tensor.hpp"

namespace ssrl {

// Flat view over one trainable array (weights or grads live in the owning
// layer). `decay` marks arrays that receive weight decay.
struct ParamRef {
    std::string name;
    float* value = nullptr;
    float* grad = nullptr;
    int64_t size = 0;
    bool decay = false;
};

// Non-trainable persistent state (batch-norm running stats).
struct StateRef {
    std::string name;
    float* value = nullptr;
    int64_t size = 0;
};

// Lifetime contract: the tensor passed to forward() must stay alive until the
// matching backward() returns; layers cache pointers, not copies.
class Layer {
public:
    virtual ~Layer() = default;
    virtual const Tensor& forward(const Tensor& x, bool train) = 0;
    virtual Tensor backward(const Tensor& dy) = 0;
    virtual void collect_params(const std::string& prefix, std::vector<ParamRef>& out) {}
    virtual void collect_state(const std::string& prefix, std::vector<StateRef>& out) {}
    virtual void init(Rng& rng) {}
    const Tensor& output() const { return out_; }

protected:
    Tensor out_;
};

class Conv2d : public Layer {
public:
    Conv2d(int64_t in_ch, int64_t out_ch, int64_t kernel, int64_t stride);
    const Tensor& forward(const Tensor& x, bool train) override;
    Tensor backward(const Tensor& dy) override;
    void collect_params(const std::string& prefix, std::vector<ParamRef>& out) override;
    void init(Rng& rng) override;
    const Tensor& weights() const { return w_; }

private:
    Tensor w_, dw_;
    kern::ConvGeom geom_;
    int64_t in_ch_;
    const Tensor* x_ = nullptr;
};

class BatchNorm2d : public Layer {
public:
    explicit BatchNorm2d(int64_t channels, float momentum = 0.9f, float eps = 1e-5f);
    const Tensor& forward(const Tensor& x, bool train) override;
    Tensor backward(const Tensor& dy) override;
    void collect_params(const std::string& prefix, std::vector<ParamRef>& out) override;
    void collect_state(const std::string& prefix, std::vector<StateRef>& out) override;

private:
    int64_t channels_;
    float momentum_, eps_;
    std::vector<float> gamma_, beta_, dgamma_, dbeta_;
    std::vector<float> running_mean_, running_var_;
    Tensor xhat_;
    std::vector<float> inv_std_;
};

class ReLU : public Layer {
public:
    const Tensor& forward(const Tensor& x, bool train) override;
    Tensor backward(const Tensor& dy) override;
};

class MaxPool2d : public Layer {
public:
    MaxPool2d(int64_t kernel, int64_t stride) : kernel_(kernel), stride_(stride) {}
    const Tensor& forward(const Tensor& x, bool train) override;
    Tensor backward(const Tensor& dy) override;

private:
    int64_t kernel_, stride_;
    std::vector<int32_t> argmax_;
    int64_t in_h_ = 0, in_w_ = 0;
};

class GlobalAvgPool : public Layer {
public:
    const Tensor& forward(const Tensor& x, bool train) override;
    Tensor backward(const Tensor& dy) override;

private:
    int64_t in_h_ = 0, in_w_ = 0;
};

// (N, C, H, W) -> (N, C*H*W) view copy.
class Flatten : public Layer {
public:
    const Tensor& forward(const Tensor& x, bool train) override;
    Tensor backward(const Tensor& dy) override;

private:
    std::array<int64_t, 4> in_dims_{};
};

class Dense : public Layer {
public:
    Dense(int64_t in_dim, int64_t out_dim, bool bias = true);
    const Tensor& forward(const Tensor& x, bool train) override;
    Tensor backward(const Tensor& dy) override;
    void collect_params(const std::string& prefix, std::vector<ParamRef>& out) override;
    void init(Rng& rng) override;
    int64_t in_dim() const { return in_dim_; }
    int64_t out_dim() const { return out_dim_; }

private:
    int64_t in_dim_, out_dim_;
    Tensor w_, dw_;
    std::vector<float> b_, db_;
    bool bias_;
    const Tensor* x_ = nullptr;
};

// Inverted dropout; identity at inference. Owns its random stream so that a
// fixed seed reproduces the same mask sequence.
class Dropout : public Layer {
public:
    Dropout(float rate, uint64_t seed) : rate_(rate), rng_(seed) {}
    const Tensor& forward(const Tensor& x, bool train) override;
    Tensor backward(const Tensor& dy) override;
    void reseed(uint64_t seed) { rng_ = Rng(seed); }

private:
    float rate_;
    Rng rng_;
    std::vector<float> mask_;
    bool last_train_ = false;
};

class Sequential : public Layer {
public:
    Sequential() = default;
    void add(std::unique_ptr<Layer> l) { layers_.push_back(std::move(l)); }
    const Tensor& forward(const Tensor& x, bool train) override;
    Tensor backward(const Tensor& dy) override;
    void collect_params(const std::string& prefix, std::vector<ParamRef>& out) override;
    void collect_state(const std::string& prefix, std::vector<StateRef>& out) override;
    void init(Rng& rng) override;
    size_t size() const { return layers_.size(); }
    Layer& at(size_t i) { return *layers_[i]; }

private:
    std::vector<std::unique_ptr<Layer>> layers_;
};

// Softmax cross-entropy over logits (N, C); mean over the batch.
struct XentResult {
    float loss = 0.0f;
    Tensor dlogits;
    int64_t correct = 0;
};
XentResult softmax_xent(const Tensor& logits, const std::vector<int32_t>& targets);

// Directional-derivative gradient check: compares g.d against central finite
// differences of f along random directions d.
struct GradCheckResult {
    float max_rel_err = 0.0f;
    bool ok = true;
};
GradCheckResult grad_check_layer(Layer& layer, const Tensor& x, Rng& rng, int probes = 10,
                                 float eps = 5e-3f, float tol = 1e-3f);

}  // namespace ssrl
