#include <cmath>
#include <cstring>

#include "ssrl/layers.hpp"

namespace ssrl {

// ---------------------------------------------------------------------------
// Conv2d
// ---------------------------------------------------------------------------

Conv2d::Conv2d(int64_t in_ch, int64_t out_ch, int64_t kernel, int64_t stride)
    : w_(out_ch, in_ch, kernel, kernel),
      dw_(out_ch, in_ch, kernel, kernel),
      in_ch_(in_ch) {
    geom_.kernel = kernel;
    geom_.stride = stride;
    geom_.pad = kernel / 2;
}

void Conv2d::init(Rng& rng) {
    // Variance-scaling fan-in.
    float std = std::sqrt(2.0f / float(in_ch_ * geom_.kernel * geom_.kernel));
    w_.randn(rng, std);
    dw_.zero();
}

const Tensor& Conv2d::forward(const Tensor& x, bool) {
    require(x.c() == in_ch_, "conv2d: channel mismatch");
    x_ = &x;
    kern::conv2d_fwd(x, w_, geom_, out_);
    return out_;
}

Tensor Conv2d::backward(const Tensor& dy) {
    kern::conv2d_bwd_weights(*x_, dy, geom_, dw_);
    Tensor dx(x_->n(), x_->c(), x_->h(), x_->w());
    kern::conv2d_bwd_data(dy, w_, geom_, dx);
    return dx;
}

void Conv2d::collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
    out.push_back({prefix + ".w", w_.data(), dw_.data(), w_.numel(), true});
}

// ---------------------------------------------------------------------------
// BatchNorm2d
// ---------------------------------------------------------------------------

BatchNorm2d::BatchNorm2d(int64_t channels, float momentum, float eps)
    : channels_(channels),
      momentum_(momentum),
      eps_(eps),
      gamma_(size_t(channels), 1.0f),
      beta_(size_t(channels), 0.0f),
      dgamma_(size_t(channels), 0.0f),
      dbeta_(size_t(channels), 0.0f),
      running_mean_(size_t(channels), 0.0f),
      running_var_(size_t(channels), 1.0f) {}

const Tensor& BatchNorm2d::forward(const Tensor& x, bool train) {
    require(x.c() == channels_, "batchnorm: channel mismatch");
    if (train)
        kern::bn_fwd_train(x, gamma_, beta_, running_mean_, running_var_, momentum_, eps_,
                           out_, xhat_, inv_std_);
    else
        kern::bn_fwd_eval(x, gamma_, beta_, running_mean_, running_var_, eps_, out_);
    return out_;
}

Tensor BatchNorm2d::backward(const Tensor& dy) {
    Tensor dx;
    kern::bn_bwd(dy, xhat_, inv_std_, gamma_, dx, dgamma_, dbeta_);
    return dx;
}

void BatchNorm2d::collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
    out.push_back({prefix + ".gamma", gamma_.data(), dgamma_.data(), channels_, false});
    out.push_back({prefix + ".beta", beta_.data(), dbeta_.data(), channels_, false});
}

void BatchNorm2d::collect_state(const std::string& prefix, std::vector<StateRef>& out) {
    out.push_back({prefix + ".running_mean", running_mean_.data(), channels_});
    out.push_back({prefix + ".running_var", running_var_.data(), channels_});
}

// ---------------------------------------------------------------------------
// ReLU / pools / flatten
// ---------------------------------------------------------------------------

const Tensor& ReLU::forward(const Tensor& x, bool) {
    kern::relu_fwd(x, out_);
    return out_;
}

Tensor ReLU::backward(const Tensor& dy) {
    Tensor dx;
    kern::relu_bwd(dy, out_, dx);
    return dx;
}

const Tensor& MaxPool2d::forward(const Tensor& x, bool) {
    in_h_ = x.h();
    in_w_ = x.w();
    kern::maxpool_fwd(x, kernel_, stride_, out_, argmax_);
    return out_;
}

Tensor MaxPool2d::backward(const Tensor& dy) {
    Tensor dx(dy.n(), dy.c(), in_h_, in_w_);
    kern::maxpool_bwd(dy, argmax_, dx);
    return dx;
}

const Tensor& GlobalAvgPool::forward(const Tensor& x, bool) {
    in_h_ = x.h();
    in_w_ = x.w();
    kern::gap_fwd(x, out_);
    return out_;
}

Tensor GlobalAvgPool::backward(const Tensor& dy) {
    Tensor dx;
    kern::gap_bwd(dy, in_h_, in_w_, dx);
    return dx;
}

const Tensor& Flatten::forward(const Tensor& x, bool) {
    in_dims_ = x.dims();
    out_ = Tensor::matrix(x.n(), x.c() * x.h() * x.w());
    std::memcpy(out_.data(), x.data(), size_t(x.numel()) * sizeof(float));
    return out_;
}

Tensor Flatten::backward(const Tensor& dy) {
    Tensor dx(in_dims_[0], in_dims_[1], in_dims_[2], in_dims_[3]);
    std::memcpy(dx.data(), dy.data(), size_t(dy.numel()) * sizeof(float));
    return dx;
}

// ---------------------------------------------------------------------------
// Dense
// ---------------------------------------------------------------------------

Dense::Dense(int64_t in_dim, int64_t out_dim, bool bias)
    : in_dim_(in_dim),
      out_dim_(out_dim),
      w_(Tensor::matrix(out_dim, in_dim)),
      dw_(Tensor::matrix(out_dim, in_dim)),
      b_(bias ? size_t(out_dim) : 0, 0.0f),
      db_(bias ? size_t(out_dim) : 0, 0.0f),
      bias_(bias) {}

void Dense::init(Rng& rng) {
    float std = std::sqrt(2.0f / float(in_dim_));
    w_.randn(rng, std);
    dw_.zero();
    std::fill(b_.begin(), b_.end(), 0.0f);
}

const Tensor& Dense::forward(const Tensor& x, bool) {
    require(x.c() == in_dim_ && x.h() == 1 && x.w() == 1, "dense: input dim mismatch");
    x_ = &x;
    kern::dense_fwd(x, w_, b_, out_);
    return out_;
}

Tensor Dense::backward(const Tensor& dy) {
    kern::dense_bwd_weights(*x_, dy, dw_, db_);
    Tensor dx;
    kern::dense_bwd_data(dy, w_, dx);
    return dx;
}

void Dense::collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
    out.push_back({prefix + ".w", w_.data(), dw_.data(), w_.numel(), true});
    if (bias_) out.push_back({prefix + ".b", b_.data(), db_.data(), out_dim_, false});
}

// ---------------------------------------------------------------------------
// Dropout
// ---------------------------------------------------------------------------

const Tensor& Dropout::forward(const Tensor& x, bool train) {
    last_train_ = train;
    out_ = Tensor(x.n(), x.c(), x.h(), x.w());
    if (!train || rate_ <= 0.0f) {
        std::memcpy(out_.data(), x.data(), size_t(x.numel()) * sizeof(float));
        return out_;
    }
    const float keep = 1.0f - rate_;
    mask_.assign(size_t(x.numel()), 0.0f);
    for (int64_t i = 0; i < x.numel(); ++i) {
        if (rng_.uniform() >= rate_) mask_[size_t(i)] = 1.0f / keep;
        out_[size_t(i)] = x[size_t(i)] * mask_[size_t(i)];
    }
    return out_;
}

Tensor Dropout::backward(const Tensor& dy) {
    Tensor dx(dy.n(), dy.c(), dy.h(), dy.w());
    if (!last_train_ || rate_ <= 0.0f) {
        std::memcpy(dx.data(), dy.data(), size_t(dy.numel()) * sizeof(float));
        return dx;
    }
    for (int64_t i = 0; i < dy.numel(); ++i) dx[size_t(i)] = dy[size_t(i)] * mask_[size_t(i)];
    return dx;
}

// ---------------------------------------------------------------------------
// Sequential
// ---------------------------------------------------------------------------

const Tensor& Sequential::forward(const Tensor& x, bool train) {
    const Tensor* cur = &x;
    for (auto& l : layers_) cur = &l->forward(*cur, train);
    return *cur;
}

Tensor Sequential::backward(const Tensor& dy) {
    Tensor cur = dy;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) cur = (*it)->backward(cur);
    return cur;
}

void Sequential::collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
    for (size_t i = 0; i < layers_.size(); ++i)
        layers_[i]->collect_params(prefix + "." + std::to_string(i), out);
}

void Sequential::collect_state(const std::string& prefix, std::vector<StateRef>& out) {
    for (size_t i = 0; i < layers_.size(); ++i)
        layers_[i]->collect_state(prefix + "." + std::to_string(i), out);
}

void Sequential::init(Rng& rng) {
    for (auto& l : layers_) l->init(rng);
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

XentResult softmax_xent(const Tensor& logits, const std::vector<int32_t>& targets) {
    const int64_t N = logits.n(), C = logits.c();
    require(int64_t(targets.size()) == N, "softmax_xent: target count mismatch");
    XentResult r;
    r.dlogits = Tensor::matrix(N, C);
    double total = 0.0;
    for (int64_t n = 0; n < N; ++n) {
        const float* row = logits.data() + n * C;
        int32_t t = targets[size_t(n)];
        require(t >= 0 && t < C, "softmax_xent: label out of range");
        float m = row[0];
        int64_t arg = 0;
        for (int64_t c = 1; c < C; ++c)
            if (row[c] > m) {
                m = row[c];
                arg = c;
            }
        if (arg == t) ++r.correct;
        double z = 0.0;
        for (int64_t c = 0; c < C; ++c) z += std::exp(double(row[c] - m));
        total += -(double(row[t] - m) - std::log(z));
        float* drow = r.dlogits.data() + n * C;
        for (int64_t c = 0; c < C; ++c) {
            float p = float(std::exp(double(row[c] - m)) / z);
            drow[c] = (p - (c == t ? 1.0f : 0.0f)) / float(N);
        }
    }
    r.loss = float(total / double(N));
    return r;
}

// ---------------------------------------------------------------------------
// Gradient check
// ---------------------------------------------------------------------------

namespace {

double weighted_sum(const Tensor& y, const std::vector<float>& r) {
    double acc = 0.0;
    for (int64_t i = 0; i < y.numel(); ++i) acc += double(y[size_t(i)]) * double(r[size_t(i)]);
    return acc;
}

}  // namespace

GradCheckResult grad_check_layer(Layer& layer, const Tensor& x, Rng& rng, int probes,
                                 float eps, float tol) {
    Tensor input = x;
    const Tensor& y0 = layer.forward(input, true);
    std::vector<float> r(size_t(y0.numel()));
    for (auto& v : r) v = rng.normal();

    Tensor dy = Tensor(y0.n(), y0.c(), y0.h(), y0.w());
    for (int64_t i = 0; i < dy.numel(); ++i) dy[size_t(i)] = r[size_t(i)];

    std::vector<ParamRef> params;
    layer.collect_params("p", params);
    for (auto& p : params) std::fill(p.grad, p.grad + p.size, 0.0f);
    Tensor dx = layer.backward(dy);

    // Flat coordinate space: input followed by every param array.
    std::vector<float*> vals;
    std::vector<float> grads;
    for (int64_t i = 0; i < input.numel(); ++i) {
        vals.push_back(&input[size_t(i)]);
        grads.push_back(dx[size_t(i)]);
    }
    for (auto& p : params)
        for (int64_t i = 0; i < p.size; ++i) {
            vals.push_back(p.value + i);
            grads.push_back(p.grad[i]);
        }
    const size_t D = vals.size();

    GradCheckResult res;
    for (int probe = 0; probe < probes; ++probe) {
        // Random half-mask of the analytic gradient keeps the directional
        // signal large relative to float32 forward noise.
        std::vector<float> d(D, 0.0f);
        double norm = 0.0;
        for (size_t i = 0; i < D; ++i) {
            if (rng.uniform() < 0.5f) {
                d[i] = grads[i];
                norm += double(grads[i]) * double(grads[i]);
            }
        }
        norm = std::sqrt(norm);
        if (norm < 1e-12) continue;
        double analytic = 0.0;
        for (size_t i = 0; i < D; ++i) {
            d[i] = float(d[i] / norm);
            analytic += double(grads[i]) * double(d[i]);
        }
        auto eval = [&](float step, float sign) {
            for (size_t i = 0; i < D; ++i) *vals[i] += sign * step * d[i];
            double L = weighted_sum(layer.forward(input, true), r);
            for (size_t i = 0; i < D; ++i) *vals[i] -= sign * step * d[i];
            return L;
        };
        // A crossed ReLU kink or a flipped pool argmax biases the quotient at
        // one step size but shrinks linearly with it; a genuinely wrong
        // gradient stays wrong at every step size.
        float best = 1e30f;
        for (float step : {eps, eps * 0.2f, eps * 0.04f, eps * 0.008f}) {
            double fd = (eval(step, 1.0f) - eval(step, -1.0f)) / (2.0 * double(step));
            float rel = float(std::abs(fd - analytic) /
                              std::max({std::abs(fd), std::abs(analytic), 1e-6}));
            best = std::min(best, rel);
            if (best <= tol) break;
        }
        res.max_rel_err = std::max(res.max_rel_err, best);
    }
    res.ok = res.max_rel_err <= tol;
    return res;
}

}  // namespace ssrl
