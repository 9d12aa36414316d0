#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <vector>

#include "ssrl/common.hpp"
#include "ssrl/rng.hpp"

namespace ssrl {

// Dense float32 tensor, NCHW. Vectors are stored as (N, C, 1, 1).
class Tensor {
public:
    Tensor() : dims_{0, 0, 0, 0} {}
    Tensor(int64_t n, int64_t c, int64_t h, int64_t w)
        : dims_{n, c, h, w}, data_(size_t(n * c * h * w), 0.0f) {}
    static Tensor matrix(int64_t n, int64_t c) { return Tensor(n, c, 1, 1); }

    int64_t n() const { return dims_[0]; }
    int64_t c() const { return dims_[1]; }
    int64_t h() const { return dims_[2]; }
    int64_t w() const { return dims_[3]; }
    const std::array<int64_t, 4>& dims() const { return dims_; }
    int64_t numel() const { return int64_t(data_.size()); }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    float& operator[](size_t i) { return data_[i]; }
    float operator[](size_t i) const { return data_[i]; }

    float& at(int64_t n, int64_t c, int64_t h, int64_t w) {
        return data_[size_t(((n * dims_[1] + c) * dims_[2] + h) * dims_[3] + w)];
    }
    float at(int64_t n, int64_t c, int64_t h, int64_t w) const {
        return data_[size_t(((n * dims_[1] + c) * dims_[2] + h) * dims_[3] + w)];
    }

    bool same_shape(const Tensor& o) const { return dims_ == o.dims_; }

    void fill(float v) { std::fill(data_.begin(), data_.end(), v); }
    void zero() { fill(0.0f); }

    void randn(Rng& rng, float stddev = 1.0f) {
        for (auto& x : data_) x = rng.normal() * stddev;
    }

    bool all_finite() const {
        for (float x : data_)
            if (!std::isfinite(x)) return false;
        return true;
    }

    const std::vector<float>& storage() const { return data_; }
    std::vector<float>& storage() { return data_; }

private:
    std::array<int64_t, 4> dims_;
    std::vector<float> data_;
};

inline float max_abs_diff(const Tensor& a, const Tensor& b) {
    require(a.same_shape(b), "max_abs_diff: shape mismatch");
    float m = 0.0f;
    for (int64_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::abs(a[size_t(i)] - b[size_t(i)]));
    return m;
}

}  // namespace ssrl
