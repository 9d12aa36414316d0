#pragma once

#include <cstdint>
#include <vector>

#include "ssrl/tensor.hpp"

namespace ssrl::kern {

// Two interchangeable kernel backends. Serial is the plain-loop reference
// used by the parity tests and the benchmark; Parallel is the OpenMP +
// BLAS-GEMM path used everywhere else.
enum class Backend { Serial, Parallel };

Backend active_backend();
void set_backend(Backend b);

struct ConvGeom {
    int64_t kernel = 1;
    int64_t stride = 1;
    int64_t pad = 0;
};

inline int64_t conv_out_size(int64_t in, const ConvGeom& g) {
    return (in + 2 * g.pad - g.kernel) / g.stride + 1;
}

// Ceil-mode pooled size; windows are clipped to the input, so cells made
// entirely of padding never occur.
inline int64_t pool_out_size(int64_t in, int64_t kernel, int64_t stride) {
    int64_t a = in - kernel;
    return (a >= 0 ? (a + stride - 1) / stride : 0) + 1;
}

// x: (N, Ci, H, W), w: (Co, Ci, K, K) -> y: (N, Co, Ho, Wo). No bias.
void conv2d_fwd(const Tensor& x, const Tensor& w, const ConvGeom& g, Tensor& y);
void conv2d_bwd_data(const Tensor& dy, const Tensor& w, const ConvGeom& g, Tensor& dx);
// Accumulates into dw.
void conv2d_bwd_weights(const Tensor& x, const Tensor& dy, const ConvGeom& g, Tensor& dw);

// Batch norm over (N, H, W) per channel. Train mode also updates running
// stats in place with `momentum` decay and caches xhat/inv_std for backward.
void bn_fwd_train(const Tensor& x, const std::vector<float>& gamma,
                  const std::vector<float>& beta, std::vector<float>& running_mean,
                  std::vector<float>& running_var, float momentum, float eps,
                  Tensor& y, Tensor& xhat, std::vector<float>& inv_std);
void bn_fwd_eval(const Tensor& x, const std::vector<float>& gamma,
                 const std::vector<float>& beta, const std::vector<float>& running_mean,
                 const std::vector<float>& running_var, float eps, Tensor& y);
void bn_bwd(const Tensor& dy, const Tensor& xhat, const std::vector<float>& inv_std,
            const std::vector<float>& gamma, Tensor& dx, std::vector<float>& dgamma,
            std::vector<float>& dbeta);

void relu_fwd(const Tensor& x, Tensor& y);
// dx = dy where y > 0.
void relu_bwd(const Tensor& dy, const Tensor& y, Tensor& dx);

// Ceil-mode max pooling; argmax holds flat (h*W + w) input offsets.
void maxpool_fwd(const Tensor& x, int64_t kernel, int64_t stride, Tensor& y,
                 std::vector<int32_t>& argmax);
void maxpool_bwd(const Tensor& dy, const std::vector<int32_t>& argmax,
                 Tensor& dx);

// Global spatial average pool, (N, C, H, W) -> (N, C, 1, 1).
void gap_fwd(const Tensor& x, Tensor& y);
void gap_bwd(const Tensor& dy, int64_t h, int64_t w, Tensor& dx);

// x: (N, I), w: (O, I), b: (O) -> y: (N, O).
void dense_fwd(const Tensor& x, const Tensor& w, const std::vector<float>& b, Tensor& y);
void dense_bwd_data(const Tensor& dy, const Tensor& w, Tensor& dx);
// Accumulates into dw/db.
void dense_bwd_weights(const Tensor& x, const Tensor& dy, Tensor& dw, std::vector<float>& db);

}  // namespace ssrl::kern

// Backend entry points, exposed so the parity tests and the kernel benchmark
// can call a specific implementation directly.
namespace ssrl::kern::serial {
void conv2d_fwd(const Tensor& x, const Tensor& w, const ConvGeom& g, Tensor& y);
void conv2d_bwd_data(const Tensor& dy, const Tensor& w, const ConvGeom& g, Tensor& dx);
void conv2d_bwd_weights(const Tensor& x, const Tensor& dy, const ConvGeom& g, Tensor& dw);
void bn_fwd_train(const Tensor& x, const std::vector<float>& gamma,
                  const std::vector<float>& beta, std::vector<float>& running_mean,
                  std::vector<float>& running_var, float momentum, float eps,
                  Tensor& y, Tensor& xhat, std::vector<float>& inv_std);
void bn_fwd_eval(const Tensor& x, const std::vector<float>& gamma,
                 const std::vector<float>& beta, const std::vector<float>& running_mean,
                 const std::vector<float>& running_var, float eps, Tensor& y);
void bn_bwd(const Tensor& dy, const Tensor& xhat, const std::vector<float>& inv_std,
            const std::vector<float>& gamma, Tensor& dx, std::vector<float>& dgamma,
            std::vector<float>& dbeta);
void relu_fwd(const Tensor& x, Tensor& y);
void relu_bwd(const Tensor& dy, const Tensor& y, Tensor& dx);
void maxpool_fwd(const Tensor& x, int64_t kernel, int64_t stride, Tensor& y,
                 std::vector<int32_t>& argmax);
void maxpool_bwd(const Tensor& dy, const std::vector<int32_t>& argmax, Tensor& dx);
void gap_fwd(const Tensor& x, Tensor& y);
void gap_bwd(const Tensor& dy, int64_t h, int64_t w, Tensor& dx);
void dense_fwd(const Tensor& x, const Tensor& w, const std::vector<float>& b, Tensor& y);
void dense_bwd_data(const Tensor& dy, const Tensor& w, Tensor& dx);
void dense_bwd_weights(const Tensor& x, const Tensor& dy, Tensor& dw, std::vector<float>& db);
}  // namespace ssrl::kern::serial

namespace ssrl::kern::parallel {
void conv2d_fwd(const Tensor& x, const Tensor& w, const ConvGeom& g, Tensor& y);
void conv2d_bwd_data(const Tensor& dy, const Tensor& w, const ConvGeom& g, Tensor& dx);
void conv2d_bwd_weights(const Tensor& x, const Tensor& dy, const ConvGeom& g, Tensor& dw);
void bn_fwd_train(const Tensor& x, const std::vector<float>& gamma,
                  const std::vector<float>& beta, std::vector<float>& running_mean,
                  std::vector<float>& running_var, float momentum, float eps,
                  Tensor& y, Tensor& xhat, std::vector<float>& inv_std);
void bn_fwd_eval(const Tensor& x, const std::vector<float>& gamma,
                 const std::vector<float>& beta, const std::vector<float>& running_mean,
                 const std::vector<float>& running_var, float eps, Tensor& y);
void bn_bwd(const Tensor& dy, const Tensor& xhat, const std::vector<float>& inv_std,
            const std::vector<float>& gamma, Tensor& dx, std::vector<float>& dgamma,
            std::vector<float>& dbeta);
void relu_fwd(const Tensor& x, Tensor& y);
void relu_bwd(const Tensor& dy, const Tensor& y, Tensor& dx);
void maxpool_fwd(const Tensor& x, int64_t kernel, int64_t stride, Tensor& y,
                 std::vector<int32_t>& argmax);
void maxpool_bwd(const Tensor& dy, const std::vector<int32_t>& argmax, Tensor& dx);
void gap_fwd(const Tensor& x, Tensor& y);
void gap_bwd(const Tensor& dy, int64_t h, int64_t w, Tensor& dx);
void dense_fwd(const Tensor& x, const Tensor& w, const std::vector<float>& b, Tensor& y);
void dense_bwd_data(const Tensor& dy, const Tensor& w, Tensor& dx);
void dense_bwd_weights(const Tensor& x, const Tensor& dy, Tensor& dw, std::vector<float>& db);
}  // namespace ssrl::kern::parallel
