#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <limits>

#include <cblas.h>
#include <malloc.h>

#include "ssrl/kernels.hpp"

extern "C" void openblas_set_num_threads(int);

namespace ssrl::kern {

namespace {

Backend g_backend = [] {
    // BLAS stays single-threaded; the image-level OpenMP loops own the cores.
    openblas_set_num_threads(1);
    // Activation buffers churn every step; keep big blocks on the heap so
    // they get recycled instead of hitting mmap page faults.
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    const char* env = std::getenv("SSRL_BACKEND");
    if (env && std::strcmp(env, "serial") == 0) return Backend::Serial;
    return Backend::Parallel;
}();

}  // namespace

Backend active_backend() { return g_backend; }
void set_backend(Backend b) { g_backend = b; }

}  // namespace ssrl::kern

namespace ssrl::kern::parallel {

namespace {

// Batched im2col: cols is (Ci*K*K) x (N*Ho*Wo); the column block of image n
// starts at offset n*Ho*Wo. One big GEMM over the whole batch beats
// thousands of skinny per-image GEMMs by a wide margin on this hardware.
void im2col_batch(const Tensor& x, const ConvGeom& g, int64_t Ho, int64_t Wo, float* cols) {
    const int64_t N = x.n(), Ci = x.c(), H = x.h(), W = x.w(), K = g.kernel;
    const int64_t row_stride = N * Ho * Wo;
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t n = 0; n < N; ++n)
        for (int64_t ci = 0; ci < Ci; ++ci) {
            const float* plane = x.data() + (n * Ci + ci) * H * W;
            for (int64_t kh = 0; kh < K; ++kh)
                for (int64_t kw = 0; kw < K; ++kw) {
                    float* row = cols + ((ci * K + kh) * K + kw) * row_stride + n * Ho * Wo;
                    for (int64_t oh = 0; oh < Ho; ++oh) {
                        int64_t ih = oh * g.stride - g.pad + kh;
                        float* dst = row + oh * Wo;
                        if (ih < 0 || ih >= H) {
                            std::memset(dst, 0, size_t(Wo) * sizeof(float));
                            continue;
                        }
                        const float* src = plane + ih * W;
                        if (g.stride == 1 && kw >= g.pad && kw + Wo - g.pad <= W) {
                            std::memcpy(dst, src + kw - g.pad, size_t(Wo) * sizeof(float));
                            continue;
                        }
                        for (int64_t ow = 0; ow < Wo; ++ow) {
                            int64_t iw = ow * g.stride - g.pad + kw;
                            dst[ow] = (iw >= 0 && iw < W) ? src[iw] : 0.0f;
                        }
                    }
                }
        }
}

void col2im_add_batch(const float* cols, Tensor& dx, const ConvGeom& g, int64_t Ho,
                      int64_t Wo) {
    const int64_t N = dx.n(), Ci = dx.c(), H = dx.h(), W = dx.w(), K = g.kernel;
    const int64_t row_stride = N * Ho * Wo;
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t n = 0; n < N; ++n)
        for (int64_t ci = 0; ci < Ci; ++ci) {
            float* plane = dx.data() + (n * Ci + ci) * H * W;
            for (int64_t kh = 0; kh < K; ++kh)
                for (int64_t kw = 0; kw < K; ++kw) {
                    const float* row =
                        cols + ((ci * K + kh) * K + kw) * row_stride + n * Ho * Wo;
                    for (int64_t oh = 0; oh < Ho; ++oh) {
                        int64_t ih = oh * g.stride - g.pad + kh;
                        if (ih < 0 || ih >= H) continue;
                        float* dst = plane + ih * W;
                        const float* src = row + oh * Wo;
                        for (int64_t ow = 0; ow < Wo; ++ow) {
                            int64_t iw = ow * g.stride - g.pad + kw;
                            if (iw >= 0 && iw < W) dst[iw] += src[ow];
                        }
                    }
                }
        }
}

// GEMM output is (Co) x (N*Ho*Wo); scatter the per-image column blocks back
// into NCHW order (and gather for the backward passes).
void scatter_to_nchw(const float* gemm_out, Tensor& y) {
    const int64_t N = y.n(), Co = y.c(), oHW = y.h() * y.w();
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t co = 0; co < Co; ++co)
        for (int64_t n = 0; n < N; ++n)
            std::memcpy(y.data() + (n * Co + co) * oHW, gemm_out + co * N * oHW + n * oHW,
                        size_t(oHW) * sizeof(float));
}

void gather_from_nchw(const Tensor& dy, float* gemm_in) {
    const int64_t N = dy.n(), Co = dy.c(), oHW = dy.h() * dy.w();
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t co = 0; co < Co; ++co)
        for (int64_t n = 0; n < N; ++n)
            std::memcpy(gemm_in + co * N * oHW + n * oHW, dy.data() + (n * Co + co) * oHW,
                        size_t(oHW) * sizeof(float));
}

thread_local std::vector<float> tl_cols;
thread_local std::vector<float> tl_gemm;

float* workspace(std::vector<float>& buf, int64_t n) {
    if (int64_t(buf.size()) < n) buf.resize(size_t(n));
    return buf.data();
}

void ensure_shape(Tensor& t, int64_t n, int64_t c, int64_t h, int64_t w) {
    if (t.n() == n && t.c() == c && t.h() == h && t.w() == w) return;
    t = Tensor(n, c, h, w);
}

}  // namespace

void conv2d_fwd(const Tensor& x, const Tensor& w, const ConvGeom& g, Tensor& y) {
    const int64_t N = x.n(), Ci = x.c(), H = x.h(), W = x.w();
    const int64_t Co = w.n(), K = g.kernel, CKK = Ci * K * K;
    const int64_t Ho = conv_out_size(H, g), Wo = conv_out_size(W, g), oHW = Ho * Wo;
    ensure_shape(y, N, Co, Ho, Wo);
    float* cols = workspace(tl_cols, CKK * N * oHW);
    float* out = workspace(tl_gemm, Co * N * oHW);
    im2col_batch(x, g, Ho, Wo, cols);
    cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, int(Co), int(N * oHW), int(CKK),
                1.0f, w.data(), int(CKK), cols, int(N * oHW), 0.0f, out, int(N * oHW));
    scatter_to_nchw(out, y);
}

void conv2d_bwd_data(const Tensor& dy, const Tensor& w, const ConvGeom& g, Tensor& dx) {
    const int64_t N = dy.n(), Co = dy.c(), Ho = dy.h(), Wo = dy.w(), oHW = Ho * Wo;
    const int64_t Ci = w.c(), K = g.kernel, CKK = Ci * K * K;
    float* dyg = workspace(tl_gemm, Co * N * oHW);
    float* dcols = workspace(tl_cols, CKK * N * oHW);
    gather_from_nchw(dy, dyg);
    cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, int(CKK), int(N * oHW), int(Co),
                1.0f, w.data(), int(CKK), dyg, int(N * oHW), 0.0f, dcols, int(N * oHW));
    dx.zero();
    col2im_add_batch(dcols, dx, g, Ho, Wo);
}

void conv2d_bwd_weights(const Tensor& x, const Tensor& dy, const ConvGeom& g, Tensor& dw) {
    const int64_t N = x.n(), Ci = x.c();
    const int64_t Co = dy.c(), Ho = dy.h(), Wo = dy.w(), oHW = Ho * Wo;
    const int64_t K = g.kernel, CKK = Ci * K * K;
    float* cols = workspace(tl_cols, CKK * N * oHW);
    float* dyg = workspace(tl_gemm, Co * N * oHW);
    im2col_batch(x, g, Ho, Wo, cols);
    gather_from_nchw(dy, dyg);
    cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, int(Co), int(CKK), int(N * oHW),
                1.0f, dyg, int(N * oHW), cols, int(N * oHW), 1.0f, dw.data(), int(CKK));
}

void bn_fwd_train(const Tensor& x, const std::vector<float>& gamma,
                  const std::vector<float>& beta, std::vector<float>& running_mean,
                  std::vector<float>& running_var, float momentum, float eps,
                  Tensor& y, Tensor& xhat, std::vector<float>& inv_std) {
    const int64_t N = x.n(), C = x.c(), H = x.h(), W = x.w();
    const int64_t HW = H * W, M = N * HW;
    y = Tensor(N, C, H, W);
    xhat = Tensor(N, C, H, W);
    inv_std.assign(size_t(C), 0.0f);
#pragma omp parallel for schedule(static)
    for (int64_t c = 0; c < C; ++c) {
        double sum = 0.0, sq = 0.0;
        for (int64_t n = 0; n < N; ++n) {
            const float* plane = x.data() + (n * C + c) * HW;
            for (int64_t i = 0; i < HW; ++i) {
                double v = plane[i];
                sum += v;
                sq += v * v;
            }
        }
        float mean = float(sum / double(M));
        float var = float(sq / double(M)) - mean * mean;
        if (var < 0.0f) var = 0.0f;
        float istd = 1.0f / std::sqrt(var + eps);
        inv_std[size_t(c)] = istd;
        running_mean[size_t(c)] = momentum * running_mean[size_t(c)] + (1.0f - momentum) * mean;
        running_var[size_t(c)] = momentum * running_var[size_t(c)] + (1.0f - momentum) * var;
        float gsc = gamma[size_t(c)];
        float bsc = beta[size_t(c)];
        for (int64_t n = 0; n < N; ++n) {
            const float* plane = x.data() + (n * C + c) * HW;
            float* xh = xhat.data() + (n * C + c) * HW;
            float* out = y.data() + (n * C + c) * HW;
            for (int64_t i = 0; i < HW; ++i) {
                float v = (plane[i] - mean) * istd;
                xh[i] = v;
                out[i] = gsc * v + bsc;
            }
        }
    }
}

void bn_fwd_eval(const Tensor& x, const std::vector<float>& gamma,
                 const std::vector<float>& beta, const std::vector<float>& running_mean,
                 const std::vector<float>& running_var, float eps, Tensor& y) {
    const int64_t N = x.n(), C = x.c(), HW = x.h() * x.w();
    y = Tensor(x.n(), x.c(), x.h(), x.w());
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c) {
            float istd = 1.0f / std::sqrt(running_var[size_t(c)] + eps);
            float scale = gamma[size_t(c)] * istd;
            float shift = beta[size_t(c)] - scale * running_mean[size_t(c)];
            const float* src = x.data() + (n * C + c) * HW;
            float* dst = y.data() + (n * C + c) * HW;
            for (int64_t i = 0; i < HW; ++i) dst[i] = scale * src[i] + shift;
        }
}

void bn_bwd(const Tensor& dy, const Tensor& xhat, const std::vector<float>& inv_std,
            const std::vector<float>& gamma, Tensor& dx, std::vector<float>& dgamma,
            std::vector<float>& dbeta) {
    const int64_t N = dy.n(), C = dy.c(), H = dy.h(), W = dy.w();
    const int64_t HW = H * W, M = N * HW;
    dx = Tensor(N, C, H, W);
#pragma omp parallel for schedule(static)
    for (int64_t c = 0; c < C; ++c) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int64_t n = 0; n < N; ++n) {
            const float* d = dy.data() + (n * C + c) * HW;
            const float* xh = xhat.data() + (n * C + c) * HW;
            for (int64_t i = 0; i < HW; ++i) {
                sum_dy += d[i];
                sum_dy_xhat += double(d[i]) * double(xh[i]);
            }
        }
        dgamma[size_t(c)] += float(sum_dy_xhat);
        dbeta[size_t(c)] += float(sum_dy);
        float k1 = float(sum_dy / double(M));
        float k2 = float(sum_dy_xhat / double(M));
        float scale = gamma[size_t(c)] * inv_std[size_t(c)];
        for (int64_t n = 0; n < N; ++n) {
            const float* d = dy.data() + (n * C + c) * HW;
            const float* xh = xhat.data() + (n * C + c) * HW;
            float* out = dx.data() + (n * C + c) * HW;
            for (int64_t i = 0; i < HW; ++i) out[i] = scale * (d[i] - k1 - xh[i] * k2);
        }
    }
}

void relu_fwd(const Tensor& x, Tensor& y) {
    y = Tensor(x.n(), x.c(), x.h(), x.w());
    const int64_t n = x.numel();
    const float* src = x.data();
    float* dst = y.data();
#pragma omp parallel for simd schedule(static)
    for (int64_t i = 0; i < n; ++i) dst[i] = src[i] > 0.0f ? src[i] : 0.0f;
}

void relu_bwd(const Tensor& dy, const Tensor& y, Tensor& dx) {
    dx = Tensor(dy.n(), dy.c(), dy.h(), dy.w());
    const int64_t n = dy.numel();
    const float* d = dy.data();
    const float* out = y.data();
    float* dst = dx.data();
#pragma omp parallel for simd schedule(static)
    for (int64_t i = 0; i < n; ++i) dst[i] = out[i] > 0.0f ? d[i] : 0.0f;
}

void maxpool_fwd(const Tensor& x, int64_t kernel, int64_t stride, Tensor& y,
                 std::vector<int32_t>& argmax) {
    const int64_t N = x.n(), C = x.c(), H = x.h(), W = x.w();
    const int64_t Ho = pool_out_size(H, kernel, stride), Wo = pool_out_size(W, kernel, stride);
    y = Tensor(N, C, Ho, Wo);
    argmax.assign(size_t(N * C * Ho * Wo), 0);
#pragma omp parallel for schedule(static)
    for (int64_t nc = 0; nc < N * C; ++nc) {
        const float* plane = x.data() + nc * H * W;
        float* out = y.data() + nc * Ho * Wo;
        int32_t* am = argmax.data() + nc * Ho * Wo;
        for (int64_t oh = 0; oh < Ho; ++oh)
            for (int64_t ow = 0; ow < Wo; ++ow) {
                int64_t h0 = oh * stride, w0 = ow * stride;
                int64_t h1 = std::min(h0 + kernel, H), w1 = std::min(w0 + kernel, W);
                float best = -std::numeric_limits<float>::infinity();
                int32_t best_idx = int32_t(h0 * W + w0);
                for (int64_t h = h0; h < h1; ++h)
                    for (int64_t w = w0; w < w1; ++w) {
                        float v = plane[h * W + w];
                        if (v > best) {
                            best = v;
                            best_idx = int32_t(h * W + w);
                        }
                    }
                out[oh * Wo + ow] = best;
                am[oh * Wo + ow] = best_idx;
            }
    }
}

void maxpool_bwd(const Tensor& dy, const std::vector<int32_t>& argmax, Tensor& dx) {
    const int64_t N = dy.n(), C = dy.c(), oHW = dy.h() * dy.w();
    const int64_t HW = dx.h() * dx.w();
    dx.zero();
#pragma omp parallel for schedule(static)
    for (int64_t nc = 0; nc < N * C; ++nc) {
        const float* d = dy.data() + nc * oHW;
        const int32_t* am = argmax.data() + nc * oHW;
        float* plane = dx.data() + nc * HW;
        for (int64_t i = 0; i < oHW; ++i) plane[am[i]] += d[i];
    }
}

void gap_fwd(const Tensor& x, Tensor& y) {
    const int64_t N = x.n(), C = x.c(), HW = x.h() * x.w();
    y = Tensor(N, C, 1, 1);
#pragma omp parallel for schedule(static)
    for (int64_t nc = 0; nc < N * C; ++nc) {
        const float* plane = x.data() + nc * HW;
        double acc = 0.0;
        for (int64_t i = 0; i < HW; ++i) acc += plane[i];
        y.data()[nc] = float(acc / double(HW));
    }
}

void gap_bwd(const Tensor& dy, int64_t h, int64_t w, Tensor& dx) {
    const int64_t N = dy.n(), C = dy.c(), HW = h * w;
    dx = Tensor(N, C, h, w);
#pragma omp parallel for schedule(static)
    for (int64_t nc = 0; nc < N * C; ++nc) {
        float g = dy.data()[nc] / float(HW);
        float* plane = dx.data() + nc * HW;
        for (int64_t i = 0; i < HW; ++i) plane[i] = g;
    }
}

void dense_fwd(const Tensor& x, const Tensor& w, const std::vector<float>& b, Tensor& y) {
    const int64_t N = x.n(), I = x.c(), O = w.n();
    y = Tensor::matrix(N, O);
    cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, int(N), int(O), int(I), 1.0f,
                x.data(), int(I), w.data(), int(I), 0.0f, y.data(), int(O));
    if (!b.empty()) {
#pragma omp parallel for schedule(static)
        for (int64_t n = 0; n < N; ++n) {
            float* row = y.data() + n * O;
            for (int64_t o = 0; o < O; ++o) row[o] += b[size_t(o)];
        }
    }
}

void dense_bwd_data(const Tensor& dy, const Tensor& w, Tensor& dx) {
    const int64_t N = dy.n(), O = dy.c(), I = w.c();
    dx = Tensor::matrix(N, I);
    cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, int(N), int(I), int(O), 1.0f,
                dy.data(), int(O), w.data(), int(I), 0.0f, dx.data(), int(I));
}

void dense_bwd_weights(const Tensor& x, const Tensor& dy, Tensor& dw, std::vector<float>& db) {
    const int64_t N = x.n(), I = x.c(), O = dy.c();
    cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, int(O), int(I), int(N), 1.0f,
                dy.data(), int(O), x.data(), int(I), 1.0f, dw.data(), int(I));
    if (!db.empty()) {
        for (int64_t n = 0; n < N; ++n) {
            const float* row = dy.data() + n * O;
            for (int64_t o = 0; o < O; ++o) db[size_t(o)] += row[o];
        }
    }
}

}  // namespace ssrl::kern::parallel

namespace ssrl::kern {

#define SSRL_DISPATCH(fn, ...)                           \
    do {                                                 \
        if (active_backend() == Backend::Serial)         \
            serial::fn(__VA_ARGS__);                     \
        else                                             \
            parallel::fn(__VA_ARGS__);                   \
    } while (0)

void conv2d_fwd(const Tensor& x, const Tensor& w, const ConvGeom& g, Tensor& y) {
    SSRL_DISPATCH(conv2d_fwd, x, w, g, y);
}
void conv2d_bwd_data(const Tensor& dy, const Tensor& w, const ConvGeom& g, Tensor& dx) {
    SSRL_DISPATCH(conv2d_bwd_data, dy, w, g, dx);
}
void conv2d_bwd_weights(const Tensor& x, const Tensor& dy, const ConvGeom& g, Tensor& dw) {
    SSRL_DISPATCH(conv2d_bwd_weights, x, dy, g, dw);
}
void bn_fwd_train(const Tensor& x, const std::vector<float>& gamma,
                  const std::vector<float>& beta, std::vector<float>& running_mean,
                  std::vector<float>& running_var, float momentum, float eps,
                  Tensor& y, Tensor& xhat, std::vector<float>& inv_std) {
    SSRL_DISPATCH(bn_fwd_train, x, gamma, beta, running_mean, running_var, momentum, eps, y,
                  xhat, inv_std);
}
void bn_fwd_eval(const Tensor& x, const std::vector<float>& gamma,
                 const std::vector<float>& beta, const std::vector<float>& running_mean,
                 const std::vector<float>& running_var, float eps, Tensor& y) {
    SSRL_DISPATCH(bn_fwd_eval, x, gamma, beta, running_mean, running_var, eps, y);
}
void bn_bwd(const Tensor& dy, const Tensor& xhat, const std::vector<float>& inv_std,
            const std::vector<float>& gamma, Tensor& dx, std::vector<float>& dgamma,
            std::vector<float>& dbeta) {
    SSRL_DISPATCH(bn_bwd, dy, xhat, inv_std, gamma, dx, dgamma, dbeta);
}
void relu_fwd(const Tensor& x, Tensor& y) { SSRL_DISPATCH(relu_fwd, x, y); }
void relu_bwd(const Tensor& dy, const Tensor& y, Tensor& dx) {
    SSRL_DISPATCH(relu_bwd, dy, y, dx);
}
void maxpool_fwd(const Tensor& x, int64_t kernel, int64_t stride, Tensor& y,
                 std::vector<int32_t>& argmax) {
    SSRL_DISPATCH(maxpool_fwd, x, kernel, stride, y, argmax);
}
void maxpool_bwd(const Tensor& dy, const std::vector<int32_t>& argmax, Tensor& dx) {
    SSRL_DISPATCH(maxpool_bwd, dy, argmax, dx);
}
void gap_fwd(const Tensor& x, Tensor& y) { SSRL_DISPATCH(gap_fwd, x, y); }
void gap_bwd(const Tensor& dy, int64_t h, int64_t w, Tensor& dx) {
    SSRL_DISPATCH(gap_bwd, dy, h, w, dx);
}
void dense_fwd(const Tensor& x, const Tensor& w, const std::vector<float>& b, Tensor& y) {
    SSRL_DISPATCH(dense_fwd, x, w, b, y);
}
void dense_bwd_data(const Tensor& dy, const Tensor& w, Tensor& dx) {
    SSRL_DISPATCH(dense_bwd_data, dy, w, dx);
}
void dense_bwd_weights(const Tensor& x, const Tensor& dy, Tensor& dw, std::vector<float>& db) {
    SSRL_DISPATCH(dense_bwd_weights, x, dy, dw, db);
}

#undef SSRL_DISPATCH

}  // namespace ssrl::kern
