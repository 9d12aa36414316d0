#include <algorithm>
#include <cmath>
#include <limits>

#include "ssrl/kernels.hpp"

// Plain-loop reference implementations. Kept deliberately naive: these are
// the ground truth for the backend parity tests and the kernel benchmark.

namespace ssrl::kern::serial {

void conv2d_fwd(const Tensor& x, const Tensor& w, const ConvGeom& g, Tensor& y) {
    const int64_t N = x.n(), Ci = x.c(), H = x.h(), W = x.w();
    const int64_t Co = w.n(), K = g.kernel;
    const int64_t Ho = conv_out_size(H, g), Wo = conv_out_size(W, g);
    y = Tensor(N, Co, Ho, Wo);
    for (int64_t n = 0; n < N; ++n)
        for (int64_t co = 0; co < Co; ++co)
            for (int64_t oh = 0; oh < Ho; ++oh)
                for (int64_t ow = 0; ow < Wo; ++ow) {
                    float acc = 0.0f;
                    for (int64_t ci = 0; ci < Ci; ++ci)
                        for (int64_t kh = 0; kh < K; ++kh)
                            for (int64_t kw = 0; kw < K; ++kw) {
                                int64_t ih = oh * g.stride - g.pad + kh;
                                int64_t iw = ow * g.stride - g.pad + kw;
                                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                                acc += x.at(n, ci, ih, iw) * w.at(co, ci, kh, kw);
                            }
                    y.at(n, co, oh, ow) = acc;
                }
}

void conv2d_bwd_data(const Tensor& dy, const Tensor& w, const ConvGeom& g, Tensor& dx) {
    const int64_t N = dy.n(), Co = dy.c(), Ho = dy.h(), Wo = dy.w();
    const int64_t Ci = w.c(), K = g.kernel;
    const int64_t H = dx.h(), W = dx.w();
    dx.zero();
    for (int64_t n = 0; n < N; ++n)
        for (int64_t co = 0; co < Co; ++co)
            for (int64_t oh = 0; oh < Ho; ++oh)
                for (int64_t ow = 0; ow < Wo; ++ow) {
                    float g_out = dy.at(n, co, oh, ow);
                    for (int64_t ci = 0; ci < Ci; ++ci)
                        for (int64_t kh = 0; kh < K; ++kh)
                            for (int64_t kw = 0; kw < K; ++kw) {
                                int64_t ih = oh * g.stride - g.pad + kh;
                                int64_t iw = ow * g.stride - g.pad + kw;
                                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                                dx.at(n, ci, ih, iw) += g_out * w.at(co, ci, kh, kw);
                            }
                }
}

void conv2d_bwd_weights(const Tensor& x, const Tensor& dy, const ConvGeom& g, Tensor& dw) {
    const int64_t N = x.n(), Ci = x.c(), H = x.h(), W = x.w();
    const int64_t Co = dy.c(), Ho = dy.h(), Wo = dy.w(), K = g.kernel;
    for (int64_t n = 0; n < N; ++n)
        for (int64_t co = 0; co < Co; ++co)
            for (int64_t oh = 0; oh < Ho; ++oh)
                for (int64_t ow = 0; ow < Wo; ++ow) {
                    float g_out = dy.at(n, co, oh, ow);
                    for (int64_t ci = 0; ci < Ci; ++ci)
                        for (int64_t kh = 0; kh < K; ++kh)
                            for (int64_t kw = 0; kw < K; ++kw) {
                                int64_t ih = oh * g.stride - g.pad + kh;
                                int64_t iw = ow * g.stride - g.pad + kw;
                                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                                dw.at(co, ci, kh, kw) += g_out * x.at(n, ci, ih, iw);
                            }
                }
}

void bn_fwd_train(const Tensor& x, const std::vector<float>& gamma,
                  const std::vector<float>& beta, std::vector<float>& running_mean,
                  std::vector<float>& running_var, float momentum, float eps,
                  Tensor& y, Tensor& xhat, std::vector<float>& inv_std) {
    const int64_t N = x.n(), C = x.c(), H = x.h(), W = x.w();
    const int64_t M = N * H * W;
    y = Tensor(N, C, H, W);
    xhat = Tensor(N, C, H, W);
    inv_std.assign(size_t(C), 0.0f);
    for (int64_t c = 0; c < C; ++c) {
        double sum = 0.0, sq = 0.0;
        for (int64_t n = 0; n < N; ++n)
            for (int64_t h = 0; h < H; ++h)
                for (int64_t w = 0; w < W; ++w) {
                    double v = x.at(n, c, h, w);
                    sum += v;
                    sq += v * v;
                }
        float mean = float(sum / double(M));
        float var = float(sq / double(M)) - mean * mean;
        if (var < 0.0f) var = 0.0f;
        float istd = 1.0f / std::sqrt(var + eps);
        inv_std[size_t(c)] = istd;
        running_mean[size_t(c)] = momentum * running_mean[size_t(c)] + (1.0f - momentum) * mean;
        running_var[size_t(c)] = momentum * running_var[size_t(c)] + (1.0f - momentum) * var;
        for (int64_t n = 0; n < N; ++n)
            for (int64_t h = 0; h < H; ++h)
                for (int64_t w = 0; w < W; ++w) {
                    float xh = (x.at(n, c, h, w) - mean) * istd;
                    xhat.at(n, c, h, w) = xh;
                    y.at(n, c, h, w) = gamma[size_t(c)] * xh + beta[size_t(c)];
                }
    }
}

void bn_fwd_eval(const Tensor& x, const std::vector<float>& gamma,
                 const std::vector<float>& beta, const std::vector<float>& running_mean,
                 const std::vector<float>& running_var, float eps, Tensor& y) {
    const int64_t N = x.n(), C = x.c(), H = x.h(), W = x.w();
    y = Tensor(N, C, H, W);
    for (int64_t c = 0; c < C; ++c) {
        float istd = 1.0f / std::sqrt(running_var[size_t(c)] + eps);
        float scale = gamma[size_t(c)] * istd;
        float shift = beta[size_t(c)] - scale * running_mean[size_t(c)];
        for (int64_t n = 0; n < N; ++n)
            for (int64_t h = 0; h < H; ++h)
                for (int64_t w = 0; w < W; ++w)
                    y.at(n, c, h, w) = scale * x.at(n, c, h, w) + shift;
    }
}

void bn_bwd(const Tensor& dy, const Tensor& xhat, const std::vector<float>& inv_std,
            const std::vector<float>& gamma, Tensor& dx, std::vector<float>& dgamma,
            std::vector<float>& dbeta) {
    const int64_t N = dy.n(), C = dy.c(), H = dy.h(), W = dy.w();
    const int64_t M = N * H * W;
    dx = Tensor(N, C, H, W);
    for (int64_t c = 0; c < C; ++c) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int64_t n = 0; n < N; ++n)
            for (int64_t h = 0; h < H; ++h)
                for (int64_t w = 0; w < W; ++w) {
                    double d = dy.at(n, c, h, w);
                    sum_dy += d;
                    sum_dy_xhat += d * xhat.at(n, c, h, w);
                }
        dgamma[size_t(c)] += float(sum_dy_xhat);
        dbeta[size_t(c)] += float(sum_dy);
        float k1 = float(sum_dy / double(M));
        float k2 = float(sum_dy_xhat / double(M));
        float scale = gamma[size_t(c)] * inv_std[size_t(c)];
        for (int64_t n = 0; n < N; ++n)
            for (int64_t h = 0; h < H; ++h)
                for (int64_t w = 0; w < W; ++w)
                    dx.at(n, c, h, w) =
                        scale * (dy.at(n, c, h, w) - k1 - xhat.at(n, c, h, w) * k2);
    }
}

void relu_fwd(const Tensor& x, Tensor& y) {
    y = Tensor(x.n(), x.c(), x.h(), x.w());
    for (int64_t i = 0; i < x.numel(); ++i) y[size_t(i)] = std::max(0.0f, x[size_t(i)]);
}

void relu_bwd(const Tensor& dy, const Tensor& y, Tensor& dx) {
    dx = Tensor(dy.n(), dy.c(), dy.h(), dy.w());
    for (int64_t i = 0; i < dy.numel(); ++i)
        dx[size_t(i)] = y[size_t(i)] > 0.0f ? dy[size_t(i)] : 0.0f;
}

void maxpool_fwd(const Tensor& x, int64_t kernel, int64_t stride, Tensor& y,
                 std::vector<int32_t>& argmax) {
    const int64_t N = x.n(), C = x.c(), H = x.h(), W = x.w();
    const int64_t Ho = pool_out_size(H, kernel, stride), Wo = pool_out_size(W, kernel, stride);
    y = Tensor(N, C, Ho, Wo);
    argmax.assign(size_t(N * C * Ho * Wo), 0);
    size_t o = 0;
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t oh = 0; oh < Ho; ++oh)
                for (int64_t ow = 0; ow < Wo; ++ow, ++o) {
                    int64_t h0 = oh * stride, w0 = ow * stride;
                    int64_t h1 = std::min(h0 + kernel, H), w1 = std::min(w0 + kernel, W);
                    float best = -std::numeric_limits<float>::infinity();
                    int32_t best_idx = int32_t(h0 * W + w0);
                    for (int64_t h = h0; h < h1; ++h)
                        for (int64_t w = w0; w < w1; ++w) {
                            float v = x.at(n, c, h, w);
                            if (v > best) {
                                best = v;
                                best_idx = int32_t(h * W + w);
                            }
                        }
                    y.at(n, c, oh, ow) = best;
                    argmax[o] = best_idx;
                }
}

void maxpool_bwd(const Tensor& dy, const std::vector<int32_t>& argmax, Tensor& dx) {
    const int64_t N = dy.n(), C = dy.c(), Ho = dy.h(), Wo = dy.w();
    const int64_t HW = dx.h() * dx.w();
    dx.zero();
    size_t o = 0;
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c) {
            float* plane = dx.data() + (n * C + c) * HW;
            for (int64_t i = 0; i < Ho * Wo; ++i, ++o) plane[argmax[o]] += dy[o];
        }
}

void gap_fwd(const Tensor& x, Tensor& y) {
    const int64_t N = x.n(), C = x.c(), HW = x.h() * x.w();
    y = Tensor(N, C, 1, 1);
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c) {
            const float* plane = x.data() + (n * C + c) * HW;
            double acc = 0.0;
            for (int64_t i = 0; i < HW; ++i) acc += plane[i];
            y.at(n, c, 0, 0) = float(acc / double(HW));
        }
}

void gap_bwd(const Tensor& dy, int64_t h, int64_t w, Tensor& dx) {
    const int64_t N = dy.n(), C = dy.c(), HW = h * w;
    dx = Tensor(N, C, h, w);
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c) {
            float g = dy.at(n, c, 0, 0) / float(HW);
            float* plane = dx.data() + (n * C + c) * HW;
            for (int64_t i = 0; i < HW; ++i) plane[i] = g;
        }
}

void dense_fwd(const Tensor& x, const Tensor& w, const std::vector<float>& b, Tensor& y) {
    const int64_t N = x.n(), I = x.c(), O = w.n();
    y = Tensor::matrix(N, O);
    for (int64_t n = 0; n < N; ++n)
        for (int64_t o = 0; o < O; ++o) {
            double acc = b.empty() ? 0.0 : b[size_t(o)];
            const float* xr = x.data() + n * I;
            const float* wr = w.data() + o * I;
            for (int64_t i = 0; i < I; ++i) acc += double(xr[i]) * double(wr[i]);
            y.at(n, o, 0, 0) = float(acc);
        }
}

void dense_bwd_data(const Tensor& dy, const Tensor& w, Tensor& dx) {
    const int64_t N = dy.n(), O = dy.c(), I = w.c();
    dx = Tensor::matrix(N, I);
    for (int64_t n = 0; n < N; ++n)
        for (int64_t o = 0; o < O; ++o) {
            float g = dy.at(n, o, 0, 0);
            const float* wr = w.data() + o * I;
            float* dxr = dx.data() + n * I;
            for (int64_t i = 0; i < I; ++i) dxr[i] += g * wr[i];
        }
}

void dense_bwd_weights(const Tensor& x, const Tensor& dy, Tensor& dw, std::vector<float>& db) {
    const int64_t N = x.n(), I = x.c(), O = dy.c();
    for (int64_t n = 0; n < N; ++n)
        for (int64_t o = 0; o < O; ++o) {
            float g = dy.at(n, o, 0, 0);
            if (!db.empty()) db[size_t(o)] += g;
            const float* xr = x.data() + n * I;
            float* dwr = dw.data() + o * I;
            for (int64_t i = 0; i < I; ++i) dwr[i] += g * xr[i];
        }
}

}  // namespace ssrl::kern::serial
