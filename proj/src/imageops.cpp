#include <algorithm>
#include <cmath>
#include <cstring>

#include "ssrl/imageops.hpp"

namespace ssrl {

Tensor image_slice(const Tensor& batch, int64_t idx) {
    Tensor img(1, batch.c(), batch.h(), batch.w());
    std::memcpy(img.data(), batch.data() + idx * img.numel(),
                size_t(img.numel()) * sizeof(float));
    return img;
}

void put_image(Tensor& batch, int64_t idx, const Tensor& img) {
    std::memcpy(batch.data() + idx * img.numel(), img.data(),
                size_t(img.numel()) * sizeof(float));
}

Tensor rot90(const Tensor& img, int quarter) {
    int q = ((quarter % 4) + 4) % 4;
    const int64_t C = img.c(), H = img.h(), W = img.w();
    if (q == 0) return img;
    if (q != 2) require(H == W, "rot90: non-square input would change shape");
    int64_t oh = (q == 2) ? H : W, ow = (q == 2) ? W : H;
    Tensor out(1, C, oh, ow);
    for (int64_t c = 0; c < C; ++c)
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x) {
                float v = img.at(0, c, y, x);
                switch (q) {
                    case 1: out.at(0, c, W - 1 - x, y) = v; break;
                    case 2: out.at(0, c, H - 1 - y, W - 1 - x) = v; break;
                    case 3: out.at(0, c, x, H - 1 - y) = v; break;
                }
            }
    return out;
}

Tensor crop(const Tensor& img, int64_t y0, int64_t x0, int64_t h, int64_t w) {
    require(y0 >= 0 && x0 >= 0 && y0 + h <= img.h() && x0 + w <= img.w(),
            "crop out of bounds");
    Tensor out(1, img.c(), h, w);
    for (int64_t c = 0; c < img.c(); ++c)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) out.at(0, c, y, x) = img.at(0, c, y0 + y, x0 + x);
    return out;
}

Tensor center_crop(const Tensor& img, int64_t side) {
    return crop(img, (img.h() - side) / 2, (img.w() - side) / 2, side, side);
}

Tensor hflip(const Tensor& img) {
    Tensor out(1, img.c(), img.h(), img.w());
    for (int64_t c = 0; c < img.c(); ++c)
        for (int64_t y = 0; y < img.h(); ++y)
            for (int64_t x = 0; x < img.w(); ++x)
                out.at(0, c, y, x) = img.at(0, c, y, img.w() - 1 - x);
    return out;
}

Tensor resize_bilinear(const Tensor& img, int64_t out_h, int64_t out_w) {
    const int64_t C = img.c(), H = img.h(), W = img.w();
    require(out_h >= 1 && out_w >= 1, "resize to empty image");
    if (out_h == H && out_w == W) return img;
    Tensor out(1, C, out_h, out_w);
    const float sy = float(H) / float(out_h), sx = float(W) / float(out_w);
    for (int64_t y = 0; y < out_h; ++y) {
        float fy = (float(y) + 0.5f) * sy - 0.5f;
        int64_t y0 = int64_t(std::floor(fy));
        float wy = fy - float(y0);
        int64_t y1 = std::min(y0 + 1, H - 1);
        y0 = std::clamp(y0, int64_t(0), H - 1);
        for (int64_t x = 0; x < out_w; ++x) {
            float fx = (float(x) + 0.5f) * sx - 0.5f;
            int64_t x0 = int64_t(std::floor(fx));
            float wx = fx - float(x0);
            int64_t x1 = std::min(x0 + 1, W - 1);
            x0 = std::clamp(x0, int64_t(0), W - 1);
            for (int64_t c = 0; c < C; ++c) {
                float top = img.at(0, c, y0, x0) * (1 - wx) + img.at(0, c, y0, x1) * wx;
                float bot = img.at(0, c, y1, x0) * (1 - wx) + img.at(0, c, y1, x1) * wx;
                out.at(0, c, y, x) = top * (1 - wy) + bot * wy;
            }
        }
    }
    return out;
}

Tensor resize_smallest_side(const Tensor& img, int64_t side) {
    const int64_t H = img.h(), W = img.w();
    require(side >= 1, "resize to empty image");
    if (H <= W) {
        int64_t ow = std::max<int64_t>(1, int64_t(std::llround(double(W) * double(side) / double(H))));
        return resize_bilinear(img, side, ow);
    }
    int64_t oh = std::max<int64_t>(1, int64_t(std::llround(double(H) * double(side) / double(W))));
    return resize_bilinear(img, oh, side);
}

Tensor grayscale(const Tensor& img) {
    const int64_t C = img.c(), H = img.h(), W = img.w();
    Tensor out(1, C, H, W);
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
            float m = 0.0f;
            for (int64_t c = 0; c < C; ++c) m += img.at(0, c, y, x);
            m /= float(C);
            for (int64_t c = 0; c < C; ++c) out.at(0, c, y, x) = m;
        }
    return out;
}

bool standardize(Tensor& img, float sigma_floor) {
    const int64_t n = img.numel();
    double sum = 0.0, sq = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        double v = img[size_t(i)];
        sum += v;
        sq += v * v;
    }
    double mean = sum / double(n);
    double var = sq / double(n) - mean * mean;
    if (var < 0.0) var = 0.0;
    double sigma = std::sqrt(var);
    bool clamped = sigma < double(sigma_floor);
    double denom = std::max(sigma, double(sigma_floor));
    for (int64_t i = 0; i < n; ++i)
        img[size_t(i)] = float((double(img[size_t(i)]) - mean) / denom);
    return clamped;
}

Tensor random_area_crop(const Tensor& img, int64_t side, Rng& rng, float area_lo,
                        float area_hi) {
    const int64_t H = img.h(), W = img.w();
    const float area = float(H * W);
    for (int attempt = 0; attempt < 10; ++attempt) {
        float target = area * rng.uniform(area_lo, area_hi);
        float log_ratio = rng.uniform(std::log(3.0f / 4.0f), std::log(4.0f / 3.0f));
        float ratio = std::exp(log_ratio);
        int64_t cw = int64_t(std::lround(std::sqrt(target * ratio)));
        int64_t ch = int64_t(std::lround(std::sqrt(target / ratio)));
        if (cw < 1 || ch < 1 || cw > W || ch > H) continue;
        int64_t y0 = ch == H ? 0 : rng.uniform_int(H - ch + 1);
        int64_t x0 = cw == W ? 0 : rng.uniform_int(W - cw + 1);
        return resize_bilinear(crop(img, y0, x0, ch, cw), side, side);
    }
    int64_t s = std::min(H, W);
    return resize_bilinear(center_crop(img, s), side, side);
}

Tensor color_jitter(const Tensor& img, Rng& rng, float amount) {
    const int64_t C = img.c(), H = img.h(), W = img.w();
    Tensor out = img;
    // brightness
    float fb = rng.uniform(1.0f - amount, 1.0f + amount);
    for (int64_t i = 0; i < out.numel(); ++i) out[size_t(i)] *= fb;
    // contrast: blend toward the global mean
    float fc = rng.uniform(1.0f - amount, 1.0f + amount);
    double mean = 0.0;
    for (int64_t i = 0; i < out.numel(); ++i) mean += out[size_t(i)];
    mean /= double(out.numel());
    for (int64_t i = 0; i < out.numel(); ++i)
        out[size_t(i)] = float(mean + (out[size_t(i)] - mean) * fc);
    // saturation: blend toward per-pixel gray
    float fs = rng.uniform(1.0f - amount, 1.0f + amount);
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
            float g = 0.0f;
            for (int64_t c = 0; c < C; ++c) g += out.at(0, c, y, x);
            g /= float(C);
            for (int64_t c = 0; c < C; ++c)
                out.at(0, c, y, x) = g + (out.at(0, c, y, x) - g) * fs;
        }
    for (int64_t i = 0; i < out.numel(); ++i)
        out[size_t(i)] = std::clamp(out[size_t(i)], 0.0f, 1.0f);
    return out;
}

}  // namespace ssrl
