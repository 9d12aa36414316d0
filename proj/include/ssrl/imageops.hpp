#pragma once

#include "ssrl/rng.hpp"
#include "ssrl/tensor.hpp"

namespace ssrl {

// All images are (1, C, H, W) float tensors with channel range [0, 1].

Tensor image_slice(const Tensor& batch, int64_t idx);
void put_image(Tensor& batch, int64_t idx, const Tensor& img);

// Counterclockwise rotation by quarter * 90 degrees; square input required
// for quarter in {1, 3}.
Tensor rot90(const Tensor& img, int quarter);

Tensor crop(const Tensor& img, int64_t y0, int64_t x0, int64_t h, int64_t w);
Tensor center_crop(const Tensor& img, int64_t side);
Tensor hflip(const Tensor& img);

Tensor resize_bilinear(const Tensor& img, int64_t out_h, int64_t out_w);
// Aspect-preserving resize so the smallest side equals `side`.
Tensor resize_smallest_side(const Tensor& img, int64_t side);

// Channel-average gray replicated back to the original channel count.
Tensor grayscale(const Tensor& img);

// Zero mean, unit variance over all pixels and channels; sigma is clamped
// below by sigma_floor so constant patches stay finite. Returns true when the
// clamp fired.
bool standardize(Tensor& img, float sigma_floor = 1e-6f);

// Inception-style random crop: area fraction in [area_lo, area_hi], aspect
// ratio in [3/4, 4/3], resized to (side, side).
Tensor random_area_crop(const Tensor& img, int64_t side, Rng& rng, float area_lo = 0.08f,
                        float area_hi = 1.0f);

// Brightness/contrast/saturation jitter, each strength +-amount, then clamp
// to [0, 1].
Tensor color_jitter(const Tensor& img, Rng& rng, float amount = 0.4f);

}  // namespace ssrl
