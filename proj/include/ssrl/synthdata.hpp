#pragma once

#include <cstdint>
#include <string>

#include "ssrl/tensor.hpp"

namespace ssrl {

// Procedural 10-class shape/texture dataset used as the desk-scale benchmark
// corpus. Classes differ in oriented structure (stripe angle, rings vs
// spokes, wedge direction) rather than color statistics, and every image
// carries a brightness-gradient orientation cue. Written as a
// directory-of-class-folders PPM tree: root/{train,val}/class_N/img_NNNNN.ppm.
void generate_synth_dataset(const std::string& root, int side, int per_class_train,
                            int per_class_val, uint64_t seed);

// One rendered image, exposed for tests.
Tensor render_synth_image(int class_id, int side, uint64_t seed);

inline constexpr int kSynthClasses = 10;

}  // namespace ssrl
