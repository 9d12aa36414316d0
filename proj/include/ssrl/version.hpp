#pragma once

namespace ssrl {
inline constexpr const char* kVersion = "0.1.0";
}
