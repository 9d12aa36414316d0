#pragma once

#include <stdexcept>
#include <string>

namespace ssrl {

// Thrown for invalid user input: bad specs, malformed files, unusable configs.
struct UsageError : std::runtime_error {
    explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown when a computation goes bad at runtime (divergence, corrupt state).
struct ComputeError : std::runtime_error {
    explicit ComputeError(const std::string& msg) : std::runtime_error(msg) {}
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw UsageError(msg);
}

}  // namespace ssrl
