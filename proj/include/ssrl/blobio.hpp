#pragma once

#include <cstdint>
#include <fstream>
#include <string>

#include "ssrl/common.hpp"

namespace ssrl {

// Named float32 blob streams used by checkpoint files (little-endian).
inline void write_named_blob(std::ofstream& f, const std::string& name, const float* data,
                             int64_t n) {
    uint32_t len = uint32_t(name.size());
    uint64_t count = uint64_t(n);
    f.write(reinterpret_cast<const char*>(&len), sizeof(len));
    f.write(name.data(), len);
    f.write(reinterpret_cast<const char*>(&count), sizeof(count));
    f.write(reinterpret_cast<const char*>(data), std::streamsize(count * sizeof(float)));
}

inline void read_named_blob(std::ifstream& f, const std::string& expect_name, float* data,
                            int64_t n) {
    uint32_t len = 0;
    f.read(reinterpret_cast<char*>(&len), sizeof(len));
    std::string name(len, '\0');
    f.read(name.data(), len);
    uint64_t count = 0;
    f.read(reinterpret_cast<char*>(&count), sizeof(count));
    require(f.good(), "corrupt blob stream at " + expect_name);
    require(name == expect_name,
            "blob mismatch: expected " + expect_name + ", found " + name);
    require(count == uint64_t(n), "blob size mismatch for " + name);
    f.read(reinterpret_cast<char*>(data), std::streamsize(count * sizeof(float)));
}

}  // namespace ssrl
