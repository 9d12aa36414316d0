#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace ssrl {

// Counter-free deterministic RNG (splitmix64). The standard <random>
// distributions are implementation-defined, which breaks byte-identical
// artifact files across toolchains; this generator pins every stream.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    float uniform() { return float(next_u64() >> 40) * 0x1.0p-24f; }

    float uniform(float lo, float hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n), n > 0.
    int64_t uniform_int(int64_t n) {
        return int64_t(next_u64() % uint64_t(n));
    }

    float normal() {
        // Box-Muller; one value per draw keeps the stream position simple.
        float u1 = uniform();
        float u2 = uniform();
        if (u1 < 1e-12f) u1 = 1e-12f;
        return std::sqrt(-2.0f * std::log(u1)) * std::cos(6.28318530717958647692f * u2);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = size_t(uniform_int(int64_t(i)));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Derives an independent stream; (seed, stream ids) fully determine output.
    Rng derive(uint64_t a, uint64_t b = 0, uint64_t c = 0) const {
        uint64_t h = state_;
        for (uint64_t x : {a, b, c}) {
            h ^= x + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
            Rng mix(h);
            h = mix.next_u64();
        }
        return Rng(h);
    }

    uint64_t state() const { return state_; }
    void set_state(uint64_t s) { state_ = s; }

private:
    uint64_t state_;
};

}  // namespace ssrl
