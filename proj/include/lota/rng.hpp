#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace lota {

// mt19937_64 output is fixed by the standard, but the <random>
// distributions are not, so the sampling helpers are spelled out here to keep
// masks, datasets and shuffles identical across standard libraries.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // Uniform integer in [0, bound), rejection sampled. bound must be > 0.
    uint64_t uniform_index(uint64_t bound) {
        const uint64_t limit = UINT64_MAX - (UINT64_MAX % bound);
        uint64_t x = engine_();
        while (x >= limit) {
            x = engine_();
        }
        return x % bound;
    }

    // Uniform double in [0, 1) with 53 random bits.
    double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Standard normal via Box-Muller; the spare variate is cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform01();
        while (u1 <= 0.0) {
            u1 = uniform01();
        }
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    // In-place Fisher-Yates.
    template <typename Vec>
    void shuffle(Vec & v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(uniform_index(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace lota
