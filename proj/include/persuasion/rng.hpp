#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace persuasion {

// mt19937_64 output is pinned by the standard; the conversions below are
// written out by hand because std distributions differ between libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0) {
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                          0x9e3779b9u};
        eng_.seed(seq);
    }

    std::uint64_t bits() { return eng_(); }

    // (0,1) open on the left so log() is safe
    double uniform() {
        for (;;) {
            const double u = static_cast<double>(eng_() >> 11) * 0x1p-53;
            if (u > 0.0) return u;
        }
    }

    double normal() {
        if (hasSpare_) {
            hasSpare_ = false;
            return spare_;
        }
        const double u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double t = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(t);
        hasSpare_ = true;
        return r * std::cos(t);
    }

    std::size_t index(std::size_t n) {
        auto k = static_cast<std::size_t>(uniform() * static_cast<double>(n));
        return k < n ? k : n - 1;
    }

private:
    std::mt19937_64 eng_;
    bool hasSpare_ = false;
    double spare_ = 0.0;
};

}  // namespace persuasion
