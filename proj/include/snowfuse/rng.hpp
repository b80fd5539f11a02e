#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>

namespace snowfuse {

/// Seeded generator with distributions defined here rather than by the
/// standard library, so sequences are identical across toolchains.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    std::size_t index(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)); }

    double normal() {
        // Box-Muller; 1 - u keeps the log argument away from zero
        const double u1 = 1.0 - uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    template <typename It>
    void shuffle(It first, It last) {
        for (auto n = last - first; n > 1; --n) {
            const auto j = static_cast<decltype(n)>(index(static_cast<std::size_t>(n)));
            std::iter_swap(first + (n - 1), first + j);
        }
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace snowfuse
