#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>

#include "bmh/math.hpp"

namespace bmh {

// splitmix64 step, used to derive independent stream seeds from (seed, index).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// Seedable generator with explicit sampling algorithms so draws are identical
// across standard library implementations.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    // [0, 1), 53-bit resolution
    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    // strictly inside (0, 1)
    double uniform_open() {
        return (static_cast<double>(gen_() >> 11) + 0.5) * 0x1.0p-53;
    }

    // Box-Muller
    double normal() {
        const double u1 = uniform_open();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
    }

    // Knuth multiplication method; fine for the small means used here.
    int poisson(double mean) {
        if (mean < 0.0) {
            throw std::invalid_argument("poisson mean must be non-negative");
        }
        if (mean == 0.0) return 0;
        const double limit = std::exp(-mean);
        int k = 0;
        double p = 1.0;
        do {
            ++k;
            p *= uniform_open();
        } while (p > limit);
        return k - 1;
    }

    std::size_t categorical(std::span<const double> probs) {
        const double u = uniform();
        double c = 0.0;
        for (std::size_t i = 0; i < probs.size(); ++i) {
            c += probs[i];
            if (u < c) return i;
        }
        return probs.size() - 1;
    }

    std::uint64_t raw() { return gen_(); }

  private:
    std::mt19937_64 gen_;
};

} // namespace bmh
