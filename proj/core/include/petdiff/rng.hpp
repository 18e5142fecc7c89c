#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "petdiff/errors.hpp"

namespace petdiff {

// splitmix64 finalizer; used to derive independent stream seeds from one master seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (tag + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Deterministic random stream. mt19937_64 has a standard-mandated bit sequence;
// uniform/normal/poisson transforms are implemented here (not via std::*_distribution)
// so draws are identical across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    // Uniform in [0, 1) with 53-bit resolution.
    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    // Uniform in (0, 1]; safe as a log() argument.
    double uniform_pos() {
        return static_cast<double>((gen_() >> 11) + 1) * 0x1.0p-53;
    }

    // Standard normal via Box-Muller (one value per pair of uniforms; no cached spare,
    // so the stream position is a pure function of the number of calls).
    double normal() {
        const double u1 = uniform_pos();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }

    // Poisson by counting unit-exponential arrivals until their sum exceeds lambda.
    // Numerically stable for any lambda >= 0; O(lambda) draws (fine at desk scale).
    std::uint64_t poisson(double lambda) {
        if (!(lambda >= 0.0)) throw ArgumentError("poisson: lambda must be >= 0");
        std::uint64_t k = 0;
        double acc = 0.0;
        for (;;) {
            acc += -std::log(uniform_pos());
            if (acc >= lambda) return k;
            ++k;
        }
    }

    std::uint64_t raw() { return gen_(); }

private:
    std::mt19937_64 gen_;
};

}  // namespace petdiff
