#pragma once

#include <cmath>
#include <vector>

#include "petdiff/errors.hpp"

namespace petdiff {

// Injected-dose conditioning context. dose_bq is the administered dose in
// Becquerel; count_fraction rides along for the alternative embedding mode.
struct DoseContext {
    double dose_bq = 0.0;
    double count_fraction = 1.0;
};

enum class EmbeddingMode { paper, fraction };

// Multi-frequency sinusoidal encoding of a scalar: geometric divisor ladder
// 1 .. 1e4, first half sine, second half cosine. len must be even and >= 4.
inline std::vector<double> sinusoidal_encoding(double u, int len) {
    if (len < 4 || len % 2 != 0)
        throw ConfigError("sinusoidal_encoding: length must be even and >= 4");
    const int half = len / 2;
    std::vector<double> enc(len);
    for (int i = 0; i < half; ++i) {
        const double divisor = std::pow(10000.0, static_cast<double>(i) / (half - 1));
        enc[i] = std::sin(u / divisor);
        enc[half + i] = std::cos(u / divisor);
    }
    return enc;
}

// Pre-affine conditioning encoding for (t, dose) under the given mode.
//   paper:    encode(t + sin(dose_bq) + cos(dose_bq))
//   fraction: encode(t) + encode(1000 * count_fraction)
inline std::vector<double> condition_encoding(int t, const DoseContext& dose,
                                              EmbeddingMode mode, int len) {
    if (!(dose.dose_bq > 0.0)) throw ArgumentError("condition_encoding: dose_bq must be > 0");
    switch (mode) {
        case EmbeddingMode::paper: {
            const double u =
                static_cast<double>(t) + std::sin(dose.dose_bq) + std::cos(dose.dose_bq);
            return sinusoidal_encoding(u, len);
        }
        case EmbeddingMode::fraction: {
            auto enc = sinusoidal_encoding(static_cast<double>(t), len);
            const auto frac = sinusoidal_encoding(1000.0 * dose.count_fraction, len);
            for (int i = 0; i < len; ++i) enc[i] += frac[i];
            return enc;
        }
    }
    throw ConfigError("condition_encoding: unknown embedding mode");
}

}  // namespace petdiff
