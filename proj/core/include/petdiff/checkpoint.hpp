#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "petdiff/tinynet.hpp"

namespace petdiff {

enum class CheckpointKind : std::uint8_t { eps_predictor = 0, prior_denoiser = 1 };

// Binary checkpoint: fixed header (version byte, kind tag, architecture
// hyperparameters, conditioning-window n, embedding mode, intensity scale)
// followed by a flat float32 little-endian parameter payload.
struct Checkpoint {
    CheckpointKind kind = CheckpointKind::eps_predictor;
    int n_slices = 1;  // conditioning window width the model was trained with
    TinyNetConfig net;
    double intensity_scale = 1.0;
    std::vector<double> params;  // widened from the float32 payload
};

void save_checkpoint(const std::string& path, CheckpointKind kind, int n_slices,
                     const TinyNetConfig& net, double intensity_scale,
                     std::span<const double> params);

Checkpoint load_checkpoint(const std::string& path);

}  // namespace petdiff
