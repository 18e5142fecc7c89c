#pragma once

#include <optional>
#include <string>
#include <vector>

#include "petdiff/tinynet.hpp"
#include "petdiff/trainer.hpp"
#include "petdiff/volume.hpp"

namespace petdiff {

// Denoised-prior provider: either a trained dose-conditioned mini-denoiser or a
// deterministic Gaussian-smoothing fallback. Maps a volume to one of identical
// shape and metadata with non-negative values.
struct PriorBackend {
    enum class Kind { trained, smoothing };
    Kind kind = Kind::smoothing;

    // smoothing
    double sigma_mm = 0.0;

    // trained
    int n = 1;
    TinyNetConfig net_cfg;
    std::vector<double> params;
    double intensity_scale = 1.0;

    static PriorBackend make_smoothing(double sigma_mm);
};

// Separable Gaussian blur along all three axes, sigma given in millimetres and
// converted per axis via voxel_size_mm. The window is clamped to the volume
// and its weights renormalized, so constants are preserved exactly and total
// activity is preserved wherever the support stays off the boundary.
Volume3D smooth_prior(const Volume3D& vol, double sigma_mm);

// Supervised MSE regression from an n-slice degraded window plus the dose
// embedding to the full-count center slice; the predictor net shape with one
// output channel. lambda_vlb in the config is ignored.
PriorBackend train_denoiser(const NoiseSchedule& schedule, const PairDataset& dataset,
                            const TrainConfig& config,
                            const std::optional<std::string>& log_path = std::nullopt);

Volume3D denoise(const PriorBackend& backend, const Volume3D& vol);

}  // namespace petdiff
