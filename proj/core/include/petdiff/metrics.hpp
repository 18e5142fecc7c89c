#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "petdiff/volume.hpp"

namespace petdiff {

// Conventions (stated in every CSV report header): PSNR peak is the masked
// reference maximum, capped at 300 dB for the identity case; NRMSE is
// normalized by the reference L2 norm over the mask; SSIM is slice-wise 2D
// with an 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03, dynamic
// range = masked reference peak, evaluated at window centers inside the mask.
struct MetricsReport {
    double psnr_db = 0.0;
    double nrmse = 0.0;
    double ssim = 0.0;
    std::size_t mask_voxels = 0;
    double z_tv = 0.0;           // mean absolute inter-slice difference of the test volume
    double activity_ratio = 0.0;  // total activity of test over reference
};

inline constexpr double kPsnrCapDb = 300.0;

// Voxels of the ground-truth reference strictly above threshold (default 0).
std::vector<std::uint8_t> mask_black(const Volume3D& ref, double threshold = 0.0);

double psnr(const Volume3D& ref, const Volume3D& test, const std::vector<std::uint8_t>& mask);
double nrmse(const Volume3D& ref, const Volume3D& test, const std::vector<std::uint8_t>& mask);
double ssim(const Volume3D& ref, const Volume3D& test, const std::vector<std::uint8_t>& mask);

// Mean over adjacent slice pairs of the mean absolute voxel difference.
double z_consistency(const Volume3D& vol);

// (sum(test) - sum(ref)) / sum(ref)
double activity_error(const Volume3D& ref, const Volume3D& test);

MetricsReport evaluate_volume(const Volume3D& ref, const Volume3D& test);

// CSV helpers: a `#` convention line, then the column header.
std::string metrics_csv_preamble();
std::string metrics_csv_row(const std::string& volume_id, double fraction,
                            const MetricsReport& r);

}  // namespace petdiff
