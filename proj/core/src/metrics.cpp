#include "petdiff/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "petdiff/errors.hpp"

namespace petdiff {

namespace {

void require_shapes(const Volume3D& ref, const Volume3D& test, const char* where) {
    if (ref.width != test.width || ref.slices != test.slices)
        throw ArgumentError(std::string(where) + ": volume shapes differ");
}

double masked_peak(const Volume3D& ref, const std::vector<std::uint8_t>& mask) {
    double peak = 0.0;
    for (std::size_t i = 0; i < ref.data.size(); ++i)
        if (mask[i]) peak = std::max(peak, static_cast<double>(ref.data[i]));
    return peak;
}

}  // namespace

std::vector<std::uint8_t> mask_black(const Volume3D& ref, double threshold) {
    ref.validate("mask_black");
    std::vector<std::uint8_t> mask(ref.data.size());
    std::size_t count = 0;
    for (std::size_t i = 0; i < ref.data.size(); ++i) {
        mask[i] = ref.data[i] > threshold ? 1 : 0;
        count += mask[i];
    }
    if (count == 0) throw EvaluationError("mask_black: reference is entirely black");
    return mask;
}

double psnr(const Volume3D& ref, const Volume3D& test, const std::vector<std::uint8_t>& mask) {
    require_shapes(ref, test, "psnr");
    if (mask.size() != ref.data.size()) throw ArgumentError("psnr: mask size mismatch");
    double mse = 0.0, peak = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < ref.data.size(); ++i) {
        if (!mask[i]) continue;
        const double d = static_cast<double>(test.data[i]) - ref.data[i];
        mse += d * d;
        peak = std::max(peak, static_cast<double>(ref.data[i]));
        ++count;
    }
    if (count == 0) throw EvaluationError("psnr: empty mask");
    mse /= static_cast<double>(count);
    if (mse == 0.0) return kPsnrCapDb;
    return std::min(kPsnrCapDb, 10.0 * std::log10(peak * peak / mse));
}

double nrmse(const Volume3D& ref, const Volume3D& test, const std::vector<std::uint8_t>& mask) {
    require_shapes(ref, test, "nrmse");
    if (mask.size() != ref.data.size()) throw ArgumentError("nrmse: mask size mismatch");
    double err2 = 0.0, ref2 = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < ref.data.size(); ++i) {
        if (!mask[i]) continue;
        const double d = static_cast<double>(test.data[i]) - ref.data[i];
        err2 += d * d;
        ref2 += static_cast<double>(ref.data[i]) * ref.data[i];
        ++count;
    }
    if (count == 0) throw EvaluationError("nrmse: empty mask");
    if (ref2 == 0.0) throw EvaluationError("nrmse: reference norm is zero over the mask");
    return std::sqrt(err2) / std::sqrt(ref2);
}

double ssim(const Volume3D& ref, const Volume3D& test, const std::vector<std::uint8_t>& mask) {
    require_shapes(ref, test, "ssim");
    if (mask.size() != ref.data.size()) throw ArgumentError("ssim: mask size mismatch");

    constexpr int kRadius = 5;  // 11x11 window
    constexpr double kSigma = 1.5;
    constexpr double kK1 = 0.01, kK2 = 0.03;

    // Normalized Gaussian window.
    double wsum = 0.0;
    double win[11][11];
    for (int dy = -kRadius; dy <= kRadius; ++dy)
        for (int dx = -kRadius; dx <= kRadius; ++dx) {
            const double w = std::exp(-0.5 * (dy * dy + dx * dx) / (kSigma * kSigma));
            win[dy + kRadius][dx + kRadius] = w;
            wsum += w;
        }
    for (auto& row : win)
        for (auto& w : row) w /= wsum;

    const double peak = masked_peak(ref, mask);
    if (peak <= 0.0) throw EvaluationError("ssim: masked reference peak is zero");
    const double c1 = (kK1 * peak) * (kK1 * peak);
    const double c2 = (kK2 * peak) * (kK2 * peak);

    const int W = ref.width;
    double slice_acc = 0.0;
    int slices_used = 0;
    for (int s = 0; s < ref.slices; ++s) {
        const std::size_t base = static_cast<std::size_t>(s) * W * W;
        double acc = 0.0;
        std::size_t centers = 0;
        for (int y = kRadius; y < W - kRadius; ++y) {
            for (int x = kRadius; x < W - kRadius; ++x) {
                if (!mask[base + static_cast<std::size_t>(y) * W + x]) continue;
                double mx = 0.0, my = 0.0;
                for (int dy = -kRadius; dy <= kRadius; ++dy)
                    for (int dx = -kRadius; dx <= kRadius; ++dx) {
                        const std::size_t idx =
                            base + static_cast<std::size_t>(y + dy) * W + (x + dx);
                        const double w = win[dy + kRadius][dx + kRadius];
                        mx += w * ref.data[idx];
                        my += w * test.data[idx];
                    }
                double vx = 0.0, vy = 0.0, cxy = 0.0;
                for (int dy = -kRadius; dy <= kRadius; ++dy)
                    for (int dx = -kRadius; dx <= kRadius; ++dx) {
                        const std::size_t idx =
                            base + static_cast<std::size_t>(y + dy) * W + (x + dx);
                        const double w = win[dy + kRadius][dx + kRadius];
                        const double ax = ref.data[idx] - mx;
                        const double ay = test.data[idx] - my;
                        vx += w * ax * ax;
                        vy += w * ay * ay;
                        cxy += w * ax * ay;
                    }
                acc += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) /
                       ((mx * mx + my * my + c1) * (vx + vy + c2));
                ++centers;
            }
        }
        if (centers > 0) {
            slice_acc += acc / static_cast<double>(centers);
            ++slices_used;
        }
    }
    if (slices_used == 0)
        throw EvaluationError("ssim: no window centers inside the mask (volume too small?)");
    return slice_acc / static_cast<double>(slices_used);
}

double z_consistency(const Volume3D& vol) {
    if (vol.slices < 2) throw ArgumentError("z_consistency: need at least 2 slices");
    const std::size_t plane = static_cast<std::size_t>(vol.width) * vol.width;
    double acc = 0.0;
    for (int s = 0; s + 1 < vol.slices; ++s) {
        const float* a = vol.data.data() + static_cast<std::size_t>(s) * plane;
        const float* b = a + plane;
        double d = 0.0;
        for (std::size_t i = 0; i < plane; ++i)
            d += std::abs(static_cast<double>(b[i]) - a[i]);
        acc += d / static_cast<double>(plane);
    }
    return acc / static_cast<double>(vol.slices - 1);
}

double activity_error(const Volume3D& ref, const Volume3D& test) {
    require_shapes(ref, test, "activity_error");
    const double sr = ref.total_activity();
    if (sr == 0.0) throw EvaluationError("activity_error: reference total activity is zero");
    return (test.total_activity() - sr) / sr;
}

MetricsReport evaluate_volume(const Volume3D& ref, const Volume3D& test) {
    const auto mask = mask_black(ref);
    MetricsReport r;
    r.psnr_db = psnr(ref, test, mask);
    r.nrmse = nrmse(ref, test, mask);
    r.ssim = ssim(ref, test, mask);
    r.mask_voxels = 0;
    for (auto m : mask) r.mask_voxels += m;
    r.z_tv = test.slices >= 2 ? z_consistency(test) : 0.0;
    const double sr = ref.total_activity();
    r.activity_ratio = sr > 0.0 ? test.total_activity() / sr : 0.0;
    return r;
}

std::string metrics_csv_preamble() {
    return "# psnr: peak = masked reference max, cap 300 dB; nrmse: reference-L2 normalized "
           "over mask; ssim: slice-wise 2D, 11x11 gaussian sigma 1.5, K1=0.01 K2=0.03, "
           "range = masked reference peak\n"
           "volume_id,fraction,psnr_db,nrmse,ssim,z_tv,activity_ratio,mask_voxels\n";
}

std::string metrics_csv_row(const std::string& volume_id, double fraction,
                            const MetricsReport& r) {
    std::ostringstream os;
    os << volume_id << ',' << fraction << ',' << r.psnr_db << ',' << r.nrmse << ',' << r.ssim
       << ',' << r.z_tv << ',' << r.activity_ratio << ',' << r.mask_voxels << '\n';
    return os.str();
}

}  // namespace petdiff
