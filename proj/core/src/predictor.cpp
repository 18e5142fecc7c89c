#include "petdiff/predictor.hpp"

#include <cmath>
#include <cstring>

namespace petdiff {

GaussianOracle::GaussianOracle(const NoiseSchedule& schedule, double mu0, double s0, int n)
    : schedule_(schedule), mu0_(mu0), s0_(s0), n_(n) {
    if (!(s0 > 0.0)) throw ArgumentError("GaussianOracle: s0 must be > 0");
}

PredictorOutput GaussianOracle::oracle_eps(const Grid& x_t, int t) const {
    const double ab = schedule_.alpha_bar(t);
    const double c = schedule_.sqrt_alpha_bar(t);
    const double s = schedule_.sqrt_one_minus_alpha_bar(t);
    const double s02 = s0_ * s0_;
    // E[x0 | x_t] for a conjugate Gaussian prior on each pixel.
    const double gain = c * s02 / (ab * s02 + (1.0 - ab));

    PredictorOutput out{Grid(x_t.width(), x_t.height()), Grid(x_t.width(), x_t.height())};
    for (std::size_t i = 0; i < x_t.size(); ++i) {
        const double m = mu0_ + gain * (x_t[i] - c * mu0_);
        out.eps[i] = (x_t[i] - c * m) / s;
    }
    return out;
}

PredictorOutput GaussianOracle::predict(const Grid& x_t, const SliceWindow& window, int t,
                                        const DoseContext& dose) const {
    (void)window;
    (void)dose;
    count_eval();
    return oracle_eps(x_t, t);
}

// ---------------------------------------------------------------------------

TinyNetPredictor::TinyNetPredictor(TinyNetConfig cfg, int n_slices)
    : n_(n_slices), net_(cfg), params_(net_.param_count(), 0.0) {
    if (cfg.in_channels != n_slices + 1)
        throw ConfigError("TinyNetPredictor: in_channels must equal n + 1");
    if (cfg.out_channels != 2)
        throw ConfigError("TinyNetPredictor: out_channels must be 2 (eps, v)");
}

TinyNetPredictor::TinyNetPredictor(TinyNetConfig cfg, int n_slices, std::vector<double> params)
    : TinyNetPredictor(cfg, n_slices) {
    if (params.size() != net_.param_count())
        throw ArgumentError("TinyNetPredictor: parameter count mismatch");
    params_ = std::move(params);
}

std::vector<double> TinyNetPredictor::stack_input(const Grid& x_t, const SliceWindow& window) {
    if (window.width != x_t.width() || x_t.width() != x_t.height())
        throw ArgumentError("TinyNetPredictor: window/x_t spatial shape mismatch");
    const std::size_t plane = static_cast<std::size_t>(x_t.width()) * x_t.height();
    std::vector<double> input(static_cast<std::size_t>(window.n + 1) * plane);
    std::memcpy(input.data(), window.data.data(), window.data.size() * sizeof(double));
    std::memcpy(input.data() + static_cast<std::size_t>(window.n) * plane, x_t.data(),
                plane * sizeof(double));
    return input;
}

PredictorOutput TinyNetPredictor::predict(const Grid& x_t, const SliceWindow& window, int t,
                                          const DoseContext& dose) const {
    if (window.n != n_) throw ArgumentError("TinyNetPredictor: window width != model n");
    count_eval();
    const auto input = stack_input(x_t, window);
    auto out = net_.forward(params_, input, x_t.width(), t, dose);
    return PredictorOutput{std::move(out[0]), std::move(out[1])};
}

}  // namespace petdiff
