#include "petdiff/schedule.hpp"

#include <cmath>

namespace petdiff {

NoiseSchedule NoiseSchedule::build(ScheduleKind kind, int steps, double beta_start,
                                   double beta_end) {
    if (kind != ScheduleKind::linear)
        throw ConfigError("build_schedule: unknown schedule kind");
    if (steps < 1) throw ConfigError("build_schedule: T must be >= 1");
    if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
        throw ConfigError("build_schedule: require 0 < beta_start <= beta_end < 1");

    NoiseSchedule s;
    s.T_ = steps;
    s.beta_.resize(steps);
    if (steps == 1) {
        s.beta_[0] = beta_start;
    } else {
        const double d = (beta_end - beta_start) / static_cast<double>(steps - 1);
        for (int i = 0; i < steps; ++i) s.beta_[i] = beta_start + d * i;
        s.beta_[steps - 1] = beta_end;  // inclusive endpoint, exact
    }

    s.alpha_.resize(steps);
    s.alpha_bar_.resize(steps);
    s.beta_tilde_.resize(steps);
    s.sqrt_ab_.resize(steps);
    s.sqrt_1m_ab_.resize(steps);

    double prod = 1.0;
    for (int i = 0; i < steps; ++i) {
        s.alpha_[i] = 1.0 - s.beta_[i];
        const double prev = prod;  // alpha_bar_{t-1}, with alpha_bar_0 = 1
        prod *= s.alpha_[i];
        s.alpha_bar_[i] = prod;
        s.beta_tilde_[i] = s.beta_[i] * (1.0 - prev) / (1.0 - prod);
        s.sqrt_ab_[i] = std::sqrt(prod);
        s.sqrt_1m_ab_[i] = std::sqrt(1.0 - prod);
    }
    return s;
}

Grid NoiseSchedule::forward_step(const Grid& x_prev, int t, const Grid& noise) const {
    check(t);
    require_same_shape(x_prev, noise, "forward_step");
    const double a = std::sqrt(1.0 - beta(t));
    const double b = std::sqrt(beta(t));
    Grid out(x_prev.width(), x_prev.height());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x_prev[i] + b * noise[i];
    return out;
}

Grid NoiseSchedule::q_sample(const Grid& x0, int t, const Grid& eps) const {
    check(t);
    require_same_shape(x0, eps, "q_sample");
    const double a = sqrt_alpha_bar(t);
    const double b = sqrt_one_minus_alpha_bar(t);
    Grid out(x0.width(), x0.height());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + b * eps[i];
    return out;
}

std::pair<Grid, double> NoiseSchedule::posterior_params(const Grid& x0, const Grid& x_t,
                                                        int t) const {
    check(t);
    require_same_shape(x0, x_t, "posterior_params");
    const double ab_prev = alpha_bar(t - 1);
    const double ab = alpha_bar(t);
    const double coef_xt = std::sqrt(alpha(t)) * (1.0 - ab_prev) / (1.0 - ab);
    const double coef_x0 = std::sqrt(ab_prev) * (1.0 - alpha(t)) / (1.0 - ab);
    Grid mean(x0.width(), x0.height());
    for (std::size_t i = 0; i < mean.size(); ++i)
        mean[i] = coef_xt * x_t[i] + coef_x0 * x0[i];
    return {std::move(mean), beta_tilde(t)};
}

}  // namespace petdiff
