#pragma once

#include <utility>
#include <vector>

#include "petdiff/grid.hpp"

namespace petdiff {

enum class ScheduleKind { linear };

// Precomputed forward-process variance schedule over T steps plus every derived
// sequence the trainer and samplers read. Quantities are indexed by the step
// t in [1, T]; alpha_bar(0) == 1 by convention, which makes beta_tilde(1) == 0
// and keeps the reverse posterior defined at t = 1.
//
// Immutable after construction; safe for concurrent reads.
class NoiseSchedule {
public:
    static NoiseSchedule build(ScheduleKind kind, int steps, double beta_start, double beta_end);

    int steps() const { return T_; }

    double beta(int t) const { return beta_[check(t) - 1]; }
    double alpha(int t) const { return alpha_[check(t) - 1]; }
    double beta_tilde(int t) const { return beta_tilde_[check(t) - 1]; }

    // alpha_bar(0) == 1.
    double alpha_bar(int t) const {
        if (t == 0) return 1.0;
        return alpha_bar_[check(t) - 1];
    }

    double sqrt_alpha_bar(int t) const { return t == 0 ? 1.0 : sqrt_ab_[t - 1]; }
    double sqrt_one_minus_alpha_bar(int t) const { return t == 0 ? 0.0 : sqrt_1m_ab_[t - 1]; }

    // x_t = sqrt(1-beta_t) x_{t-1} + sqrt(beta_t) noise   (single forward step)
    Grid forward_step(const Grid& x_prev, int t, const Grid& noise) const;

    // x_t = sqrt(alpha_bar_t) x0 + sqrt(1-alpha_bar_t) eps   (closed-form noising)
    Grid q_sample(const Grid& x0, int t, const Grid& eps) const;

    // True reverse posterior given x0: mean grid and the scalar variance beta_tilde_t.
    std::pair<Grid, double> posterior_params(const Grid& x0, const Grid& x_t, int t) const;

private:
    int check(int t) const {
        if (t < 1 || t > T_) throw ArgumentError("NoiseSchedule: step index out of range");
        return t;
    }

    int T_ = 0;
    std::vector<double> beta_, alpha_, alpha_bar_, beta_tilde_;
    std::vector<double> sqrt_ab_, sqrt_1m_ab_;
};

}  // namespace petdiff
