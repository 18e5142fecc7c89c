#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <span>

#include "petdiff/grid.hpp"
#include "petdiff/schedule.hpp"
#include "petdiff/tinynet.hpp"
#include "petdiff/volume.hpp"

namespace petdiff {

// Joint output of the noise-and-variance head for one slice: predicted eps and
// the per-pixel interpolation coefficient v (consumed only through the sigma
// interpolation; no range clamp).
struct PredictorOutput {
    Grid eps;
    Grid v;
};

// Epsilon/variance predictor backend. Pure: identical inputs and parameters
// give bit-identical outputs; reentrant for concurrent inference. Implementations
// keep an evaluation counter so samplers can assert their per-slice budget.
class EpsModel {
public:
    virtual ~EpsModel() = default;

    virtual PredictorOutput predict(const Grid& x_t, const SliceWindow& window, int t,
                                    const DoseContext& dose) const = 0;
    virtual int window_slices() const = 0;  // n the backend expects

    std::uint64_t evaluations() const { return evals_.load(std::memory_order_relaxed); }
    void reset_evaluations() const { evals_.store(0, std::memory_order_relaxed); }

protected:
    void count_eval() const { evals_.fetch_add(1, std::memory_order_relaxed); }

private:
    mutable std::atomic<std::uint64_t> evals_{0};
};

// Exact E[eps | x_t] when the per-pixel data distribution is Normal(mu0, s0^2).
// Conditioning window and dose are ignored; v is 0 (posterior-floor variance).
class GaussianOracle final : public EpsModel {
public:
    GaussianOracle(const NoiseSchedule& schedule, double mu0, double s0, int n = 1);

    PredictorOutput predict(const Grid& x_t, const SliceWindow& window, int t,
                            const DoseContext& dose) const override;
    int window_slices() const override { return n_; }

    // The closed form, exposed directly for tests.
    PredictorOutput oracle_eps(const Grid& x_t, int t) const;

private:
    const NoiseSchedule& schedule_;
    double mu0_, s0_;
    int n_;
};

// Trained-network backend: stacks the conditioning window and x_t in the
// channel dimension and runs the convolutional net. Inputs are expected in the
// model's normalized intensity units.
class TinyNetPredictor final : public EpsModel {
public:
    TinyNetPredictor(TinyNetConfig cfg, int n_slices);
    TinyNetPredictor(TinyNetConfig cfg, int n_slices, std::vector<double> params);

    PredictorOutput predict(const Grid& x_t, const SliceWindow& window, int t,
                            const DoseContext& dose) const override;
    int window_slices() const override { return n_; }

    const TinyNet& net() const { return net_; }
    std::span<const double> params() const { return params_; }
    std::span<double> mutable_params() { return params_; }

    // Channel order contract shared with the trainer: window slices first, x_t last.
    static std::vector<double> stack_input(const Grid& x_t, const SliceWindow& window);

private:
    int n_;
    TinyNet net_;
    std::vector<double> params_;
};

}  // namespace petdiff
