#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "petdiff/predictor.hpp"
#include "petdiff/schedule.hpp"
#include "petdiff/volume.hpp"

namespace petdiff {

struct TrainConfig {
    int batch = 4;
    int steps = 500;
    double lr = 1e-4;
    double lambda_vlb = 1e-3;
    int n = 31;                      // conditioning window width
    std::vector<double> fractions = {0.01, 0.02, 0.05, 0.10, 0.25, 0.50};
    std::uint64_t seed = 0;
    double intensity_scale = 1.0;    // activity units per model unit
    int threads = 1;

    void validate() const;
};

struct LossReport {
    double loss_simple = 0.0;
    double loss_vlb = 0.0;
    double total = 0.0;
};

// Aligned (full-count, degraded-at-each-fraction) volume pairs.
class PairDataset {
public:
    struct Entry {
        Volume3D full;
        std::vector<double> fractions;
        std::vector<Volume3D> degraded;  // parallel to fractions
    };

    static PairDataset build(std::vector<Volume3D> fulls, std::span<const double> fractions,
                             std::uint64_t seed);

    const std::vector<Entry>& entries() const { return entries_; }
    bool empty() const { return entries_.empty(); }

private:
    std::vector<Entry> entries_;
};

struct TrainSample {
    Grid x0;             // full-count center slice (activity units)
    SliceWindow window;  // degraded n-slice window at the same index
    DoseContext dose;    // degraded volume's dose
};

// Uniformly samples a volume pair, a fraction, and a slice index.
TrainSample sample_training_pair(const PairDataset& dataset, Rng& rng, int n);

// One assembled batch item: sample plus its diffusion step and noise draw.
struct TrainItem {
    TrainSample sample;
    int t = 1;
    Grid eps;
};

std::vector<TrainItem> assemble_batch(const PairDataset& dataset, Rng& rng,
                                      const TrainConfig& config, int T);

// Epsilon loss plus the learned-variance term:
//   loss_simple = mean((eps - eps_hat)^2)
//   loss_vlb    = mean KL( N(mu_q, beta_tilde) || N(mu_theta, sigma^2(v)) )
// with the mean difference inside the KL held fixed (no gradient through
// mu_theta in the variance term). Inputs are used as given; the training loop
// normalizes activities by intensity_scale before calling.
LossReport compute_loss(const NoiseSchedule& schedule, const EpsModel& model,
                        const Grid& x0, const SliceWindow& window, const DoseContext& dose,
                        int t, const Grid& eps, double lambda_vlb);

// Same objective, evaluated against a TinyNet with explicit parameters and
// accumulating d(total)/d(params) into grad.
LossReport loss_and_gradient(const NoiseSchedule& schedule, const TinyNet& net,
                             std::span<const double> params, const Grid& x0,
                             const SliceWindow& window, const DoseContext& dose, int t,
                             const Grid& eps, double lambda_vlb, std::span<double> grad);

// Bias-corrected adaptive moment optimizer.
struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::vector<double> m, v;
    std::uint64_t step = 0;

    explicit AdamState(std::size_t count) : m(count, 0.0), v(count, 0.0) {}
};

void adam_update(std::span<double> params, std::span<const double> grad, AdamState& state,
                 const AdamConfig& config);

// One optimization step over an assembled batch. The report reflects pre-update
// losses averaged over the batch. Deterministic given (params, batch order).
LossReport train_step(const NoiseSchedule& schedule, const TinyNet& net,
                      std::span<double> params, AdamState& adam,
                      const std::vector<TrainItem>& batch, const TrainConfig& config,
                      std::uint64_t step_index);

// Full loop: assembles batches from the dataset, steps the optimizer, and
// appends `step,loss_simple,loss_vlb,total,wall_ms` rows to log_path if given.
LossReport train_loop(const NoiseSchedule& schedule, const TinyNet& net,
                      std::span<double> params, const PairDataset& dataset,
                      const TrainConfig& config,
                      const std::optional<std::string>& log_path = std::nullopt);

}  // namespace petdiff
