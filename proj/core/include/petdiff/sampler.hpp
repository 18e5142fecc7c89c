#pragma once

#include <cstdint>
#include <vector>

#include "petdiff/predictor.hpp"
#include "petdiff/schedule.hpp"
#include "petdiff/volume.hpp"

namespace petdiff {

// Reverse-process configuration. t_prime is the starting step the noised prior
// is placed at; the plan strides num_steps sub-steps down from there, inserting
// a stochastic (DDPM) sub-step every ddpm_every positions.
struct SamplerConfig {
    int num_steps = 25;
    int ddpm_every = 5;
    int t_prime = 500;
    double eta = 0.0;          // DDIM stochasticity for the DDIM-kind sub-steps
    bool fix_latents = true;   // one (eps_a, eps_b) pair for the whole volume
    bool dual_noise = true;    // average two branches at the first sub-step
    bool fix_step_noise = true;  // one per-sub-step z stream for the whole volume
    bool use_prior = true;     // start from the noised prior instead of pure noise
    std::uint64_t seed_eps_a = 1;
    std::uint64_t seed_eps_b = 2;
    std::uint64_t seed_z = 3;
    double intensity_scale = 1.0;  // model working units = activity / scale
    int threads = 1;

    void validate(const NoiseSchedule& schedule) const;
};

struct SubStep {
    int t = 0;
    int t_prev = 0;
    enum class Kind { ddim, ddpm } kind = Kind::ddim;
};

// num_steps timesteps uniformly strided over [1, t_prime], descending; 1-based
// position i is DDPM-kind when i % ddpm_every == 0; the final sub-step lands on
// t_prev = 0 and is always noise-free.
std::vector<SubStep> plan_substeps(const SamplerConfig& config, const NoiseSchedule& schedule);

// mu_theta: reverse-posterior mean parameterized by the predicted noise.
Grid mean_from_eps(const NoiseSchedule& schedule, const Grid& x_t, int t, const Grid& eps_hat);

// Learned log-variance interpolation between beta_t and the posterior floor
// beta_tilde_t; returns sigma. beta_tilde(1) == 0 is floored at 1e-20 (the
// terminal no-noise rule makes the value unused in practice).
Grid sigma_from_v(const NoiseSchedule& schedule, const Grid& v, int t);

// Floor shared by sigma_from_v and the trainer's variance term.
inline constexpr double kLogVarianceFloor = 1e-20;

// Single stochastic reverse step: mu_theta + sigma_from_v * z. No noise when
// t_prev == 0 (final sub-step).
Grid ddpm_step(const NoiseSchedule& schedule, const Grid& x_t, const PredictorOutput& out,
               int t, int t_prev, const Grid& z);

// Generalized spaced step through the predicted clean image; eta in [0, 1]
// interpolates deterministic (0) to posterior-matched stochastic (1).
// Negative values under square roots are clamped to 0 and counted.
Grid ddim_step(const NoiseSchedule& schedule, const Grid& x_t, const PredictorOutput& out,
               int t, int t_prev, double eta, const Grid& z,
               std::uint64_t* sqrt_clamps = nullptr);

// DDPM-kind sub-step of the hybrid plan: the stochastic jump on the respaced
// pair (t -> t_prev), with the noise magnitude taken from the learned
// interpolation on the respaced schedule. Identical to ddpm_step when
// t_prev == t - 1.
Grid hybrid_ddpm_substep(const NoiseSchedule& schedule, const Grid& x_t,
                         const PredictorOutput& out, int t, int t_prev, const Grid& z,
                         std::uint64_t* sqrt_clamps = nullptr);

struct SampleStats {
    std::uint64_t model_evals = 0;
    std::uint64_t sqrt_clamps = 0;
    int slices = 0;
    double evals_per_slice() const {
        return slices > 0 ? static_cast<double>(model_evals) / slices : 0.0;
    }
};

struct SampleResult {
    Volume3D volume;
    SampleStats stats;
};

// Full slice-wise volume sampler: fixed starting latents shared across slices,
// dual-branch averaging at the first sub-step, denoised-prior start noised to
// t_prime, hybrid DDIM/DDPM plan. Output is clamped at 0; metadata is copied
// from the noisy input (count_fraction preserved).
SampleResult sample_volume(const NoiseSchedule& schedule, const Volume3D& noisy,
                           const Volume3D& prior, const DoseContext& dose,
                           const SamplerConfig& config, const EpsModel& model);

}  // namespace petdiff
