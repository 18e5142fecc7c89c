#include "petdiff/sampler.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>

namespace petdiff {

void SamplerConfig::validate(const NoiseSchedule& schedule) const {
    if (num_steps < 1 || num_steps > t_prime || t_prime > schedule.steps())
        throw ArgumentError("SamplerConfig: require 1 <= num_steps <= t_prime <= T");
    if (ddpm_every < 1) throw ArgumentError("SamplerConfig: ddpm_every must be >= 1");
    if (!(eta >= 0.0) || eta > 1.0) throw ArgumentError("SamplerConfig: eta must be in [0, 1]");
    if (!(intensity_scale > 0.0))
        throw ArgumentError("SamplerConfig: intensity_scale must be > 0");
    if (threads < 1) throw ArgumentError("SamplerConfig: threads must be >= 1");
}

std::vector<SubStep> plan_substeps(const SamplerConfig& config, const NoiseSchedule& schedule) {
    config.validate(schedule);
    const int n = config.num_steps;
    std::vector<SubStep> plan(n);
    for (int i = 0; i < n; ++i) {
        const double frac = static_cast<double>(n - i) / n;
        plan[i].t = static_cast<int>(std::lround(config.t_prime * frac));
        plan[i].kind = ((i + 1) % config.ddpm_every == 0) ? SubStep::Kind::ddpm
                                                          : SubStep::Kind::ddim;
    }
    for (int i = 0; i < n; ++i) plan[i].t_prev = (i + 1 < n) ? plan[i + 1].t : 0;
    return plan;
}

Grid mean_from_eps(const NoiseSchedule& schedule, const Grid& x_t, int t, const Grid& eps_hat) {
    require_same_shape(x_t, eps_hat, "mean_from_eps");
    const double inv_sqrt_alpha = 1.0 / std::sqrt(schedule.alpha(t));
    const double coef = (1.0 - schedule.alpha(t)) / schedule.sqrt_one_minus_alpha_bar(t);
    Grid mu(x_t.width(), x_t.height());
    for (std::size_t i = 0; i < mu.size(); ++i)
        mu[i] = inv_sqrt_alpha * (x_t[i] - coef * eps_hat[i]);
    return mu;
}

Grid sigma_from_v(const NoiseSchedule& schedule, const Grid& v, int t) {
    const double log_beta = std::log(schedule.beta(t));
    const double log_beta_tilde = std::log(std::max(schedule.beta_tilde(t), kLogVarianceFloor));
    Grid sigma(v.width(), v.height());
    for (std::size_t i = 0; i < sigma.size(); ++i)
        sigma[i] = std::exp(0.5 * (v[i] * log_beta + (1.0 - v[i]) * log_beta_tilde));
    return sigma;
}

Grid ddpm_step(const NoiseSchedule& schedule, const Grid& x_t, const PredictorOutput& out,
               int t, int t_prev, const Grid& z) {
    if (!(t > t_prev && t_prev >= 0)) throw ArgumentError("ddpm_step: require t > t_prev >= 0");
    require_same_shape(x_t, z, "ddpm_step");
    Grid mu = mean_from_eps(schedule, x_t, t, out.eps);
    if (t_prev == 0) return mu;
    const Grid sigma = sigma_from_v(schedule, out.v, t);
    for (std::size_t i = 0; i < mu.size(); ++i) mu[i] += sigma[i] * z[i];
    return mu;
}

namespace {

inline double clamped_sqrt(double x, std::uint64_t* clamps) {
    if (x < 0.0) {
        if (clamps) ++*clamps;
        return 0.0;
    }
    return std::sqrt(x);
}

}  // namespace

Grid ddim_step(const NoiseSchedule& schedule, const Grid& x_t, const PredictorOutput& out,
               int t, int t_prev, double eta, const Grid& z, std::uint64_t* sqrt_clamps) {
    if (!(t > t_prev && t_prev >= 0)) throw ArgumentError("ddim_step: require t > t_prev >= 0");
    require_same_shape(x_t, out.eps, "ddim_step");
    require_same_shape(x_t, z, "ddim_step");
    const double ab_t = schedule.alpha_bar(t);
    const double ab_p = schedule.alpha_bar(t_prev);
    const double sqrt_ab_t = schedule.sqrt_alpha_bar(t);
    const double sqrt_1m_ab_t = schedule.sqrt_one_minus_alpha_bar(t);

    const double sigma = eta * clamped_sqrt((1.0 - ab_p) / (1.0 - ab_t), sqrt_clamps) *
                         clamped_sqrt(1.0 - ab_t / ab_p, sqrt_clamps);
    const double dir_coef = clamped_sqrt(1.0 - ab_p - sigma * sigma, sqrt_clamps);
    const double sqrt_ab_p = std::sqrt(ab_p);

    Grid x(x_t.width(), x_t.height());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double x0_hat = (x_t[i] - sqrt_1m_ab_t * out.eps[i]) / sqrt_ab_t;
        x[i] = sqrt_ab_p * x0_hat + dir_coef * out.eps[i];
        if (sigma != 0.0 && t_prev != 0) x[i] += sigma * z[i];
    }
    return x;
}

Grid hybrid_ddpm_substep(const NoiseSchedule& schedule, const Grid& x_t,
                         const PredictorOutput& out, int t, int t_prev, const Grid& z,
                         std::uint64_t* sqrt_clamps) {
    if (!(t > t_prev && t_prev >= 0))
        throw ArgumentError("hybrid_ddpm_substep: require t > t_prev >= 0");
    require_same_shape(x_t, z, "hybrid_ddpm_substep");
    const double ab_t = schedule.alpha_bar(t);
    const double ab_p = schedule.alpha_bar(t_prev);
    const double sqrt_ab_t = schedule.sqrt_alpha_bar(t);
    const double sqrt_1m_ab_t = schedule.sqrt_one_minus_alpha_bar(t);
    const double sqrt_ab_p = std::sqrt(ab_p);

    // Respaced forward variance for the (t, t_prev) pair and its posterior floor;
    // these reduce to (beta_t, beta_tilde_t) when t_prev == t - 1.
    const double beta_resp = 1.0 - ab_t / ab_p;
    const double beta_tilde_resp = (1.0 - ab_p) / (1.0 - ab_t) * beta_resp;
    const double dir_coef = clamped_sqrt(1.0 - ab_p - beta_tilde_resp, sqrt_clamps);

    Grid x(x_t.width(), x_t.height());
    const bool add_noise = (t_prev != 0);
    const double log_beta = add_noise ? std::log(beta_resp) : 0.0;
    const double log_beta_tilde =
        add_noise ? std::log(std::max(beta_tilde_resp, kLogVarianceFloor)) : 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double x0_hat = (x_t[i] - sqrt_1m_ab_t * out.eps[i]) / sqrt_ab_t;
        x[i] = sqrt_ab_p * x0_hat + dir_coef * out.eps[i];
        if (add_noise) {
            const double sigma =
                std::exp(0.5 * (out.v[i] * log_beta + (1.0 - out.v[i]) * log_beta_tilde));
            x[i] += sigma * z[i];
        }
    }
    return x;
}

// ---------------------------------------------------------------------------

namespace {

Grid normal_grid(int w, int h, Rng& rng) {
    Grid g(w, h);
    g.fill_normal(rng);
    return g;
}

struct SliceLatents {
    Grid eps_a, eps_b;
    std::vector<Grid> z;
};

void check_finite(const Grid& g, int slice, int substep) {
    if (!g.all_finite())
        throw SamplingError("sample_volume: non-finite state at slice " +
                            std::to_string(slice) + ", sub-step " + std::to_string(substep));
}

}  // namespace

SampleResult sample_volume(const NoiseSchedule& schedule, const Volume3D& noisy,
                           const Volume3D& prior, const DoseContext& dose,
                           const SamplerConfig& config, const EpsModel& model) {
    config.validate(schedule);
    if (noisy.width != prior.width || noisy.slices != prior.slices)
        throw ArgumentError("sample_volume: noisy and prior shapes differ");
    noisy.validate("sample_volume(noisy)");
    prior.validate("sample_volume(prior)");

    const int W = noisy.width;
    const int S = noisy.slices;
    const int n = model.window_slices();
    const double scale = config.intensity_scale;
    const auto plan = plan_substeps(config, schedule);

    // Volume-level latents, drawn once. Per-slice latents (when the fixed-latent
    // switches are off) are seeded by slice index so execution order never matters.
    SliceLatents shared;
    {
        Rng ra(config.seed_eps_a), rb(config.seed_eps_b), rz(config.seed_z);
        if (config.fix_latents) {
            shared.eps_a = normal_grid(W, W, ra);
            shared.eps_b = normal_grid(W, W, rb);
        }
        if (config.fix_step_noise) {
            shared.z.reserve(plan.size());
            for (std::size_t i = 0; i < plan.size(); ++i)
                shared.z.push_back(normal_grid(W, W, rz));
        }
    }

    SampleResult result;
    result.volume = noisy;  // metadata copy; payload overwritten below
    result.stats.slices = S;
    std::atomic<std::uint64_t> clamps{0};
    const std::uint64_t evals_before = model.evaluations();

    auto run_slice = [&](int s) {
        Grid eps_a = config.fix_latents ? shared.eps_a
                                        : [&] {
                                              Rng r(mix_seed(config.seed_eps_a, s + 1));
                                              return normal_grid(W, W, r);
                                          }();
        Grid eps_b = config.fix_latents ? shared.eps_b
                                        : [&] {
                                              Rng r(mix_seed(config.seed_eps_b, s + 1));
                                              return normal_grid(W, W, r);
                                          }();
        std::vector<Grid> z_local;
        if (!config.fix_step_noise) {
            Rng r(mix_seed(config.seed_z, s + 1));
            z_local.reserve(plan.size());
            for (std::size_t i = 0; i < plan.size(); ++i) z_local.push_back(normal_grid(W, W, r));
        }
        const std::vector<Grid>& z_stream = config.fix_step_noise ? shared.z : z_local;

        SliceWindow window = extract_window(noisy, s, n);
        for (auto& v : window.data) v /= scale;

        Grid x_a(W, W), x_b(W, W);
        if (config.use_prior) {
            Grid p = prior.slice(s);
            for (std::size_t i = 0; i < p.size(); ++i) p[i] /= scale;
            x_a = schedule.q_sample(p, config.t_prime, eps_a);
            x_b = schedule.q_sample(p, config.t_prime, eps_b);
        } else {
            x_a = eps_a;
            x_b = eps_b;
        }

        std::uint64_t slice_clamps = 0;
        for (std::size_t i = 0; i < plan.size(); ++i) {
            const SubStep& sub = plan[i];
            auto advance = [&](const Grid& x) {
                const PredictorOutput out = model.predict(x, window, sub.t, dose);
                if (sub.kind == SubStep::Kind::ddim)
                    return ddim_step(schedule, x, out, sub.t, sub.t_prev, config.eta,
                                     z_stream[i], &slice_clamps);
                return hybrid_ddpm_substep(schedule, x, out, sub.t, sub.t_prev, z_stream[i],
                                           &slice_clamps);
            };
            Grid next = advance(x_a);
            if (i == 0 && config.dual_noise) {
                // Branch b is evaluated exactly once, at the first sub-step.
                Grid next_b = advance(x_b);
                for (std::size_t j = 0; j < next.size(); ++j)
                    next[j] = (next[j] + next_b[j]) / 2.0;
            }
            check_finite(next, s, static_cast<int>(i));
            x_a = std::move(next);
        }

        Grid out(W, W);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(x_a[i] * scale, 0.0);
        result.volume.set_slice(s, out);
        clamps.fetch_add(slice_clamps, std::memory_order_relaxed);
    };

    if (config.threads <= 1 || S == 1) {
        for (int s = 0; s < S; ++s) run_slice(s);
    } else {
        const int workers = std::min(config.threads, S);
        std::atomic<int> next{0};
        std::vector<std::thread> pool;
        std::vector<std::exception_ptr> errors(workers);
        for (int w = 0; w < workers; ++w) {
            pool.emplace_back([&, w] {
                try {
                    for (int s = next.fetch_add(1); s < S; s = next.fetch_add(1)) run_slice(s);
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
        }
        for (auto& th : pool) th.join();
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
    }

    result.stats.model_evals = model.evaluations() - evals_before;
    result.stats.sqrt_clamps = clamps.load();
    return result;
}

}  // namespace petdiff
