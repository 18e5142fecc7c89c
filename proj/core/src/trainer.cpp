#include "petdiff/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <thread>

#include "petdiff/sampler.hpp"

namespace petdiff {

void TrainConfig::validate() const {
    if (batch < 1) throw ConfigError("TrainConfig: batch must be >= 1");
    if (steps < 0) throw ConfigError("TrainConfig: steps must be >= 0");
    if (lr < 0.0) throw ConfigError("TrainConfig: learning rate must be >= 0");
    if (lambda_vlb < 0.0) throw ConfigError("TrainConfig: lambda_vlb must be >= 0");
    if (n < 1 || n % 2 == 0) throw ConfigError("TrainConfig: n must be odd and >= 1");
    if (fractions.empty()) throw ConfigError("TrainConfig: fraction ladder is empty");
    for (double f : fractions)
        if (!(f > 0.0) || f > 1.0)
            throw ConfigError("TrainConfig: fractions must be in (0, 1]");
    if (!(intensity_scale > 0.0)) throw ConfigError("TrainConfig: intensity_scale must be > 0");
    if (threads < 1) throw ConfigError("TrainConfig: threads must be >= 1");
}

PairDataset PairDataset::build(std::vector<Volume3D> fulls, std::span<const double> fractions,
                               std::uint64_t seed) {
    if (fulls.empty()) throw ConfigError("PairDataset: no volumes");
    if (fractions.empty()) throw ConfigError("PairDataset: no fractions");
    PairDataset ds;
    ds.entries_.reserve(fulls.size());
    for (std::size_t vi = 0; vi < fulls.size(); ++vi) {
        Entry e;
        e.full = std::move(fulls[vi]);
        for (std::size_t fi = 0; fi < fractions.size(); ++fi) {
            e.fractions.push_back(fractions[fi]);
            e.degraded.push_back(
                degrade_counts(e.full, fractions[fi], mix_seed(seed, vi * 1000 + fi)));
        }
        ds.entries_.push_back(std::move(e));
    }
    return ds;
}

namespace {

std::size_t uniform_index(Rng& rng, std::size_t count) {
    const auto i = static_cast<std::size_t>(rng.uniform() * static_cast<double>(count));
    return std::min(i, count - 1);
}

}  // namespace

TrainSample sample_training_pair(const PairDataset& dataset, Rng& rng, int n) {
    if (dataset.empty()) throw ConfigError("sample_training_pair: empty dataset");
    const auto& entries = dataset.entries();
    const auto& entry = entries[uniform_index(rng, entries.size())];
    const std::size_t fi = uniform_index(rng, entry.fractions.size());
    const auto slice = static_cast<int>(uniform_index(rng, entry.full.slices));

    TrainSample s;
    s.x0 = entry.full.slice(slice);
    s.window = extract_window(entry.degraded[fi], slice, n);
    s.dose = DoseContext{entry.degraded[fi].dose_bq, entry.degraded[fi].count_fraction};
    return s;
}

std::vector<TrainItem> assemble_batch(const PairDataset& dataset, Rng& rng,
                                      const TrainConfig& config, int T) {
    std::vector<TrainItem> batch;
    batch.reserve(config.batch);
    for (int i = 0; i < config.batch; ++i) {
        TrainItem item;
        item.sample = sample_training_pair(dataset, rng, config.n);
        item.t = 1 + static_cast<int>(uniform_index(rng, T));
        item.eps = Grid(item.sample.x0.width(), item.sample.x0.height());
        item.eps.fill_normal(rng);
        batch.push_back(std::move(item));
    }
    return batch;
}

namespace {

struct VlbTerms {
    double loss = 0.0;        // mean KL over the grid
    Grid d_v;                 // d(loss_vlb)/d(v)
};

// KL between the true reverse posterior N(mu_q, beta_tilde) and the model's
// N(mu_theta, sigma^2(v)), per element, averaged. The mean difference is a
// frozen input so the variance head alone receives gradient.
VlbTerms vlb_term(const NoiseSchedule& schedule, const Grid& v, int t, const Grid& dmu,
                  bool want_grad) {
    const double var1 = std::max(schedule.beta_tilde(t), kLogVarianceFloor);
    const double log_beta = std::log(schedule.beta(t));
    const double log_beta_tilde = std::log(var1);
    const double delta = log_beta - log_beta_tilde;
    const double inv_n = 1.0 / static_cast<double>(v.size());

    VlbTerms out;
    if (want_grad) out.d_v = Grid(v.width(), v.height());
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double log_var2 = v[i] * log_beta + (1.0 - v[i]) * log_beta_tilde;
        const double var2 = std::exp(log_var2);
        const double ratio = (var1 + dmu[i] * dmu[i]) / (2.0 * var2);
        out.loss += 0.5 * (log_var2 - log_beta_tilde) + ratio - 0.5;
        if (want_grad) out.d_v[i] = (0.5 - ratio) * delta * inv_n;
    }
    out.loss *= inv_n;
    return out;
}

void check_losses(const LossReport& r, const std::string& where) {
    if (!std::isfinite(r.loss_simple) || !std::isfinite(r.loss_vlb) || !std::isfinite(r.total))
        throw TrainingError(where + ": non-finite loss (simple=" +
                            std::to_string(r.loss_simple) +
                            " vlb=" + std::to_string(r.loss_vlb) + ")");
}

}  // namespace

LossReport compute_loss(const NoiseSchedule& schedule, const EpsModel& model, const Grid& x0,
                        const SliceWindow& window, const DoseContext& dose, int t,
                        const Grid& eps, double lambda_vlb) {
    require_same_shape(x0, eps, "compute_loss");
    const Grid x_t = schedule.q_sample(x0, t, eps);
    const PredictorOutput out = model.predict(x_t, window, t, dose);

    LossReport r;
    for (std::size_t i = 0; i < eps.size(); ++i) {
        const double d = eps[i] - out.eps[i];
        r.loss_simple += d * d;
    }
    r.loss_simple /= static_cast<double>(eps.size());

    const auto [mu_q, var_q] = schedule.posterior_params(x0, x_t, t);
    const Grid mu_theta = mean_from_eps(schedule, x_t, t, out.eps);
    Grid dmu(x0.width(), x0.height());
    for (std::size_t i = 0; i < dmu.size(); ++i) dmu[i] = mu_q[i] - mu_theta[i];
    r.loss_vlb = vlb_term(schedule, out.v, t, dmu, false).loss;

    r.total = r.loss_simple + lambda_vlb * r.loss_vlb;
    check_losses(r, "compute_loss (t=" + std::to_string(t) + ")");
    return r;
}

LossReport loss_and_gradient(const NoiseSchedule& schedule, const TinyNet& net,
                             std::span<const double> params, const Grid& x0,
                             const SliceWindow& window, const DoseContext& dose, int t,
                             const Grid& eps, double lambda_vlb, std::span<double> grad) {
    require_same_shape(x0, eps, "loss_and_gradient");
    const Grid x_t = schedule.q_sample(x0, t, eps);

    const std::size_t plane = static_cast<std::size_t>(x_t.width()) * x_t.height();
    std::vector<double> input(static_cast<std::size_t>(window.n + 1) * plane);
    std::copy(window.data.begin(), window.data.end(), input.begin());
    std::copy(x_t.data(), x_t.data() + plane,
              input.begin() + static_cast<std::ptrdiff_t>(window.n * plane));

    TinyNetTape tape;
    auto outs = net.forward(params, input, x_t.width(), t, dose, tape);
    const Grid& eps_hat = outs[0];
    const Grid& v = outs[1];

    LossReport r;
    Grid d_eps(x_t.width(), x_t.height());
    const double inv_n = 1.0 / static_cast<double>(eps.size());
    for (std::size_t i = 0; i < eps.size(); ++i) {
        const double d = eps[i] - eps_hat[i];
        r.loss_simple += d * d;
        d_eps[i] = -2.0 * d * inv_n;
    }
    r.loss_simple *= inv_n;

    const auto [mu_q, var_q] = schedule.posterior_params(x0, x_t, t);
    const Grid mu_theta = mean_from_eps(schedule, x_t, t, eps_hat);
    Grid dmu(x0.width(), x0.height());
    for (std::size_t i = 0; i < dmu.size(); ++i) dmu[i] = mu_q[i] - mu_theta[i];
    auto vlb = vlb_term(schedule, v, t, dmu, lambda_vlb > 0.0);
    r.loss_vlb = vlb.loss;
    r.total = r.loss_simple + lambda_vlb * r.loss_vlb;
    check_losses(r, "loss_and_gradient (t=" + std::to_string(t) + ")");

    Grid d_v(x_t.width(), x_t.height());
    if (lambda_vlb > 0.0)
        for (std::size_t i = 0; i < d_v.size(); ++i) d_v[i] = lambda_vlb * vlb.d_v[i];
    net.backward(params, tape, {std::move(d_eps), std::move(d_v)}, grad);
    return r;
}

void adam_update(std::span<double> params, std::span<const double> grad, AdamState& state,
                 const AdamConfig& config) {
    if (params.size() != grad.size() || params.size() != state.m.size())
        throw ArgumentError("adam_update: size mismatch");
    ++state.step;
    const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * grad[i];
        state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * grad[i] * grad[i];
        const double mhat = state.m[i] / bc1;
        const double vhat = state.v[i] / bc2;
        params[i] -= config.lr * mhat / (std::sqrt(vhat) + config.eps);
    }
}

LossReport train_step(const NoiseSchedule& schedule, const TinyNet& net,
                      std::span<double> params, AdamState& adam,
                      const std::vector<TrainItem>& batch, const TrainConfig& config,
                      std::uint64_t step_index) {
    config.validate();
    if (batch.empty()) throw ConfigError("train_step: empty batch");

    const double inv_scale = 1.0 / config.intensity_scale;
    const std::size_t count = net.param_count();

    // Per-item gradient buffers reduced in index order keep the update
    // bit-identical for any thread count.
    std::vector<std::vector<double>> item_grads(batch.size());
    std::vector<LossReport> item_losses(batch.size());

    auto run_item = [&](std::size_t bi) {
        const TrainItem& item = batch[bi];
        Grid x0 = item.sample.x0;
        for (std::size_t i = 0; i < x0.size(); ++i) x0[i] *= inv_scale;
        SliceWindow window = item.sample.window;
        for (auto& v : window.data) v *= inv_scale;

        item_grads[bi].assign(count, 0.0);
        item_losses[bi] = loss_and_gradient(schedule, net, params, x0, window,
                                            item.sample.dose, item.t, item.eps,
                                            config.lambda_vlb, item_grads[bi]);
    };

    if (config.threads <= 1 || batch.size() == 1) {
        for (std::size_t bi = 0; bi < batch.size(); ++bi) run_item(bi);
    } else {
        const std::size_t workers = std::min<std::size_t>(config.threads, batch.size());
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        std::vector<std::exception_ptr> errors(workers);
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&, w] {
                try {
                    for (std::size_t bi = next.fetch_add(1); bi < batch.size();
                         bi = next.fetch_add(1))
                        run_item(bi);
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
        }
        for (auto& th : pool) th.join();
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
    }

    std::vector<double> grad(count, 0.0);
    LossReport mean{};
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    for (std::size_t bi = 0; bi < batch.size(); ++bi) {
        for (std::size_t i = 0; i < count; ++i) grad[i] += item_grads[bi][i] * inv_b;
        mean.loss_simple += item_losses[bi].loss_simple * inv_b;
        mean.loss_vlb += item_losses[bi].loss_vlb * inv_b;
        mean.total += item_losses[bi].total * inv_b;
    }
    check_losses(mean, "train_step (step=" + std::to_string(step_index) + ")");

    AdamConfig ac;
    ac.lr = config.lr;
    adam_update(params, grad, adam, ac);
    return mean;
}

LossReport train_loop(const NoiseSchedule& schedule, const TinyNet& net,
                      std::span<double> params, const PairDataset& dataset,
                      const TrainConfig& config, const std::optional<std::string>& log_path) {
    config.validate();
    if (dataset.empty()) throw ConfigError("train_loop: empty dataset");

    std::ofstream log;
    if (log_path) {
        log.open(*log_path, std::ios::app);
        if (!log) throw ConfigError("train_loop: cannot open log " + *log_path);
        log << "step,loss_simple,loss_vlb,total,wall_ms\n";
    }

    Rng rng(mix_seed(config.seed, 0x747261696eULL));
    AdamState adam(net.param_count());
    LossReport last{};
    for (int step = 0; step < config.steps; ++step) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto batch = assemble_batch(dataset, rng, config, schedule.steps());
        last = train_step(schedule, net, params, adam, batch, config,
                          static_cast<std::uint64_t>(step));
        const auto t1 = std::chrono::steady_clock::now();
        if (log) {
            const auto ms =
                std::chrono::duration_cast<std::chrono::milliseconds>(t1 - t0).count();
            log << step << ',' << last.loss_simple << ',' << last.loss_vlb << ',' << last.total
                << ',' << ms << '\n';
        }
    }
    return last;
}

}  // namespace petdiff
