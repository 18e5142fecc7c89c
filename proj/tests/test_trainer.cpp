#include <doctest.h>

#include <cmath>
#include <vector>

#include "petdiff/prior.hpp"
#include "petdiff/sampler.hpp"
#include "petdiff/trainer.hpp"

using namespace petdiff;

namespace {

// Test backend returning fixed maps regardless of input.
class FixedModel final : public EpsModel {
public:
    FixedModel(Grid eps, Grid v, int n = 1) : eps_(std::move(eps)), v_(std::move(v)), n_(n) {}
    PredictorOutput predict(const Grid&, const SliceWindow&, int, const DoseContext&)
        const override {
        count_eval();
        return {eps_, v_};
    }
    int window_slices() const override { return n_; }

private:
    Grid eps_, v_;
    int n_;
};

SliceWindow zero_window(int n, int w) {
    SliceWindow win;
    win.n = n;
    win.width = w;
    win.data.assign(static_cast<std::size_t>(n) * w * w, 0.0);
    return win;
}

PairDataset tiny_dataset(int w, int s, std::uint64_t seed, std::vector<double> fractions) {
    auto spec = PhantomSpec::standard();
    std::vector<Volume3D> vols;
    vols.push_back(generate_phantom(seed, w, s, spec));
    return PairDataset::build(std::move(vols), fractions, seed + 1);
}

}  // namespace

TEST_CASE("sample_training_pair") {
    SUBCASE("empty dataset rejected") {
        PairDataset empty;
        Rng rng(1);
        CHECK_THROWS_AS(sample_training_pair(empty, rng, 3), ConfigError);
    }
    SUBCASE("dose metadata propagates fraction") {
        auto ds = tiny_dataset(8, 8, 5, {0.25});
        Rng rng(2);
        auto s = sample_training_pair(ds, rng, 3);
        CHECK(s.dose.count_fraction == 0.25);
        CHECK(s.dose.dose_bq ==
              doctest::Approx(0.25 * ds.entries()[0].full.dose_bq).epsilon(1e-12));
        CHECK(s.window.n == 3);
        CHECK(s.x0.width() == 8);
    }
    SUBCASE("slice histogram is uniform (chi-square)") {
        auto ds = tiny_dataset(8, 8, 5, {0.25});
        Rng rng(3);
        const int draws = 100000;
        std::vector<int> hist(8, 0);
        for (int i = 0; i < draws; ++i) {
            auto s = sample_training_pair(ds, rng, 1);
            ++hist[s.window.center];
        }
        const double expected = draws / 8.0;
        double chi2 = 0.0;
        for (int h : hist) chi2 += (h - expected) * (h - expected) / expected;
        CHECK(chi2 < 18.4753);  // chi-square 0.99 quantile, 7 dof
    }
}

TEST_CASE("compute_loss examples") {
    auto sched = NoiseSchedule::build(ScheduleKind::linear, 100, 1e-3, 0.05);
    const int w = 320;  // ~1e5 elements
    const int t = 40;
    Rng rng(11);
    Grid x0(w, w, 0.7);
    Grid eps(w, w);
    eps.fill_normal(rng);
    auto win = zero_window(1, w);
    const DoseContext dose{1e6, 0.5};

    SUBCASE("perfect prediction gives zero simple loss and zero KL") {
        FixedModel model(eps, Grid(w, w, 0.0));
        auto r = compute_loss(sched, model, x0, win, dose, t, eps, 1e-3);
        CHECK(r.loss_simple == 0.0);
        // mu_theta == mu_q when eps_hat is the true eps; v = 0 -> identical Gaussians.
        CHECK(std::abs(r.loss_vlb) < 1e-12);
        CHECK(r.total == doctest::Approx(0.0).epsilon(1e-12));
    }
    SUBCASE("zero prediction on standard-normal eps gives loss ~ 1") {
        FixedModel model(Grid(w, w, 0.0), Grid(w, w, 0.0));
        auto r = compute_loss(sched, model, x0, win, dose, t, eps, 0.0);
        const double se = std::sqrt(2.0 / (w * w));
        CHECK(std::abs(r.loss_simple - 1.0) < 3.0 * se);
    }
}

TEST_CASE("loss_simple is invariant under joint spatial permutation") {
    auto sched = NoiseSchedule::build(ScheduleKind::linear, 10, 1e-2, 0.1);
    const int w = 8;
    Rng rng(13);
    Grid x0(w, w, 1.0), eps(w, w), eps_hat(w, w);
    eps.fill_normal(rng);
    eps_hat.fill_normal(rng);
    auto win = zero_window(1, w);
    const DoseContext dose{1e6, 1.0};

    FixedModel m1(eps_hat, Grid(w, w, 0.0));
    auto r1 = compute_loss(sched, m1, x0, win, dose, 5, eps, 0.0);

    // Reverse both eps and eps_hat (a joint permutation).
    Grid eps_p(w, w), eps_hat_p(w, w);
    for (std::size_t i = 0; i < eps.size(); ++i) {
        eps_p[i] = eps[eps.size() - 1 - i];
        eps_hat_p[i] = eps_hat[eps.size() - 1 - i];
    }
    FixedModel m2(eps_hat_p, Grid(w, w, 0.0));
    auto r2 = compute_loss(sched, m2, x0, win, dose, 5, eps_p, 0.0);
    CHECK(r1.loss_simple == doctest::Approx(r2.loss_simple).epsilon(1e-12));
}

TEST_CASE("combined-loss gradients match finite differences (frozen KL mean)") {
    auto sched = NoiseSchedule::build(ScheduleKind::linear, 200, 1e-3, 0.04);
    TinyNetConfig cfg;
    cfg.in_channels = 4;
    cfg.out_channels = 2;
    cfg.base_width = 4;
    cfg.emb_len = 16;
    TinyNet net(cfg);
    std::vector<double> params(net.param_count());
    Rng rng(777);
    net.init_params_random(params, rng, 0.12);

    // Small t keeps log(beta/beta_tilde) well away from zero, so the variance
    // head's gradient is not in the finite-difference noise floor.
    const int w = 8, t = 5;
    const double lambda = 0.02;
    Grid x0(w, w);
    Grid eps(w, w);
    x0.fill_normal(rng);
    eps.fill_normal(rng);
    auto win = zero_window(3, w);
    for (auto& v : win.data) v = rng.normal();
    const DoseContext dose{3.7e7, 0.1};

    std::vector<double> grad(net.param_count(), 0.0);
    auto report = loss_and_gradient(sched, net, params, x0, win, dose, t, eps, lambda, grad);
    CHECK(std::isfinite(report.total));

    // The KL's mean difference is a stop-gradient input, so the finite-difference
    // objective freezes dmu at the evaluation point.
    const Grid x_t = sched.q_sample(x0, t, eps);
    Grid dmu_frozen(w, w);
    {
        auto input = TinyNetPredictor::stack_input(x_t, win);
        auto outs = net.forward(params, input, w, t, dose);
        auto [mu_q, var_q] = sched.posterior_params(x0, x_t, t);
        Grid mu_theta = mean_from_eps(sched, x_t, t, outs[0]);
        for (std::size_t i = 0; i < dmu_frozen.size(); ++i)
            dmu_frozen[i] = mu_q[i] - mu_theta[i];
    }
    const double var1 = std::max(sched.beta_tilde(t), kLogVarianceFloor);
    const double log_beta = std::log(sched.beta(t));
    const double log_bt = std::log(var1);
    auto objective = [&](std::span<const double> p) {
        auto input = TinyNetPredictor::stack_input(x_t, win);
        auto outs = net.forward(p, input, w, t, dose);
        double simple = 0.0, vlb = 0.0;
        for (std::size_t i = 0; i < eps.size(); ++i) {
            const double d = eps[i] - outs[0][i];
            simple += d * d;
            const double lv2 = outs[1][i] * log_beta + (1.0 - outs[1][i]) * log_bt;
            vlb += 0.5 * (lv2 - log_bt) +
                   (var1 + dmu_frozen[i] * dmu_frozen[i]) / (2.0 * std::exp(lv2)) - 0.5;
        }
        const double n = static_cast<double>(eps.size());
        return simple / n + lambda * vlb / n;
    };

    const double h = 1e-5;
    double worst = 0.0;
    for (std::size_t i = 0; i < params.size(); i += 1) {
        const double keep = params[i];
        params[i] = keep + h;
        const double lp = objective(params);
        params[i] = keep - h;
        const double lm = objective(params);
        params[i] = keep;
        const double numeric = (lp - lm) / (2.0 * h);
        const double denom = std::max({std::abs(numeric), std::abs(grad[i]), 1e-6});
        worst = std::max(worst, std::abs(numeric - grad[i]) / denom);
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("lambda_vlb = 0 leaves the variance head without gradient") {
    auto sched = NoiseSchedule::build(ScheduleKind::linear, 100, 1e-3, 0.05);
    TinyNetConfig cfg;
    cfg.in_channels = 2;
    cfg.out_channels = 2;
    cfg.base_width = 4;
    cfg.emb_len = 16;
    TinyNet net(cfg);
    std::vector<double> params(net.param_count());
    Rng rng(31);
    net.init_params_random(params, rng);

    const int w = 8;
    Grid x0(w, w, 0.5), eps(w, w);
    eps.fill_normal(rng);
    auto win = zero_window(1, w);

    std::vector<double> grad(net.param_count(), 0.0);
    (void)loss_and_gradient(sched, net, params, x0, win, DoseContext{1e6, 1.0}, 50, eps, 0.0,
                            grad);
    // The v output channel is the second row block of out_w / out_b.
    for (const auto& seg : net.segments()) {
        if (seg.name == "out_w") {
            const std::size_t per_channel = seg.count / 2;
            for (std::size_t i = per_channel; i < seg.count; ++i)
                CHECK(grad[seg.offset + i] == 0.0);
        }
        if (seg.name == "out_b") CHECK(grad[seg.offset + 1] == 0.0);
    }
}

TEST_CASE("adam converges on a quadratic") {
    AdamConfig cfg;
    cfg.lr = 0.1;
    AdamState state(1);
    std::vector<double> p{0.0};
    std::vector<double> g{0.0};
    for (int i = 0; i < 1000; ++i) {
        g[0] = 2.0 * (p[0] - 3.0);
        adam_update(p, g, state, cfg);
    }
    CHECK(p[0] == doctest::Approx(3.0).epsilon(1e-4));
}

TEST_CASE("train_step determinism and zero learning rate") {
    auto sched = NoiseSchedule::build(ScheduleKind::linear, 100, 1e-3, 0.05);
    auto ds = tiny_dataset(8, 8, 41, {0.25, 1.0});

    TrainConfig tc;
    tc.batch = 2;
    tc.steps = 5;
    tc.lr = 1e-3;
    tc.n = 3;
    tc.fractions = {0.25, 1.0};
    tc.seed = 77;
    tc.intensity_scale = 200.0;

    TinyNetConfig cfg;
    cfg.in_channels = 4;
    cfg.out_channels = 2;
    cfg.base_width = 4;
    cfg.emb_len = 16;
    TinyNet net(cfg);

    SUBCASE("bit-exact across runs") {
        std::vector<double> p1(net.param_count()), p2(net.param_count());
        Rng r1(9), r2(9);
        net.init_params(p1, r1);
        net.init_params(p2, r2);
        (void)train_loop(sched, net, p1, ds, tc);
        (void)train_loop(sched, net, p2, ds, tc);
        CHECK(p1 == p2);
    }
    SUBCASE("zero learning rate leaves parameters unchanged") {
        std::vector<double> p(net.param_count());
        Rng r(10);
        net.init_params(p, r);
        auto keep = p;
        TrainConfig tc0 = tc;
        tc0.lr = 0.0;
        (void)train_loop(sched, net, p, ds, tc0);
        CHECK(p == keep);
    }
    SUBCASE("negative learning rate rejected") {
        TrainConfig bad = tc;
        bad.lr = -1.0;
        CHECK_THROWS_AS(bad.validate(), ConfigError);
    }
}

TEST_CASE("500 smoke steps halve the epsilon loss on a 16x16 phantom") {
    auto sched = NoiseSchedule::build(ScheduleKind::linear, 1000, 1e-4, 0.02);
    auto ds = tiny_dataset(16, 8, 99, {0.25, 1.0});

    TrainConfig tc;
    tc.batch = 2;
    tc.steps = 500;
    tc.lr = 1e-3;
    tc.n = 3;
    tc.fractions = {0.25, 1.0};
    tc.seed = 123;
    tc.intensity_scale = 200.0;

    TinyNetConfig cfg;
    cfg.in_channels = 4;
    cfg.out_channels = 2;
    cfg.base_width = 8;
    cfg.emb_len = 32;
    TinyNet net(cfg);
    std::vector<double> params(net.param_count());
    Rng r(55);
    net.init_params(params, r);

    Rng stream(mix_seed(tc.seed, 0x747261696eULL));
    AdamState adam(net.param_count());
    double initial = 0.0, tail = 0.0;
    int tail_count = 0;
    for (int step = 0; step < tc.steps; ++step) {
        auto batch = assemble_batch(ds, stream, tc, sched.steps());
        auto rep = train_step(sched, net, params, adam, batch, tc, step);
        if (step == 0) initial = rep.loss_simple;
        if (step >= tc.steps - 50) {
            tail += rep.loss_simple;
            ++tail_count;
        }
    }
    tail /= tail_count;
    INFO("initial " << initial << " tail " << tail);
    CHECK(tail <= 0.5 * initial);
}
