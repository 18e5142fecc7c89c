#include <doctest.h>

#include <cmath>

#include "petdiff/predictor.hpp"

using namespace petdiff;

namespace {

SliceWindow dummy_window(int n, int w) {
    SliceWindow win;
    win.center = 0;
    win.n = n;
    win.width = w;
    win.data.assign(static_cast<std::size_t>(n) * w * w, 0.0);
    return win;
}

}  // namespace

TEST_CASE("oracle closed form") {
    auto sched = NoiseSchedule::build(ScheduleKind::linear, 2, 0.1, 0.2);
    // alpha_bar(2) = 0.72
    GaussianOracle oracle(sched, 0.0, 1.0);

    SUBCASE("hand value: mu0=0 s0=1 x_t=1") {
        Grid x(2, 2, 1.0);
        auto out = oracle.oracle_eps(x, 2);
        for (std::size_t i = 0; i < out.eps.size(); ++i) {
            CHECK(out.eps[i] == doctest::Approx(0.529150).epsilon(1e-6));
            CHECK(out.v[i] == 0.0);
        }
    }
    SUBCASE("symmetry: x_t = sqrt(alpha_bar) mu0 gives zero eps") {
        GaussianOracle o2(sched, 1.5, 0.7);
        Grid x(2, 2, std::sqrt(0.72) * 1.5);
        auto out = o2.oracle_eps(x, 2);
        for (std::size_t i = 0; i < out.eps.size(); ++i) CHECK(std::abs(out.eps[i]) < 1e-12);
    }
    SUBCASE("degenerate prior s0 -> 0") {
        GaussianOracle o3(sched, 2.0, 1e-9);
        Grid x(2, 2, 1.0);
        auto out = o3.oracle_eps(x, 2);
        const double want = (1.0 - std::sqrt(0.72) * 2.0) / std::sqrt(0.28);
        for (std::size_t i = 0; i < out.eps.size(); ++i)
            CHECK(out.eps[i] == doctest::Approx(want).epsilon(1e-6));
    }
}

TEST_CASE("oracle matches Monte Carlo regression of eps on x_t") {
    // Draw (x0, eps) pairs, bin by x_t, and compare the binned mean of eps with
    // the closed-form E[eps | x_t]; an implementation-independent cross-check.
    auto sched = NoiseSchedule::build(ScheduleKind::linear, 100, 1e-3, 0.05);
    const int t = 60;
    const double mu0 = 0.5, s0 = 1.3;
    GaussianOracle oracle(sched, mu0, s0);

    Rng rng(999);
    const int draws = 1000000;
    const double c = sched.sqrt_alpha_bar(t), s = sched.sqrt_one_minus_alpha_bar(t);
    const int bins = 9;
    const double lo = -2.0, hi = 3.0;
    std::vector<double> sum_eps(bins, 0.0), sum_xt(bins, 0.0);
    std::vector<int> count(bins, 0);
    for (int i = 0; i < draws; ++i) {
        const double x0 = mu0 + s0 * rng.normal();
        const double eps = rng.normal();
        const double xt = c * x0 + s * eps;
        const int b = static_cast<int>((xt - lo) / (hi - lo) * bins);
        if (b < 0 || b >= bins) continue;
        sum_eps[b] += eps;
        sum_xt[b] += xt;
        ++count[b];
    }
    // E[eps | x_t] is linear in x_t, so the bin mean of eps must equal the
    // closed form evaluated at the bin mean of x_t.
    for (int b = 0; b < bins; ++b) {
        if (count[b] < 10000) continue;
        Grid x(1, 1, sum_xt[b] / count[b]);
        auto out = oracle.oracle_eps(x, t);
        const double se = 1.0 / std::sqrt(static_cast<double>(count[b]));
        CHECK(std::abs(sum_eps[b] / count[b] - out.eps[0]) < 5.0 * se);
    }
}

TEST_CASE("predict is pure and order-independent") {
    TinyNetConfig cfg;
    cfg.in_channels = 4;
    cfg.out_channels = 2;
    cfg.base_width = 4;
    cfg.emb_len = 16;
    TinyNetPredictor model(cfg, 3);
    Rng rng(21);
    model.net().init_params_random(model.mutable_params(), rng);

    auto win_a = dummy_window(3, 8);
    auto win_b = dummy_window(3, 8);
    for (auto& v : win_b.data) v = 0.5;
    Grid xa(8, 8, 0.3), xb(8, 8, -0.2);
    const DoseContext dose{3.7e6, 0.01};

    auto a1 = model.predict(xa, win_a, 10, dose);
    auto b1 = model.predict(xb, win_b, 20, dose);
    auto b2 = model.predict(xb, win_b, 20, dose);
    auto a2 = model.predict(xa, win_a, 10, dose);
    for (std::size_t i = 0; i < a1.eps.size(); ++i) {
        CHECK(a1.eps[i] == a2.eps[i]);
        CHECK(a1.v[i] == a2.v[i]);
        CHECK(b1.eps[i] == b2.eps[i]);
        CHECK(b1.v[i] == b2.v[i]);
    }
}

TEST_CASE("zero-parameter predictor outputs zero maps") {
    TinyNetConfig cfg;
    cfg.in_channels = 2;
    cfg.out_channels = 2;
    cfg.base_width = 4;
    cfg.emb_len = 16;
    TinyNetPredictor model(cfg, 1);  // all-zero params by construction
    Grid x(8, 8, 1.0);
    auto win = dummy_window(1, 8);
    for (auto& v : win.data) v = 2.0;
    auto out = model.predict(x, win, 5, DoseContext{1e7, 0.5});
    for (std::size_t i = 0; i < out.eps.size(); ++i) {
        CHECK(out.eps[i] == 0.0);
        CHECK(out.v[i] == 0.0);
    }
}

TEST_CASE("predictor validates shapes and configuration") {
    TinyNetConfig cfg;
    cfg.in_channels = 4;
    cfg.out_channels = 2;
    cfg.base_width = 4;
    cfg.emb_len = 16;
    CHECK_THROWS_AS(TinyNetPredictor(cfg, 5), ConfigError);  // in_channels != n+1

    TinyNetPredictor model(cfg, 3);
    Grid x(8, 8, 0.0);
    auto bad = dummy_window(5, 8);
    CHECK_THROWS_AS(model.predict(x, bad, 1, DoseContext{1e6, 1.0}), ArgumentError);
}

TEST_CASE("evaluation counter tracks predict calls") {
    auto sched = NoiseSchedule::build(ScheduleKind::linear, 10, 1e-3, 0.05);
    GaussianOracle oracle(sched, 0.0, 1.0);
    oracle.reset_evaluations();
    Grid x(4, 4, 0.1);
    auto win = dummy_window(1, 4);
    (void)oracle.predict(x, win, 3, DoseContext{1e6, 1.0});
    (void)oracle.predict(x, win, 3, DoseContext{1e6, 1.0});
    CHECK(oracle.evaluations() == 2);
}
