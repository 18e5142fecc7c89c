#include <doctest.h>

#include <cmath>

#include "petdiff/rng.hpp"
#include "petdiff/schedule.hpp"

using namespace petdiff;

TEST_CASE("linear schedule basic sequences") {
    SUBCASE("single-step degenerate case") {
        auto s = NoiseSchedule::build(ScheduleKind::linear, 1, 0.5, 0.5);
        CHECK(s.steps() == 1);
        CHECK(s.beta(1) == 0.5);
        CHECK(s.alpha(1) == 0.5);
        CHECK(s.alpha_bar(1) == 0.5);
        CHECK(s.beta_tilde(1) == 0.0);
    }
    SUBCASE("two-step products") {
        auto s = NoiseSchedule::build(ScheduleKind::linear, 2, 0.1, 0.2);
        CHECK(s.alpha_bar(1) == doctest::Approx(0.9).epsilon(1e-15));
        CHECK(s.alpha_bar(2) == doctest::Approx(0.72).epsilon(1e-15));
        // beta_2 (1 - alpha_bar_1) / (1 - alpha_bar_2) = 0.2 * 0.1 / 0.28
        CHECK(s.beta_tilde(2) == doctest::Approx(0.0714286).epsilon(1e-6));
        CHECK(s.beta_tilde(1) == 0.0);
    }
}

TEST_CASE("schedule construction errors") {
    CHECK_THROWS_AS(NoiseSchedule::build(ScheduleKind::linear, 0, 0.1, 0.2), ConfigError);
    CHECK_THROWS_AS(NoiseSchedule::build(ScheduleKind::linear, 10, 0.0, 0.2), ConfigError);
    CHECK_THROWS_AS(NoiseSchedule::build(ScheduleKind::linear, 10, 0.3, 0.2), ConfigError);
    CHECK_THROWS_AS(NoiseSchedule::build(ScheduleKind::linear, 10, 0.1, 1.0), ConfigError);
}

TEST_CASE("schedule invariants on the default schedule") {
    auto s = NoiseSchedule::build(ScheduleKind::linear, 1000, 1e-4, 0.02);
    double prev = 1.0;
    for (int t = 1; t <= 1000; ++t) {
        CHECK(s.beta(t) > 0.0);
        CHECK(s.beta(t) < 1.0);
        CHECK(s.alpha_bar(t) < prev);  // strictly decreasing
        if (t >= 2) {
            // product identity alpha_bar_t / alpha_bar_{t-1} = alpha_t
            CHECK(s.alpha_bar(t) / s.alpha_bar(t - 1) ==
                  doctest::Approx(s.alpha(t)).epsilon(1e-12));
            CHECK(s.beta_tilde(t) > 0.0);
            CHECK(s.beta_tilde(t) <= s.beta(t));
        }
        prev = s.alpha_bar(t);
    }
    CHECK(s.beta_tilde(1) == 0.0);
}

TEST_CASE("forward_step point values") {
    auto s = NoiseSchedule::build(ScheduleKind::linear, 2, 0.1, 0.2);
    Grid x(4, 4, 1.5);
    Grid zero(4, 4, 0.0);
    SUBCASE("zero noise") {
        auto out = s.forward_step(x, 2, zero);
        for (std::size_t i = 0; i < out.size(); ++i)
            CHECK(out[i] == doctest::Approx(std::sqrt(0.8) * 1.5).epsilon(1e-15));
    }
    SUBCASE("unit noise on zero signal, beta = 0.2") {
        Grid ones(4, 4, 1.0);
        auto out = s.forward_step(zero, 2, ones);
        for (std::size_t i = 0; i < out.size(); ++i)
            CHECK(out[i] == doctest::Approx(0.4472136).epsilon(1e-7));
    }
    SUBCASE("shape mismatch") {
        Grid bad(3, 4, 0.0);
        CHECK_THROWS_AS(s.forward_step(x, 1, bad), ArgumentError);
    }
}

TEST_CASE("chained forward steps match the closed-form marginal (Monte Carlo)") {
    // Chain a scalar through all T steps many times; mean/var must match
    // N(sqrt(alpha_bar_T) x0, 1 - alpha_bar_T) within 3 standard errors.
    auto s = NoiseSchedule::build(ScheduleKind::linear, 10, 0.05, 0.3);
    const double x0 = 1.7;
    const int draws = 100000;
    Rng rng(42);
    Grid cell(1, 1);
    Grid noise(1, 1);
    double sum = 0.0, sum2 = 0.0;
    for (int d = 0; d < draws; ++d) {
        cell[0] = x0;
        for (int t = 1; t <= s.steps(); ++t) {
            noise[0] = rng.normal();
            cell = s.forward_step(cell, t, noise);
        }
        sum += cell[0];
        sum2 += cell[0] * cell[0];
    }
    const double mean = sum / draws;
    const double var = sum2 / draws - mean * mean;
    const double want_mean = s.sqrt_alpha_bar(s.steps()) * x0;
    const double want_var = 1.0 - s.alpha_bar(s.steps());
    const double se_mean = std::sqrt(want_var / draws);
    const double se_var = want_var * std::sqrt(2.0 / (draws - 1));
    CHECK(std::abs(mean - want_mean) < 3.0 * se_mean);
    CHECK(std::abs(var - want_var) < 3.0 * se_var);
}

TEST_CASE("q_sample point values and identity limit") {
    auto s = NoiseSchedule::build(ScheduleKind::linear, 2, 0.1, 0.2);
    Grid ones(4, 4, 1.0);
    Grid zero(4, 4, 0.0);
    SUBCASE("zero eps") {
        auto out = s.q_sample(ones, 2, zero);
        for (std::size_t i = 0; i < out.size(); ++i)
            CHECK(out[i] == doctest::Approx(std::sqrt(0.72)).epsilon(1e-15));
    }
    SUBCASE("hand value at alpha_bar = 0.72") {
        auto out = s.q_sample(ones, 2, ones);
        for (std::size_t i = 0; i < out.size(); ++i)
            CHECK(out[i] == doctest::Approx(1.377679).epsilon(1e-6));
    }
    SUBCASE("identity limit for tiny beta") {
        auto tiny = NoiseSchedule::build(ScheduleKind::linear, 10, 1e-8, 1e-8);
        Grid x0(2, 2, 3.0);
        Grid eps(2, 2, 1.0);
        auto out = tiny.q_sample(x0, 1, eps);
        for (std::size_t i = 0; i < out.size(); ++i)
            CHECK(std::abs(out[i] - x0[i]) < 1e-3);  // O(sqrt(beta))
    }
}

TEST_CASE("posterior_params") {
    auto s = NoiseSchedule::build(ScheduleKind::linear, 2, 0.1, 0.2);
    SUBCASE("t = 1 collapses onto x0 with zero variance") {
        Grid x0(3, 3, 0.7);
        Grid xt(3, 3, -0.2);
        auto [mean, var] = s.posterior_params(x0, xt, 1);
        for (std::size_t i = 0; i < mean.size(); ++i)
            CHECK(mean[i] == doctest::Approx(0.7).epsilon(1e-12));
        CHECK(var == 0.0);
    }
    SUBCASE("hand value at t = 2") {
        Grid x0(2, 2, 1.0);
        Grid xt(2, 2, 1.377679);
        auto [mean, var] = s.posterior_params(x0, xt, 2);
        for (std::size_t i = 0; i < mean.size(); ++i)
            CHECK(mean[i] == doctest::Approx(1.11772).epsilon(1e-4));
        CHECK(var == doctest::Approx(0.0714286).epsilon(1e-6));
    }
    SUBCASE("t = 0 rejected") {
        Grid g(2, 2, 0.0);
        CHECK_THROWS_AS(s.posterior_params(g, g, 0), ArgumentError);
    }
}
