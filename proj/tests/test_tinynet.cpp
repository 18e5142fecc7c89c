#include <doctest.h>

#include <cmath>
#include <vector>

#include "petdiff/tinynet.hpp"

using namespace petdiff;

namespace {

TinyNetConfig mini_config() {
    TinyNetConfig cfg;
    cfg.in_channels = 4;
    cfg.out_channels = 2;
    cfg.base_width = 4;
    cfg.emb_len = 16;
    return cfg;
}

std::vector<double> random_input(int channels, int w, Rng& rng) {
    std::vector<double> input(static_cast<std::size_t>(channels) * w * w);
    for (auto& v : input) v = rng.normal();
    return input;
}

}  // namespace

TEST_CASE("all-zero parameters give all-zero outputs") {
    TinyNet net(mini_config());
    std::vector<double> params(net.param_count(), 0.0);
    Rng rng(3);
    const auto input = random_input(4, 8, rng);
    auto out = net.forward(params, input, 8, 5, DoseContext{1e6, 0.1});
    REQUIRE(out.size() == 2);
    for (const auto& g : out)
        for (std::size_t i = 0; i < g.size(); ++i) CHECK(g[i] == 0.0);
}

TEST_CASE("default init zeroes the final layer") {
    TinyNet net(mini_config());
    std::vector<double> params(net.param_count());
    Rng rng(5);
    net.init_params(params, rng);
    Rng rng2(7);
    const auto input = random_input(4, 8, rng2);
    auto out = net.forward(params, input, 8, 11, DoseContext{2e6, 0.25});
    for (const auto& g : out)
        for (std::size_t i = 0; i < g.size(); ++i) CHECK(g[i] == 0.0);
}

TEST_CASE("forward is deterministic and tape-independent") {
    TinyNet net(mini_config());
    std::vector<double> params(net.param_count());
    Rng rng(17);
    net.init_params_random(params, rng);
    const auto input = random_input(4, 8, rng);
    const DoseContext dose{3.7e6, 0.01};

    auto a = net.forward(params, input, 8, 100, dose);
    auto b = net.forward(params, input, 8, 100, dose);
    TinyNetTape tape;
    auto c = net.forward(params, input, 8, 100, dose, tape);
    for (int ch = 0; ch < 2; ++ch)
        for (std::size_t i = 0; i < a[ch].size(); ++i) {
            CHECK(a[ch][i] == b[ch][i]);
            CHECK(a[ch][i] == c[ch][i]);
        }
}

TEST_CASE("input validation") {
    TinyNet net(mini_config());
    std::vector<double> params(net.param_count(), 0.0);
    Rng rng(1);
    auto input = random_input(4, 8, rng);
    CHECK_THROWS_AS(net.forward(params, input, 6, 1, DoseContext{1e6, 1.0}), ArgumentError);
    input.pop_back();
    CHECK_THROWS_AS(net.forward(params, input, 8, 1, DoseContext{1e6, 1.0}), ArgumentError);
}

TEST_CASE("analytic gradients match central finite differences") {
    // Fixed miniature network, random parameters (final layer included), and a
    // fixed random linear functional of both output channels as the loss.
    TinyNet net(mini_config());
    std::vector<double> params(net.param_count());
    Rng rng(12345);
    net.init_params_random(params, rng, 0.15);

    const int W = 8;
    const auto input = random_input(4, W, rng);
    const DoseContext dose{1.85e7, 0.05};
    const int t = 37;

    std::vector<Grid> d_out{Grid(W, W), Grid(W, W)};
    for (int ch = 0; ch < 2; ++ch)
        for (std::size_t i = 0; i < d_out[ch].size(); ++i) d_out[ch][i] = rng.normal();

    auto loss = [&](std::span<const double> p) {
        auto out = net.forward(p, input, W, t, dose);
        double acc = 0.0;
        for (int ch = 0; ch < 2; ++ch)
            for (std::size_t i = 0; i < out[ch].size(); ++i) acc += d_out[ch][i] * out[ch][i];
        return acc;
    };

    TinyNetTape tape;
    (void)net.forward(params, input, W, t, dose, tape);
    std::vector<double> grad(net.param_count(), 0.0);
    net.backward(params, tape, d_out, grad);

    const double h = 1e-5;
    std::size_t worst_idx = 0;
    double worst_rel = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double keep = params[i];
        params[i] = keep + h;
        const double lp = loss(params);
        params[i] = keep - h;
        const double lm = loss(params);
        params[i] = keep;
        const double numeric = (lp - lm) / (2.0 * h);
        const double denom = std::max({std::abs(numeric), std::abs(grad[i]), 1e-6});
        const double rel = std::abs(numeric - grad[i]) / denom;
        if (rel > worst_rel) {
            worst_rel = rel;
            worst_idx = i;
        }
    }
    INFO("worst parameter index " << worst_idx << " rel err " << worst_rel);
    CHECK(worst_rel < 1e-4);
}

TEST_CASE("embedding is deterministic; paper mode reduces at dose = 2 pi k") {
    TinyNetConfig cfg = mini_config();
    TinyNet net(cfg);
    std::vector<double> params(net.param_count());
    Rng rng(9);
    net.init_params_random(params, rng);

    const DoseContext d1{1e7, 0.1};
    auto a = net.embed_condition(params, 13, d1);
    auto b = net.embed_condition(params, 13, d1);
    CHECK(a == b);

    // sin(2 pi k) ~ 0, cos ~ 1: the pre-affine encoding equals that of t + 1.
    const double two_pi_k = 2.0 * 3.14159265358979323846 * 1000.0;
    const auto enc =
        condition_encoding(40, DoseContext{two_pi_k, 0.5}, EmbeddingMode::paper, cfg.emb_len);
    const auto enc_ref = sinusoidal_encoding(41.0, cfg.emb_len);
    for (int i = 0; i < cfg.emb_len; ++i)
        CHECK(enc[i] == doctest::Approx(enc_ref[i]).epsilon(1e-9));
}

TEST_CASE("distinct ladder doses give pairwise distinct encodings") {
    const double full_dose = 3.7e8;
    const std::vector<double> ladder = {0.01, 0.02, 0.05, 0.10, 0.25, 0.50};
    std::vector<std::vector<double>> encs;
    for (double f : ladder)
        encs.push_back(
            condition_encoding(500, DoseContext{full_dose * f, f}, EmbeddingMode::paper, 64));
    for (std::size_t i = 0; i < encs.size(); ++i)
        for (std::size_t j = i + 1; j < encs.size(); ++j) {
            double max_diff = 0.0;
            for (int k = 0; k < 64; ++k)
                max_diff = std::max(max_diff, std::abs(encs[i][k] - encs[j][k]));
            CHECK(max_diff > 1e-6);
        }
}

TEST_CASE("fraction mode varies with the count fraction") {
    auto a = condition_encoding(10, DoseContext{3.7e6, 0.01}, EmbeddingMode::fraction, 32);
    auto b = condition_encoding(10, DoseContext{3.7e6, 0.02}, EmbeddingMode::fraction, 32);
    double max_diff = 0.0;
    for (int k = 0; k < 32; ++k) max_diff = std::max(max_diff, std::abs(a[k] - b[k]));
    CHECK(max_diff > 1e-6);
}
