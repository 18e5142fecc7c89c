#pragma once

#include <span>
#include <string>
#include <vector>

#include "petdiff/conditioning.hpp"
#include "petdiff/grid.hpp"

namespace petdiff {

// Convolutional encoder-decoder used by both the noise predictor (out_channels = 2:
// eps and the variance-interpolation coefficient v) and the prior denoiser
// (out_channels = 1). Three resolution levels (W, W/2, W/4), widths
// (base, 2*base, 4*base), additive skip connections, and a conditioning
// embedding added per-channel after an affine projection at each level.
// The final convolution is zero-initialized so an untrained net outputs zeros.
struct TinyNetConfig {
    int in_channels = 2;
    int out_channels = 2;
    int base_width = 16;
    int emb_len = 64;
    EmbeddingMode emb_mode = EmbeddingMode::paper;
};

struct TinyNetTape;  // forward/backward intermediate activations (opaque-ish)

class TinyNet {
public:
    explicit TinyNet(const TinyNetConfig& cfg);

    const TinyNetConfig& config() const { return cfg_; }
    std::size_t param_count() const { return total_; }

    // He init for hidden layers, zero-initialized final convolution.
    void init_params(std::span<double> params, Rng& rng) const;
    // Randomizes every tensor including the final convolution; gradient checks
    // need a non-degenerate output layer.
    void init_params_random(std::span<double> params, Rng& rng, double scale = 0.1) const;

    // input: in_channels * W * W, channel-major. W must be a multiple of 4, >= 8.
    std::vector<Grid> forward(std::span<const double> params, std::span<const double> input,
                              int width, int t, const DoseContext& dose) const;
    std::vector<Grid> forward(std::span<const double> params, std::span<const double> input,
                              int width, int t, const DoseContext& dose,
                              TinyNetTape& tape) const;

    // Accumulates d(loss)/d(params) into grad given d(loss)/d(output channel) maps.
    // d_out must have one grid per output channel.
    void backward(std::span<const double> params, const TinyNetTape& tape,
                  const std::vector<Grid>& d_out, std::span<double> grad) const;

    // The learned conditioning embedding: sinusoidal encoding of (t, dose) passed
    // through two affine maps with SiLU between them. Deterministic per parameters.
    std::vector<double> embed_condition(std::span<const double> params, int t,
                                        const DoseContext& dose) const;

    // Named parameter segments, for checkpoint diagnostics and tests.
    struct Segment {
        std::string name;
        std::size_t offset;
        std::size_t count;
    };
    const std::vector<Segment>& segments() const { return segs_; }

private:
    struct Offsets;
    const Offsets& off() const;

    TinyNetConfig cfg_;
    std::vector<Segment> segs_;
    std::size_t total_ = 0;
};

// Intermediate activations captured by the taped forward pass.
struct TinyNetTape {
    int width = 0;
    std::vector<double> input;
    std::vector<double> enc_raw, emb_h1, emb_a1, emb;  // embedding pipeline
    std::vector<double> z0, a0, z1, a1, z2, a2;        // encoder
    std::vector<double> u1, z3, a3, u0, z4, a4;        // decoder
};

}  // namespace petdiff
