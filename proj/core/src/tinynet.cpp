#include "petdiff/tinynet.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace petdiff {

namespace {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double silu(double x) { return x * sigmoid(x); }
inline double silu_grad(double x) {
    const double s = sigmoid(x);
    return s * (1.0 + x * (1.0 - s));
}

// 3x3 convolution, stride 1, zero padding 1. Tensors are channel-major (c, y, x).
void conv_s1(const double* in, int in_c, int h, int w, const double* wt, const double* bias,
             int out_c, double* out) {
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int oc = 0; oc < out_c; ++oc)
        std::fill(out + oc * plane, out + (oc + 1) * plane, bias[oc]);
    for (int oc = 0; oc < out_c; ++oc) {
        double* op = out + oc * plane;
        for (int ic = 0; ic < in_c; ++ic) {
            const double* ip = in + ic * plane;
            const double* wp = wt + (static_cast<std::size_t>(oc) * in_c + ic) * 9;
            for (int ky = 0; ky < 3; ++ky) {
                const int dy = ky - 1;
                const int y0 = std::max(0, -dy), y1 = h - 1 - std::max(0, dy);
                for (int kx = 0; kx < 3; ++kx) {
                    const int dx = kx - 1;
                    const int x0 = std::max(0, -dx), x1 = w - 1 - std::max(0, dx);
                    const double wv = wp[ky * 3 + kx];
                    if (wv == 0.0) continue;
                    for (int y = y0; y <= y1; ++y) {
                        double* orow = op + static_cast<std::size_t>(y) * w;
                        const double* irow = ip + static_cast<std::size_t>(y + dy) * w + dx;
                        for (int x = x0; x <= x1; ++x) orow[x] += wv * irow[x];
                    }
                }
            }
        }
    }
}

// Backward of conv_s1: accumulates input gradient and weight/bias gradients.
void conv_s1_back(const double* in, int in_c, int h, int w, const double* wt, int out_c,
                  const double* d_out, double* d_in, double* d_wt, double* d_bias) {
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int oc = 0; oc < out_c; ++oc) {
        const double* dop = d_out + oc * plane;
        double acc = 0.0;
        for (std::size_t i = 0; i < plane; ++i) acc += dop[i];
        d_bias[oc] += acc;
        for (int ic = 0; ic < in_c; ++ic) {
            const double* ip = in + ic * plane;
            double* dip = d_in ? d_in + ic * plane : nullptr;
            const std::size_t wbase = (static_cast<std::size_t>(oc) * in_c + ic) * 9;
            for (int ky = 0; ky < 3; ++ky) {
                const int dy = ky - 1;
                const int y0 = std::max(0, -dy), y1 = h - 1 - std::max(0, dy);
                for (int kx = 0; kx < 3; ++kx) {
                    const int dx = kx - 1;
                    const int x0 = std::max(0, -dx), x1 = w - 1 - std::max(0, dx);
                    const double wv = wt[wbase + ky * 3 + kx];
                    double wacc = 0.0;
                    for (int y = y0; y <= y1; ++y) {
                        const double* dorow = dop + static_cast<std::size_t>(y) * w;
                        const double* irow = ip + static_cast<std::size_t>(y + dy) * w + dx;
                        for (int x = x0; x <= x1; ++x) wacc += dorow[x] * irow[x];
                        if (dip) {
                            double* dirow = dip + static_cast<std::size_t>(y + dy) * w + dx;
                            for (int x = x0; x <= x1; ++x) dirow[x] += wv * dorow[x];
                        }
                    }
                    d_wt[wbase + ky * 3 + kx] += wacc;
                }
            }
        }
    }
}

// 3x3 convolution, stride 2, zero padding 1; output is h/2 x w/2.
void conv_s2(const double* in, int in_c, int h, int w, const double* wt, const double* bias,
             int out_c, double* out) {
    const int ho = h / 2, wo = w / 2;
    const std::size_t iplane = static_cast<std::size_t>(h) * w;
    const std::size_t oplane = static_cast<std::size_t>(ho) * wo;
    for (int oc = 0; oc < out_c; ++oc)
        std::fill(out + oc * oplane, out + (oc + 1) * oplane, bias[oc]);
    for (int oc = 0; oc < out_c; ++oc) {
        double* op = out + oc * oplane;
        for (int ic = 0; ic < in_c; ++ic) {
            const double* ip = in + ic * iplane;
            const double* wp = wt + (static_cast<std::size_t>(oc) * in_c + ic) * 9;
            for (int ky = 0; ky < 3; ++ky) {
                const int dy = ky - 1;
                const int y0 = (dy < 0) ? 1 : 0;
                for (int kx = 0; kx < 3; ++kx) {
                    const int dx = kx - 1;
                    const int x0 = (dx < 0) ? 1 : 0;
                    const double wv = wp[ky * 3 + kx];
                    if (wv == 0.0) continue;
                    for (int y = y0; y < ho; ++y) {
                        double* orow = op + static_cast<std::size_t>(y) * wo;
                        const double* irow = ip + static_cast<std::size_t>(2 * y + dy) * w + dx;
                        for (int x = x0; x < wo; ++x) orow[x] += wv * irow[2 * x];
                    }
                }
            }
        }
    }
}

void conv_s2_back(const double* in, int in_c, int h, int w, const double* wt, int out_c,
                  const double* d_out, double* d_in, double* d_wt, double* d_bias) {
    const int ho = h / 2, wo = w / 2;
    const std::size_t iplane = static_cast<std::size_t>(h) * w;
    const std::size_t oplane = static_cast<std::size_t>(ho) * wo;
    for (int oc = 0; oc < out_c; ++oc) {
        const double* dop = d_out + oc * oplane;
        double acc = 0.0;
        for (std::size_t i = 0; i < oplane; ++i) acc += dop[i];
        d_bias[oc] += acc;
        for (int ic = 0; ic < in_c; ++ic) {
            const double* ip = in + ic * iplane;
            double* dip = d_in ? d_in + ic * iplane : nullptr;
            const std::size_t wbase = (static_cast<std::size_t>(oc) * in_c + ic) * 9;
            for (int ky = 0; ky < 3; ++ky) {
                const int dy = ky - 1;
                const int y0 = (dy < 0) ? 1 : 0;
                for (int kx = 0; kx < 3; ++kx) {
                    const int dx = kx - 1;
                    const int x0 = (dx < 0) ? 1 : 0;
                    const double wv = wt[wbase + ky * 3 + kx];
                    double wacc = 0.0;
                    for (int y = y0; y < ho; ++y) {
                        const double* dorow = dop + static_cast<std::size_t>(y) * wo;
                        const double* irow = ip + static_cast<std::size_t>(2 * y + dy) * w + dx;
                        for (int x = x0; x < wo; ++x) wacc += dorow[x] * irow[2 * x];
                        if (dip) {
                            double* dirow = dip + static_cast<std::size_t>(2 * y + dy) * w + dx;
                            for (int x = x0; x < wo; ++x) dirow[2 * x] += wv * dorow[x];
                        }
                    }
                    d_wt[wbase + ky * 3 + kx] += wacc;
                }
            }
        }
    }
}

// Nearest-neighbour 2x upsampling.
void upsample2(const double* in, int c, int h, int w, double* out) {
    const int ho = 2 * h, wo = 2 * w;
    for (int ci = 0; ci < c; ++ci) {
        const double* ip = in + static_cast<std::size_t>(ci) * h * w;
        double* op = out + static_cast<std::size_t>(ci) * ho * wo;
        for (int y = 0; y < ho; ++y) {
            const double* irow = ip + static_cast<std::size_t>(y / 2) * w;
            double* orow = op + static_cast<std::size_t>(y) * wo;
            for (int x = 0; x < wo; ++x) orow[x] = irow[x / 2];
        }
    }
}

void upsample2_back(const double* d_out, int c, int h, int w, double* d_in) {
    // h, w are the *input* (coarse) dims; d_out is 2h x 2w.
    const int ho = 2 * h, wo = 2 * w;
    for (int ci = 0; ci < c; ++ci) {
        const double* dop = d_out + static_cast<std::size_t>(ci) * ho * wo;
        double* dip = d_in + static_cast<std::size_t>(ci) * h * w;
        for (int y = 0; y < ho; ++y) {
            const double* dorow = dop + static_cast<std::size_t>(y) * wo;
            double* dirow = dip + static_cast<std::size_t>(y / 2) * w;
            for (int x = 0; x < wo; ++x) dirow[x / 2] += dorow[x];
        }
    }
}

void add_channel_bias(double* t, int c, std::size_t plane, const double* per_channel) {
    for (int ci = 0; ci < c; ++ci) {
        double* p = t + ci * plane;
        const double v = per_channel[ci];
        for (std::size_t i = 0; i < plane; ++i) p[i] += v;
    }
}

void silu_inplace(const double* z, double* a, std::size_t count) {
    for (std::size_t i = 0; i < count; ++i) a[i] = silu(z[i]);
}

}  // namespace

// ---------------------------------------------------------------------------

struct TinyNet::Offsets {
    std::size_t emb_fc1_w, emb_fc1_b, emb_fc2_w, emb_fc2_b;
    std::size_t enc0_w, enc0_b, proj0_w, proj0_b;
    std::size_t enc1_w, enc1_b, proj1_w, proj1_b;
    std::size_t enc2_w, enc2_b, proj2_w, proj2_b;
    std::size_t dec1_w, dec1_b, proj3_w, proj3_b;
    std::size_t dec0_w, dec0_b, proj4_w, proj4_b;
    std::size_t out_w, out_b;
};

namespace {
// One Offsets instance per net; rebuilt from the segment list on demand.
TinyNet::Segment seg(const char* name, std::size_t& cursor, std::size_t count) {
    TinyNet::Segment s{name, cursor, count};
    cursor += count;
    return s;
}
}  // namespace

TinyNet::TinyNet(const TinyNetConfig& cfg) : cfg_(cfg) {
    if (cfg.in_channels < 1 || cfg.out_channels < 1 || cfg.base_width < 1)
        throw ConfigError("TinyNet: non-positive channel/width configuration");
    if (cfg.emb_len < 4 || cfg.emb_len % 2 != 0)
        throw ConfigError("TinyNet: emb_len must be even and >= 4");

    const int b = cfg.base_width, L = cfg.emb_len;
    std::size_t c = 0;
    segs_ = {
        seg("emb_fc1_w", c, static_cast<std::size_t>(L) * L),
        seg("emb_fc1_b", c, L),
        seg("emb_fc2_w", c, static_cast<std::size_t>(L) * L),
        seg("emb_fc2_b", c, L),
        seg("enc0_w", c, static_cast<std::size_t>(b) * cfg.in_channels * 9),
        seg("enc0_b", c, b),
        seg("proj0_w", c, static_cast<std::size_t>(b) * L),
        seg("proj0_b", c, b),
        seg("enc1_w", c, static_cast<std::size_t>(2 * b) * b * 9),
        seg("enc1_b", c, 2 * b),
        seg("proj1_w", c, static_cast<std::size_t>(2 * b) * L),
        seg("proj1_b", c, 2 * b),
        seg("enc2_w", c, static_cast<std::size_t>(4 * b) * 2 * b * 9),
        seg("enc2_b", c, 4 * b),
        seg("proj2_w", c, static_cast<std::size_t>(4 * b) * L),
        seg("proj2_b", c, 4 * b),
        seg("dec1_w", c, static_cast<std::size_t>(2 * b) * 4 * b * 9),
        seg("dec1_b", c, 2 * b),
        seg("proj3_w", c, static_cast<std::size_t>(2 * b) * L),
        seg("proj3_b", c, 2 * b),
        seg("dec0_w", c, static_cast<std::size_t>(b) * 2 * b * 9),
        seg("dec0_b", c, b),
        seg("proj4_w", c, static_cast<std::size_t>(b) * L),
        seg("proj4_b", c, b),
        seg("out_w", c, static_cast<std::size_t>(cfg.out_channels) * b * 9),
        seg("out_b", c, cfg.out_channels),
    };
    total_ = c;
}

const TinyNet::Offsets& TinyNet::off() const {
    static thread_local Offsets o;
    auto find = [&](const char* n) {
        for (const auto& s : segs_)
            if (s.name == n) return s.offset;
        throw ConfigError("TinyNet: missing segment");
    };
    o.emb_fc1_w = find("emb_fc1_w");
    o.emb_fc1_b = find("emb_fc1_b");
    o.emb_fc2_w = find("emb_fc2_w");
    o.emb_fc2_b = find("emb_fc2_b");
    o.enc0_w = find("enc0_w");
    o.enc0_b = find("enc0_b");
    o.proj0_w = find("proj0_w");
    o.proj0_b = find("proj0_b");
    o.enc1_w = find("enc1_w");
    o.enc1_b = find("enc1_b");
    o.proj1_w = find("proj1_w");
    o.proj1_b = find("proj1_b");
    o.enc2_w = find("enc2_w");
    o.enc2_b = find("enc2_b");
    o.proj2_w = find("proj2_w");
    o.proj2_b = find("proj2_b");
    o.dec1_w = find("dec1_w");
    o.dec1_b = find("dec1_b");
    o.proj3_w = find("proj3_w");
    o.proj3_b = find("proj3_b");
    o.dec0_w = find("dec0_w");
    o.dec0_b = find("dec0_b");
    o.proj4_w = find("proj4_w");
    o.proj4_b = find("proj4_b");
    o.out_w = find("out_w");
    o.out_b = find("out_b");
    return o;
}

void TinyNet::init_params(std::span<double> params, Rng& rng) const {
    if (params.size() != total_) throw ArgumentError("TinyNet::init_params: bad span size");
    const int L = cfg_.emb_len;
    for (const auto& s : segs_) {
        double* p = params.data() + s.offset;
        const bool bias = s.name.size() > 2 && s.name.ends_with("_b");
        if (bias || s.name == "out_w") {
            std::fill(p, p + s.count, 0.0);
            continue;
        }
        double std_dev;
        if (s.name.starts_with("emb_") || s.name.starts_with("proj"))
            std_dev = std::sqrt(1.0 / L);
        else if (s.name == "enc0_w")
            std_dev = std::sqrt(2.0 / (cfg_.in_channels * 9.0));
        else if (s.name == "enc1_w")
            std_dev = std::sqrt(2.0 / (cfg_.base_width * 9.0));
        else if (s.name == "enc2_w" || s.name == "dec0_w")
            std_dev = std::sqrt(2.0 / (2.0 * cfg_.base_width * 9.0));
        else  // dec1_w
            std_dev = std::sqrt(2.0 / (4.0 * cfg_.base_width * 9.0));
        for (std::size_t i = 0; i < s.count; ++i) p[i] = std_dev * rng.normal();
    }
}

void TinyNet::init_params_random(std::span<double> params, Rng& rng, double scale) const {
    if (params.size() != total_) throw ArgumentError("TinyNet::init_params_random: bad span size");
    for (std::size_t i = 0; i < total_; ++i) params[i] = scale * rng.normal();
}

std::vector<double> TinyNet::embed_condition(std::span<const double> params, int t,
                                             const DoseContext& dose) const {
    if (t < 1) throw ArgumentError("embed_condition: t must be >= 1");
    if (params.size() != total_) throw ArgumentError("embed_condition: bad params size");
    const int L = cfg_.emb_len;
    const auto& o = off();
    const auto enc = condition_encoding(t, dose, cfg_.emb_mode, L);
    std::vector<double> h1(L), emb(L);
    for (int i = 0; i < L; ++i) {
        double acc = params[o.emb_fc1_b + i];
        const double* w = params.data() + o.emb_fc1_w + static_cast<std::size_t>(i) * L;
        for (int j = 0; j < L; ++j) acc += w[j] * enc[j];
        h1[i] = silu(acc);
    }
    for (int i = 0; i < L; ++i) {
        double acc = params[o.emb_fc2_b + i];
        const double* w = params.data() + o.emb_fc2_w + static_cast<std::size_t>(i) * L;
        for (int j = 0; j < L; ++j) acc += w[j] * h1[j];
        emb[i] = acc;
    }
    return emb;
}

std::vector<Grid> TinyNet::forward(std::span<const double> params,
                                   std::span<const double> input, int width, int t,
                                   const DoseContext& dose) const {
    TinyNetTape tape;
    return forward(params, input, width, t, dose, tape);
}

std::vector<Grid> TinyNet::forward(std::span<const double> params,
                                   std::span<const double> input, int width, int t,
                                   const DoseContext& dose, TinyNetTape& tape) const {
    if (params.size() != total_) throw ArgumentError("TinyNet::forward: bad params size");
    if (width < 8 || width % 4 != 0)
        throw ArgumentError("TinyNet::forward: width must be a multiple of 4, >= 8");
    if (input.size() != static_cast<std::size_t>(cfg_.in_channels) * width * width)
        throw ArgumentError("TinyNet::forward: input size does not match in_channels * W * W");
    if (t < 1) throw ArgumentError("TinyNet::forward: t must be >= 1");

    const int b = cfg_.base_width, L = cfg_.emb_len;
    const int W = width, W2 = W / 2, W4 = W / 4;
    const std::size_t P = static_cast<std::size_t>(W) * W;
    const std::size_t P2 = static_cast<std::size_t>(W2) * W2;
    const std::size_t P4 = static_cast<std::size_t>(W4) * W4;
    const auto& o = off();
    const double* pp = params.data();

    tape.width = W;
    tape.input.assign(input.begin(), input.end());

    // Conditioning embedding (taped pre-activation for the backward pass).
    tape.enc_raw = condition_encoding(t, dose, cfg_.emb_mode, L);
    tape.emb_h1.resize(L);
    tape.emb_a1.resize(L);
    tape.emb.resize(L);
    for (int i = 0; i < L; ++i) {
        double acc = pp[o.emb_fc1_b + i];
        const double* w = pp + o.emb_fc1_w + static_cast<std::size_t>(i) * L;
        for (int j = 0; j < L; ++j) acc += w[j] * tape.enc_raw[j];
        tape.emb_h1[i] = acc;
        tape.emb_a1[i] = silu(acc);
    }
    for (int i = 0; i < L; ++i) {
        double acc = pp[o.emb_fc2_b + i];
        const double* w = pp + o.emb_fc2_w + static_cast<std::size_t>(i) * L;
        for (int j = 0; j < L; ++j) acc += w[j] * tape.emb_a1[j];
        tape.emb[i] = acc;
    }

    auto project = [&](std::size_t w_off, std::size_t b_off, int channels) {
        std::vector<double> pc(channels);
        for (int c = 0; c < channels; ++c) {
            double acc = pp[b_off + c];
            const double* w = pp + w_off + static_cast<std::size_t>(c) * L;
            for (int j = 0; j < L; ++j) acc += w[j] * tape.emb[j];
            pc[c] = acc;
        }
        return pc;
    };

    // Encoder.
    tape.z0.resize(static_cast<std::size_t>(b) * P);
    conv_s1(tape.input.data(), cfg_.in_channels, W, W, pp + o.enc0_w, pp + o.enc0_b, b,
            tape.z0.data());
    add_channel_bias(tape.z0.data(), b, P, project(o.proj0_w, o.proj0_b, b).data());
    tape.a0.resize(tape.z0.size());
    silu_inplace(tape.z0.data(), tape.a0.data(), tape.z0.size());

    tape.z1.resize(static_cast<std::size_t>(2 * b) * P2);
    conv_s2(tape.a0.data(), b, W, W, pp + o.enc1_w, pp + o.enc1_b, 2 * b, tape.z1.data());
    add_channel_bias(tape.z1.data(), 2 * b, P2, project(o.proj1_w, o.proj1_b, 2 * b).data());
    tape.a1.resize(tape.z1.size());
    silu_inplace(tape.z1.data(), tape.a1.data(), tape.z1.size());

    tape.z2.resize(static_cast<std::size_t>(4 * b) * P4);
    conv_s2(tape.a1.data(), 2 * b, W2, W2, pp + o.enc2_w, pp + o.enc2_b, 4 * b, tape.z2.data());
    add_channel_bias(tape.z2.data(), 4 * b, P4, project(o.proj2_w, o.proj2_b, 4 * b).data());
    tape.a2.resize(tape.z2.size());
    silu_inplace(tape.z2.data(), tape.a2.data(), tape.z2.size());

    // Decoder with additive skips.
    tape.u1.resize(static_cast<std::size_t>(4 * b) * P2);
    upsample2(tape.a2.data(), 4 * b, W4, W4, tape.u1.data());
    tape.z3.resize(static_cast<std::size_t>(2 * b) * P2);
    conv_s1(tape.u1.data(), 4 * b, W2, W2, pp + o.dec1_w, pp + o.dec1_b, 2 * b, tape.z3.data());
    for (std::size_t i = 0; i < tape.z3.size(); ++i) tape.z3[i] += tape.a1[i];
    add_channel_bias(tape.z3.data(), 2 * b, P2, project(o.proj3_w, o.proj3_b, 2 * b).data());
    tape.a3.resize(tape.z3.size());
    silu_inplace(tape.z3.data(), tape.a3.data(), tape.z3.size());

    tape.u0.resize(static_cast<std::size_t>(2 * b) * P);
    upsample2(tape.a3.data(), 2 * b, W2, W2, tape.u0.data());
    tape.z4.resize(static_cast<std::size_t>(b) * P);
    conv_s1(tape.u0.data(), 2 * b, W, W, pp + o.dec0_w, pp + o.dec0_b, b, tape.z4.data());
    for (std::size_t i = 0; i < tape.z4.size(); ++i) tape.z4[i] += tape.a0[i];
    add_channel_bias(tape.z4.data(), b, P, project(o.proj4_w, o.proj4_b, b).data());
    tape.a4.resize(tape.z4.size());
    silu_inplace(tape.z4.data(), tape.a4.data(), tape.z4.size());

    std::vector<double> out(static_cast<std::size_t>(cfg_.out_channels) * P);
    conv_s1(tape.a4.data(), b, W, W, pp + o.out_w, pp + o.out_b, cfg_.out_channels, out.data());

    std::vector<Grid> result;
    result.reserve(cfg_.out_channels);
    for (int c = 0; c < cfg_.out_channels; ++c) {
        Grid g(W, W);
        std::memcpy(g.data(), out.data() + static_cast<std::size_t>(c) * P, P * sizeof(double));
        result.push_back(std::move(g));
    }
    return result;
}

void TinyNet::backward(std::span<const double> params, const TinyNetTape& tape,
                       const std::vector<Grid>& d_out, std::span<double> grad) const {
    if (params.size() != total_ || grad.size() != total_)
        throw ArgumentError("TinyNet::backward: bad span size");
    if (static_cast<int>(d_out.size()) != cfg_.out_channels)
        throw ArgumentError("TinyNet::backward: d_out channel count mismatch");

    const int b = cfg_.base_width, L = cfg_.emb_len;
    const int W = tape.width, W2 = W / 2, W4 = W / 4;
    const std::size_t P = static_cast<std::size_t>(W) * W;
    const std::size_t P2 = static_cast<std::size_t>(W2) * W2;
    const std::size_t P4 = static_cast<std::size_t>(W4) * W4;
    const auto& o = off();
    const double* pp = params.data();
    double* gp = grad.data();

    std::vector<double> d_emb(L, 0.0);
    auto project_back = [&](const std::vector<double>& d_z, std::size_t plane, int channels,
                            std::size_t w_off, std::size_t b_off) {
        for (int c = 0; c < channels; ++c) {
            const double* p = d_z.data() + c * plane;
            double acc = 0.0;
            for (std::size_t i = 0; i < plane; ++i) acc += p[i];
            gp[b_off + c] += acc;
            const double* w = pp + w_off + static_cast<std::size_t>(c) * L;
            double* dw = gp + w_off + static_cast<std::size_t>(c) * L;
            for (int j = 0; j < L; ++j) {
                dw[j] += acc * tape.emb[j];
                d_emb[j] += acc * w[j];
            }
        }
    };

    // Final convolution.
    std::vector<double> d_final(static_cast<std::size_t>(cfg_.out_channels) * P);
    for (int c = 0; c < cfg_.out_channels; ++c)
        std::memcpy(d_final.data() + static_cast<std::size_t>(c) * P, d_out[c].data(),
                    P * sizeof(double));
    std::vector<double> d_a4(static_cast<std::size_t>(b) * P, 0.0);
    conv_s1_back(tape.a4.data(), b, W, W, pp + o.out_w, cfg_.out_channels, d_final.data(),
                 d_a4.data(), gp + o.out_w, gp + o.out_b);

    // dec0 level.
    std::vector<double> d_z4(d_a4.size());
    for (std::size_t i = 0; i < d_z4.size(); ++i) d_z4[i] = d_a4[i] * silu_grad(tape.z4[i]);
    project_back(d_z4, P, b, o.proj4_w, o.proj4_b);
    std::vector<double> d_a0(static_cast<std::size_t>(b) * P);
    std::memcpy(d_a0.data(), d_z4.data(), d_z4.size() * sizeof(double));  // skip branch
    std::vector<double> d_u0(static_cast<std::size_t>(2 * b) * P, 0.0);
    conv_s1_back(tape.u0.data(), 2 * b, W, W, pp + o.dec0_w, b, d_z4.data(), d_u0.data(),
                 gp + o.dec0_w, gp + o.dec0_b);
    std::vector<double> d_a3(static_cast<std::size_t>(2 * b) * P2, 0.0);
    upsample2_back(d_u0.data(), 2 * b, W2, W2, d_a3.data());

    // dec1 level.
    std::vector<double> d_z3(d_a3.size());
    for (std::size_t i = 0; i < d_z3.size(); ++i) d_z3[i] = d_a3[i] * silu_grad(tape.z3[i]);
    project_back(d_z3, P2, 2 * b, o.proj3_w, o.proj3_b);
    std::vector<double> d_a1(static_cast<std::size_t>(2 * b) * P2);
    std::memcpy(d_a1.data(), d_z3.data(), d_z3.size() * sizeof(double));  // skip branch
    std::vector<double> d_u1(static_cast<std::size_t>(4 * b) * P2, 0.0);
    conv_s1_back(tape.u1.data(), 4 * b, W2, W2, pp + o.dec1_w, 2 * b, d_z3.data(), d_u1.data(),
                 gp + o.dec1_w, gp + o.dec1_b);
    std::vector<double> d_a2(static_cast<std::size_t>(4 * b) * P4, 0.0);
    upsample2_back(d_u1.data(), 4 * b, W4, W4, d_a2.data());

    // enc2 level.
    std::vector<double> d_z2(d_a2.size());
    for (std::size_t i = 0; i < d_z2.size(); ++i) d_z2[i] = d_a2[i] * silu_grad(tape.z2[i]);
    project_back(d_z2, P4, 4 * b, o.proj2_w, o.proj2_b);
    conv_s2_back(tape.a1.data(), 2 * b, W2, W2, pp + o.enc2_w, 4 * b, d_z2.data(), d_a1.data(),
                 gp + o.enc2_w, gp + o.enc2_b);

    // enc1 level.
    std::vector<double> d_z1(d_a1.size());
    for (std::size_t i = 0; i < d_z1.size(); ++i) d_z1[i] = d_a1[i] * silu_grad(tape.z1[i]);
    project_back(d_z1, P2, 2 * b, o.proj1_w, o.proj1_b);
    conv_s2_back(tape.a0.data(), b, W, W, pp + o.enc1_w, 2 * b, d_z1.data(), d_a0.data(),
                 gp + o.enc1_w, gp + o.enc1_b);

    // enc0 level (input gradient not needed).
    std::vector<double> d_z0(d_a0.size());
    for (std::size_t i = 0; i < d_z0.size(); ++i) d_z0[i] = d_a0[i] * silu_grad(tape.z0[i]);
    project_back(d_z0, P, b, o.proj0_w, o.proj0_b);
    conv_s1_back(tape.input.data(), cfg_.in_channels, W, W, pp + o.enc0_w, b, d_z0.data(),
                 nullptr, gp + o.enc0_w, gp + o.enc0_b);

    // Embedding MLP backward (shared across all level projections).
    std::vector<double> d_a1e(L, 0.0);
    for (int i = 0; i < L; ++i) {
        gp[o.emb_fc2_b + i] += d_emb[i];
        const double* w = pp + o.emb_fc2_w + static_cast<std::size_t>(i) * L;
        double* dw = gp + o.emb_fc2_w + static_cast<std::size_t>(i) * L;
        for (int j = 0; j < L; ++j) {
            dw[j] += d_emb[i] * tape.emb_a1[j];
            d_a1e[j] += d_emb[i] * w[j];
        }
    }
    for (int i = 0; i < L; ++i) {
        const double dh = d_a1e[i] * silu_grad(tape.emb_h1[i]);
        gp[o.emb_fc1_b + i] += dh;
        double* dw = gp + o.emb_fc1_w + static_cast<std::size_t>(i) * L;
        for (int j = 0; j < L; ++j) dw[j] += dh * tape.enc_raw[j];
    }
}

}  // namespace petdiff
