#include "petdiff/prior.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>

namespace petdiff {

PriorBackend PriorBackend::make_smoothing(double sigma_mm) {
    if (!(sigma_mm > 0.0)) throw ArgumentError("PriorBackend: sigma_mm must be > 0");
    PriorBackend b;
    b.kind = Kind::smoothing;
    b.sigma_mm = sigma_mm;
    return b;
}

namespace {

std::vector<double> gaussian_kernel(double sigma_vox) {
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma_vox)));
    std::vector<double> k(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        k[i + radius] = std::exp(-0.5 * (i / sigma_vox) * (i / sigma_vox));
        sum += k[i + radius];
    }
    for (auto& v : k) v /= sum;
    return k;
}

// 1D pass along one axis with clamped, renormalized windows.
void blur_axis(std::vector<double>& data, int nx, int ny, int nz, int axis, double sigma_vox) {
    if (sigma_vox <= 0.0) return;
    const auto kernel = gaussian_kernel(sigma_vox);
    const int radius = (static_cast<int>(kernel.size()) - 1) / 2;
    const int dims[3] = {nx, ny, nz};
    const std::size_t strides[3] = {1, static_cast<std::size_t>(nx),
                                    static_cast<std::size_t>(nx) * ny};
    const int len = dims[axis];
    const std::size_t stride = strides[axis];

    const int u_dim = (axis == 0) ? ny : nx;
    const int v_dim = (axis == 2) ? ny : nz;
    const std::size_t u_stride = (axis == 0) ? strides[1] : strides[0];
    const std::size_t v_stride = (axis == 2) ? strides[1] : strides[2];

    std::vector<double> line(len);
    for (int v = 0; v < v_dim; ++v) {
        for (int u = 0; u < u_dim; ++u) {
            const std::size_t base = u * u_stride + v * v_stride;
            for (int i = 0; i < len; ++i) line[i] = data[base + i * stride];
            for (int i = 0; i < len; ++i) {
                const int lo = std::max(0, i - radius), hi = std::min(len - 1, i + radius);
                double acc = 0.0, wsum = 0.0;
                for (int j = lo; j <= hi; ++j) {
                    const double w = kernel[j - i + radius];
                    acc += w * line[j];
                    wsum += w;
                }
                data[base + i * stride] = acc / wsum;
            }
        }
    }
}

}  // namespace

Volume3D smooth_prior(const Volume3D& vol, double sigma_mm) {
    if (!(sigma_mm > 0.0)) throw ArgumentError("smooth_prior: sigma_mm must be > 0");
    vol.validate("smooth_prior");

    std::vector<double> buf(vol.voxel_count());
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = vol.data[i];

    blur_axis(buf, vol.width, vol.width, vol.slices, 0, sigma_mm / vol.voxel_size_mm[0]);
    blur_axis(buf, vol.width, vol.width, vol.slices, 1, sigma_mm / vol.voxel_size_mm[1]);
    blur_axis(buf, vol.width, vol.width, vol.slices, 2, sigma_mm / vol.voxel_size_mm[2]);

    Volume3D out = vol;
    for (std::size_t i = 0; i < buf.size(); ++i)
        out.data[i] = static_cast<float>(std::max(buf[i], 0.0));
    return out;
}

PriorBackend train_denoiser(const NoiseSchedule& schedule, const PairDataset& dataset,
                            const TrainConfig& config,
                            const std::optional<std::string>& log_path) {
    config.validate();
    if (dataset.empty()) throw ConfigError("train_denoiser: empty dataset");

    TinyNetConfig net_cfg;
    net_cfg.in_channels = config.n;
    net_cfg.out_channels = 1;
    TinyNet net(net_cfg);

    PriorBackend backend;
    backend.kind = PriorBackend::Kind::trained;
    backend.n = config.n;
    backend.net_cfg = net_cfg;
    backend.intensity_scale = config.intensity_scale;
    backend.params.resize(net.param_count());

    Rng init_rng(mix_seed(config.seed, 0x7072696fULL));
    net.init_params(backend.params, init_rng);

    std::ofstream log;
    if (log_path) {
        log.open(*log_path, std::ios::app);
        if (!log) throw ConfigError("train_denoiser: cannot open log " + *log_path);
        log << "step,loss_simple,loss_vlb,total,wall_ms\n";
    }

    const double inv_scale = 1.0 / config.intensity_scale;
    Rng rng(mix_seed(config.seed, 0x7072746eULL));
    AdamState adam(net.param_count());
    AdamConfig ac;
    ac.lr = config.lr;
    std::vector<double> grad(net.param_count());

    for (int step = 0; step < config.steps; ++step) {
        const auto t0 = std::chrono::steady_clock::now();
        std::fill(grad.begin(), grad.end(), 0.0);
        double loss = 0.0;
        for (int bi = 0; bi < config.batch; ++bi) {
            TrainSample s = sample_training_pair(dataset, rng, config.n);
            for (auto& v : s.window.data) v *= inv_scale;

            TinyNetTape tape;
            auto outs = net.forward(backend.params, s.window.data, s.window.width, 1, s.dose,
                                    tape);
            const Grid& pred = outs[0];
            Grid d_out(pred.width(), pred.height());
            const double inv_n = 1.0 / static_cast<double>(pred.size());
            double item_loss = 0.0;
            for (std::size_t i = 0; i < pred.size(); ++i) {
                const double target = s.x0[i] * inv_scale;
                const double d = pred[i] - target;
                item_loss += d * d;
                d_out[i] = 2.0 * d * inv_n / config.batch;
            }
            loss += item_loss * inv_n / config.batch;
            net.backward(backend.params, tape, {std::move(d_out)}, grad);
        }
        if (!std::isfinite(loss))
            throw TrainingError("train_denoiser: non-finite loss at step " +
                                std::to_string(step));
        adam_update(backend.params, grad, adam, ac);
        if (log) {
            const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                                std::chrono::steady_clock::now() - t0)
                                .count();
            log << step << ',' << loss << ",0," << loss << ',' << ms << '\n';
        }
    }
    (void)schedule;
    return backend;
}

Volume3D denoise(const PriorBackend& backend, const Volume3D& vol) {
    vol.validate("denoise");
    if (backend.kind == PriorBackend::Kind::smoothing)
        return smooth_prior(vol, backend.sigma_mm);

    TinyNet net(backend.net_cfg);
    if (backend.params.size() != net.param_count())
        throw ArgumentError("denoise: parameter count does not match backend architecture");

    const double scale = backend.intensity_scale;
    const DoseContext dose{vol.dose_bq, vol.count_fraction};
    Volume3D out = vol;
    for (int s = 0; s < vol.slices; ++s) {
        SliceWindow window = extract_window(vol, s, backend.n);
        for (auto& v : window.data) v /= scale;
        auto outs = net.forward(backend.params, window.data, window.width, 1, dose);
        Grid& g = outs[0];
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = std::max(g[i] * scale, 0.0);
        out.set_slice(s, g);
    }
    return out;
}

}  // namespace petdiff
