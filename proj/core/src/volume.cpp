#include "petdiff/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace petdiff {

Grid Volume3D::slice(int s) const {
    if (s < 0 || s >= slices) throw ArgumentError("Volume3D::slice: index out of range");
    Grid g(width, width);
    const float* src = data.data() + static_cast<std::size_t>(s) * width * width;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = src[i];
    return g;
}

void Volume3D::set_slice(int s, const Grid& g) {
    if (s < 0 || s >= slices) throw ArgumentError("Volume3D::set_slice: index out of range");
    if (g.width() != width || g.height() != width)
        throw ArgumentError("Volume3D::set_slice: grid shape mismatch");
    float* dst = data.data() + static_cast<std::size_t>(s) * width * width;
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] = static_cast<float>(g[i]);
}

double Volume3D::total_activity() const {
    double s = 0.0;
    for (float v : data) s += v;
    return s;
}

void Volume3D::validate(const char* where) const {
    if (width <= 0 || slices <= 0)
        throw ArgumentError(std::string(where) + ": non-positive dimensions");
    if (data.size() != voxel_count())
        throw ArgumentError(std::string(where) + ": payload size does not match dimensions");
    for (float v : data) {
        if (!std::isfinite(v)) throw ArgumentError(std::string(where) + ": non-finite voxel");
        if (v < 0.0f) throw ArgumentError(std::string(where) + ": negative voxel");
    }
}

// ---------------------------------------------------------------------------
// Phantom generation

PhantomSpec PhantomSpec::standard() {
    PhantomSpec spec;
    spec.background_activity = 0.0;
    spec.axial_gradient = 0.3;
    spec.texture_amp = 0.08;
    // Coordinates are fractions of (W, W, S); resolved at generation time.
    spec.ellipsoids = {
        {{0.50, 0.50, 0.50}, {0.41, 0.41, 0.45}, 100.0},  // body
        {{0.32, 0.35, 0.38}, {0.16, 0.16, 0.19}, 160.0},  // warm organ
        {{0.66, 0.62, 0.56}, {0.08, 0.08, 0.08}, 150.0},  // low-contrast lesion (1.5x)
        {{0.41, 0.69, 0.69}, {0.06, 0.06, 0.06}, 300.0},  // hot insert
        {{0.62, 0.31, 0.62}, {0.09, 0.09, 0.09}, 30.0},   // cold insert
    };
    return spec;
}

namespace {

// Smooth low-frequency random field in [-1, 1]: a fixed number of random-phase
// cosine waves with seeded directions.
struct TextureField {
    struct Wave {
        double kx, ky, kz, phase;
    };
    std::vector<Wave> waves;

    TextureField(Rng& rng, int count) {
        waves.reserve(count);
        for (int i = 0; i < count; ++i) {
            Wave w;
            w.kx = (rng.uniform() * 2.0 - 1.0) * 2.0;
            w.ky = (rng.uniform() * 2.0 - 1.0) * 2.0;
            w.kz = (rng.uniform() * 2.0 - 1.0) * 2.0;
            w.phase = rng.uniform() * 6.283185307179586477;
            waves.push_back(w);
        }
    }

    double eval(double u, double v, double w) const {
        double s = 0.0;
        for (const auto& wa : waves)
            s += std::cos(6.283185307179586477 * (wa.kx * u + wa.ky * v + wa.kz * w) + wa.phase);
        return s / static_cast<double>(waves.size());
    }
};

}  // namespace

Volume3D generate_phantom(std::uint64_t seed, int width, int slices, const PhantomSpec& spec) {
    if (width < 8 || slices < 8)
        throw ConfigError("generate_phantom: W and S must be >= 8");
    if (spec.background_activity < 0.0)
        throw ConfigError("generate_phantom: negative background activity");
    for (const auto& e : spec.ellipsoids)
        if (e.activity < 0.0) throw ConfigError("generate_phantom: negative ellipsoid activity");

    Volume3D vol;
    vol.width = width;
    vol.slices = slices;
    vol.voxel_size_mm = spec.voxel_size_mm;
    vol.dose_bq = spec.dose_bq;
    vol.count_fraction = 1.0;
    vol.data.assign(vol.voxel_count(), 0.0f);

    Rng rng(mix_seed(seed, 0x7061686e));
    TextureField texture(rng, 6);

    for (int s = 0; s < slices; ++s) {
        const double axial = 1.0 + spec.axial_gradient * ((s - 0.5 * (slices - 1)) /
                                                          static_cast<double>(slices));
        for (int y = 0; y < width; ++y) {
            for (int x = 0; x < width; ++x) {
                double a = spec.background_activity;
                // Painter's order: later ellipsoids override earlier ones.
                for (const auto& e : spec.ellipsoids) {
                    const double cx = e.center[0] * width, cy = e.center[1] * width,
                                 cz = e.center[2] * slices;
                    const double rx = e.radii[0] * width, ry = e.radii[1] * width,
                                 rz = e.radii[2] * slices;
                    const double dx = (x - cx) / rx, dy = (y - cy) / ry, dz = (s - cz) / rz;
                    if (dx * dx + dy * dy + dz * dz <= 1.0) a = e.activity;
                }
                if (a > 0.0) {
                    double m = axial;
                    if (spec.texture_amp > 0.0)
                        m *= 1.0 + spec.texture_amp *
                                       texture.eval(x / static_cast<double>(width),
                                                    y / static_cast<double>(width),
                                                    s / static_cast<double>(slices));
                    a *= std::max(m, 0.0);
                }
                vol.at(s, y, x) = static_cast<float>(a);
            }
        }
    }
    return vol;
}

// ---------------------------------------------------------------------------
// Count degradation

Volume3D degrade_counts(const Volume3D& vol, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0) || fraction > 1.0)
        throw ArgumentError("degrade_counts: fraction must be in (0, 1]");
    vol.validate("degrade_counts");

    Volume3D out = vol;
    out.count_fraction = fraction;
    out.dose_bq = vol.dose_bq * fraction;
    Rng rng(mix_seed(seed, 0x64656772));
    for (auto& v : out.data) {
        const double lam = fraction * static_cast<double>(v);
        v = static_cast<float>(static_cast<double>(rng.poisson(lam)) / fraction);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Conditioning windows

SliceWindow extract_window(const Volume3D& vol, int s, int n) {
    if (n < 1 || n % 2 == 0) throw ConfigError("extract_window: n must be odd and >= 1");
    if (n > 2 * vol.slices - 1)
        throw ConfigError("extract_window: n exceeds 2*S - 1");
    if (s < 0 || s >= vol.slices)
        throw ArgumentError("extract_window: slice index out of range");

    SliceWindow w;
    w.center = s;
    w.n = n;
    w.width = vol.width;
    w.data.resize(static_cast<std::size_t>(n) * vol.width * vol.width);
    const int half = (n - 1) / 2;
    for (int c = 0; c < n; ++c) {
        const int src = std::clamp(s - half + c, 0, vol.slices - 1);
        const float* p = vol.data.data() + static_cast<std::size_t>(src) * vol.width * vol.width;
        double* dst = w.data.data() + static_cast<std::size_t>(c) * vol.width * vol.width;
        for (int i = 0; i < vol.width * vol.width; ++i) dst[i] = p[i];
    }
    return w;
}

// ---------------------------------------------------------------------------
// Normalization

std::pair<Volume3D, double> normalize_activity(const Volume3D& vol) {
    if (!(vol.dose_bq > 0.0)) throw ArgumentError("normalize_activity: dose_bq must be > 0");
    Volume3D out = vol;
    const double inv = 1.0 / vol.dose_bq;
    for (auto& v : out.data) v = static_cast<float>(static_cast<double>(v) * inv);
    return {std::move(out), vol.dose_bq};
}

// ---------------------------------------------------------------------------
// File I/O

namespace {

std::string strip_vol_suffix(const std::string& path) {
    for (const char* suf : {".vol.json", ".vol.raw"}) {
        const std::size_t n = std::strlen(suf);
        if (path.size() > n && path.compare(path.size() - n, n, suf) == 0)
            return path.substr(0, path.size() - n);
    }
    return path;
}

static_assert(std::endian::native == std::endian::little,
              "volume payload I/O assumes a little-endian host");

}  // namespace

void write_volume(const Volume3D& vol, const std::string& path) {
    vol.validate("write_volume");
    const std::string base = strip_vol_suffix(path);

    nlohmann::json header = {
        {"width", vol.width},
        {"height", vol.width},
        {"slices", vol.slices},
        {"voxel_size_mm", {vol.voxel_size_mm[0], vol.voxel_size_mm[1], vol.voxel_size_mm[2]}},
        {"dose_bq", vol.dose_bq},
        {"count_fraction", vol.count_fraction},
    };
    std::ofstream jh(base + ".vol.json");
    if (!jh) throw FormatError("write_volume: cannot open " + base + ".vol.json");
    jh << header.dump(2) << "\n";
    jh.close();

    std::ofstream raw(base + ".vol.raw", std::ios::binary);
    if (!raw) throw FormatError("write_volume: cannot open " + base + ".vol.raw");
    raw.write(reinterpret_cast<const char*>(vol.data.data()),
              static_cast<std::streamsize>(vol.data.size() * sizeof(float)));
    if (!raw) throw FormatError("write_volume: short write to " + base + ".vol.raw");
}

Volume3D read_volume(const std::string& path) {
    const std::string base = strip_vol_suffix(path);

    std::ifstream jh(base + ".vol.json");
    if (!jh) throw FormatError("read_volume: cannot open " + base + ".vol.json");
    nlohmann::json header;
    try {
        jh >> header;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("read_volume: bad header JSON: " + std::string(e.what()));
    }

    Volume3D vol;
    try {
        vol.width = header.at("width").get<int>();
        const int height = header.at("height").get<int>();
        vol.slices = header.at("slices").get<int>();
        if (height != vol.width)
            throw FormatError("read_volume: non-square slices unsupported (width != height)");
        auto vs = header.at("voxel_size_mm");
        vol.voxel_size_mm = {vs.at(0).get<double>(), vs.at(1).get<double>(),
                             vs.at(2).get<double>()};
        vol.dose_bq = header.at("dose_bq").get<double>();
        vol.count_fraction = header.at("count_fraction").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("read_volume: missing/invalid header field: " + std::string(e.what()));
    }
    if (vol.width <= 0 || vol.slices <= 0)
        throw FormatError("read_volume: header declares empty volume (width=" +
                          std::to_string(vol.width) + " slices=" + std::to_string(vol.slices) +
                          ")");

    std::ifstream raw(base + ".vol.raw", std::ios::binary | std::ios::ate);
    if (!raw) throw FormatError("read_volume: cannot open " + base + ".vol.raw");
    const std::streamsize actual = raw.tellg();
    const std::streamsize expected =
        static_cast<std::streamsize>(vol.voxel_count() * sizeof(float));
    if (actual != expected)
        throw FormatError("read_volume: payload size mismatch: expected " +
                          std::to_string(expected) + " bytes, got " + std::to_string(actual));
    raw.seekg(0);
    vol.data.resize(vol.voxel_count());
    raw.read(reinterpret_cast<char*>(vol.data.data()), expected);
    if (!raw) throw FormatError("read_volume: short read from " + base + ".vol.raw");

    for (std::size_t i = 0; i < vol.data.size(); ++i)
        if (!std::isfinite(vol.data[i]))
            throw FormatError("read_volume: non-finite value at voxel offset " +
                              std::to_string(i));
    return vol;
}

void write_slice_pgms(const Volume3D& vol, const std::string& prefix, double lo, double hi) {
    if (!(hi > lo)) throw ArgumentError("write_slice_pgms: require hi > lo");
    const double scale = 255.0 / (hi - lo);
    std::vector<unsigned char> row(vol.width);
    for (int s = 0; s < vol.slices; ++s) {
        char name[32];
        std::snprintf(name, sizeof name, "_s%03d.pgm", s);
        std::ofstream f(prefix + name, std::ios::binary);
        if (!f) throw FormatError("write_slice_pgms: cannot open " + prefix + name);
        f << "P5\n" << vol.width << " " << vol.width << "\n255\n";
        for (int y = 0; y < vol.width; ++y) {
            for (int x = 0; x < vol.width; ++x) {
                const double v = (vol.at(s, y, x) - lo) * scale;
                row[x] = static_cast<unsigned char>(std::clamp(v, 0.0, 255.0));
            }
            f.write(reinterpret_cast<const char*>(row.data()), vol.width);
        }
    }
}

}  // namespace petdiff
