#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "petdiff/grid.hpp"

namespace petdiff {

// 3D activity volume: S slices of W x W float32 voxels in slice-major order
// (z, then row, then column), plus acquisition metadata. Values are expected
// counts at full dose; count_fraction == 1 marks ground truth.
struct Volume3D {
    int width = 0;   // W (slice is W x W)
    int slices = 0;  // S
    std::array<double, 3> voxel_size_mm{1.0, 1.0, 1.0};
    double dose_bq = 0.0;
    double count_fraction = 1.0;
    std::vector<float> data;  // slices * width * width

    std::size_t voxel_count() const {
        return static_cast<std::size_t>(slices) * width * width;
    }
    float& at(int s, int y, int x) {
        return data[(static_cast<std::size_t>(s) * width + y) * width + x];
    }
    float at(int s, int y, int x) const {
        return data[(static_cast<std::size_t>(s) * width + y) * width + x];
    }

    Grid slice(int s) const;           // copy slice s into a double grid
    void set_slice(int s, const Grid& g);

    double total_activity() const;
    void validate(const char* where) const;  // shape/finiteness/non-negativity
};

// Conditioning window: n consecutive slices centered on s, clamped to the
// volume ends, in ascending slice order. Stored channel-major (slice, row, col).
struct SliceWindow {
    int center = 0;
    int n = 0;
    int width = 0;
    std::vector<double> data;  // n * width * width

    const double* channel(int c) const {
        return data.data() + static_cast<std::size_t>(c) * width * width;
    }
};

struct Ellipsoid {
    std::array<double, 3> center{};  // (x, y, z) in voxel units
    std::array<double, 3> radii{};   // in voxel units
    double activity = 0.0;
};

// Synthetic phantom description: background level inside a body ellipsoid,
// a list of inserts (painter's order: later ellipsoids override earlier),
// an axial activity gradient, and an optional smooth random texture.
struct PhantomSpec {
    double background_activity = 0.0;
    std::vector<Ellipsoid> ellipsoids;
    double axial_gradient = 0.0;  // relative activity slope end-to-end along z
    double texture_amp = 0.0;     // relative amplitude of smooth random texture
    double dose_bq = 3.7e8;
    std::array<double, 3> voxel_size_mm{2.0, 2.0, 2.0};

    // Body + warm insert + low-contrast lesion (1.5x background) + hot insert
    // + cold insert, with gradient and texture. Scaled to any W, S.
    static PhantomSpec standard();
};

Volume3D generate_phantom(std::uint64_t seed, int width, int slices, const PhantomSpec& spec);

// Poisson count thinning: per voxel draw Poisson(fraction * value) / fraction,
// so expected activity is preserved while variance scales as value/fraction.
Volume3D degrade_counts(const Volume3D& vol, double fraction, std::uint64_t seed);

SliceWindow extract_window(const Volume3D& vol, int s, int n);

// Divides voxel data by dose_bq; returns the scale for exact inversion.
std::pair<Volume3D, double> normalize_activity(const Volume3D& vol);

// Volume file pair: <base>.vol.json header + <base>.vol.raw float32 LE payload.
// `path` may be the header path, the raw path, or the bare base path.
void write_volume(const Volume3D& vol, const std::string& path);
Volume3D read_volume(const std::string& path);

// 8-bit binary PGM per slice, linear windowing of [lo, hi]; files <prefix>_sNNN.pgm.
void write_slice_pgms(const Volume3D& vol, const std::string& prefix, double lo, double hi);

}  // namespace petdiff
