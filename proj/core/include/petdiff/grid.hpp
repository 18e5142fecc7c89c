#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "petdiff/errors.hpp"
#include "petdiff/rng.hpp"

namespace petdiff {

// Dense 2D image of doubles, row-major. The working pixel type of the diffusion
// machinery; volumes store float32 and convert at the slice boundary.
class Grid {
public:
    Grid() = default;
    Grid(int width, int height, double fill = 0.0)
        : w_(width), h_(height), v_(static_cast<std::size_t>(width) * height, fill) {
        if (width <= 0 || height <= 0) throw ArgumentError("Grid: non-positive dimensions");
    }

    int width() const { return w_; }
    int height() const { return h_; }
    std::size_t size() const { return v_.size(); }

    double& operator[](std::size_t i) { return v_[i]; }
    double operator[](std::size_t i) const { return v_[i]; }
    double& at(int x, int y) { return v_[static_cast<std::size_t>(y) * w_ + x]; }
    double at(int x, int y) const { return v_[static_cast<std::size_t>(y) * w_ + x]; }

    double* data() { return v_.data(); }
    const double* data() const { return v_.data(); }

    bool same_shape(const Grid& o) const { return w_ == o.w_ && h_ == o.h_; }

    void fill_normal(Rng& rng) {
        for (auto& x : v_) x = rng.normal();
    }

    bool all_finite() const {
        for (double x : v_)
            if (!std::isfinite(x)) return false;
        return true;
    }

    double mean() const {
        double s = 0.0;
        for (double x : v_) s += x;
        return s / static_cast<double>(v_.size());
    }

    double sum() const {
        double s = 0.0;
        for (double x : v_) s += x;
        return s;
    }

private:
    int w_ = 0, h_ = 0;
    std::vector<double> v_;
};

inline void require_same_shape(const Grid& a, const Grid& b, const char* where) {
    if (!a.same_shape(b))
        throw ArgumentError(std::string(where) + ": grid shape mismatch");
}

}  // namespace petdiff
