#include "roughflow/surface.hpp"

#include "roughflow/error.hpp"
#include "roughflow/random.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <queue>
#include <string>

namespace roughflow::surface {

void FractalSurfaceSpec::validate() const {
    if (!(fractal_dimension > 1.0 && fractal_dimension < 2.0)) {
        throw ParameterError("fractal dimension D must satisfy 1 < D < 2, got " +
                             std::to_string(fractal_dimension));
    }
    if (!(gamma > 1.0)) {
        throw ParameterError("frequency scaling gamma must exceed 1, got " + std::to_string(gamma));
    }
    if (n_max < n_min) {
        throw ParameterError("mode range empty: n_max " + std::to_string(n_max) + " < n_min " +
                             std::to_string(n_min));
    }
    if (!std::isfinite(amplitude)) throw ParameterError("amplitude must be finite");
    if (!phases.empty() && static_cast<int>(phases.size()) != mode_count()) {
        throw ParameterError("expected " + std::to_string(mode_count()) + " explicit phases, got " +
                             std::to_string(phases.size()));
    }
}

double FractalSurfaceSpec::phase(int n) const {
    if (!phases.empty()) return phases[static_cast<std::size_t>(n - n_min)];
    const auto key = derive_seed(phase_seed, static_cast<std::uint64_t>(static_cast<std::int64_t>(n)));
    return 2.0 * std::numbers::pi * unit_real(key);
}

double FractalSurfaceSpec::mode_weight(int n) const {
    return amplitude * std::pow(gamma, -static_cast<double>(n) * (fractal_dimension - 1.0));
}

void WallProfile::validate() const {
    if (x.size() != y.size() || x.size() < 2) {
        throw ParameterError("wall profile needs equal-length x/y arrays of at least 2 samples");
    }
    for (std::size_t k = 1; k < x.size(); ++k) {
        if (!(x[k] > x[k - 1])) throw ParameterError("wall profile x samples must strictly increase");
    }
}

double WallProfile::elevation_at(double xq) const {
    if (xq <= x.front()) return y.front();
    if (xq >= x.back()) return y.back();
    const auto it = std::upper_bound(x.begin(), x.end(), xq);
    const auto k = static_cast<std::size_t>(it - x.begin());
    const double s = (xq - x[k - 1]) / (x[k] - x[k - 1]);
    return y[k - 1] + s * (y[k] - y[k - 1]);
}

WallProfile generate_wm_profile(const FractalSurfaceSpec& spec, std::span<const double> x_samples,
                                WallSide side, double length_scale) {
    spec.validate();
    if (x_samples.empty()) throw ParameterError("no x samples");
    for (std::size_t k = 1; k < x_samples.size(); ++k) {
        if (!(x_samples[k] > x_samples[k - 1])) {
            throw ParameterError("x samples must strictly increase");
        }
    }
    if (!(length_scale > 0.0)) throw ParameterError("length scale must be positive");

    const int modes = spec.mode_count();
    std::vector<double> weight(modes), wavenumber(modes), phase(modes);
    for (int m = 0; m < modes; ++m) {
        const int n = spec.n_min + m;
        weight[m] = std::pow(spec.gamma, -static_cast<double>(n) * (spec.fractal_dimension - 1.0));
        wavenumber[m] = 2.0 * std::numbers::pi * std::pow(spec.gamma, static_cast<double>(n));
        phase[m] = spec.phase(n);
    }

    WallProfile out;
    out.side = side;
    out.x.assign(x_samples.begin(), x_samples.end());
    out.y.resize(x_samples.size());
    for (std::size_t k = 0; k < x_samples.size(); ++k) {
        const double xs = x_samples[k] / length_scale;
        double sum = 0.0;
        for (int m = 0; m < modes; ++m) sum += weight[m] * std::cos(wavenumber[m] * xs + phase[m]);
        out.y[k] = spec.amplitude * sum;
    }
    return out;
}

RoughnessStats roughness_stats(const WallProfile& profile) {
    profile.validate();
    const auto n = static_cast<double>(profile.y.size());
    double mean = 0.0;
    for (double v : profile.y) mean += v;
    mean /= n;
    RoughnessStats s;
    s.h_max = -INFINITY;
    s.h_min = INFINITY;
    for (double v : profile.y) {
        const double d = v - mean;
        s.h_avg += std::abs(d);
        s.h_max = std::max(s.h_max, d);
        s.h_min = std::min(s.h_min, d);
    }
    s.h_avg /= n;
    return s;
}

WallProfile make_wall(const FractalSurfaceSpec& spec, int nx, WallSide side, double target_height) {
    if (nx < 2) throw ParameterError("lattice needs at least 2 columns");
    std::vector<double> xs(static_cast<std::size_t>(nx));
    for (int i = 0; i < nx; ++i) xs[i] = i;
    auto profile = generate_wm_profile(spec, xs, side, static_cast<double>(nx));
    const auto [lo, hi] = std::minmax_element(profile.y.begin(), profile.y.end());
    const double base = *lo;
    const double span = *hi - *lo;
    double scale = 1.0;
    if (target_height > 0.0) {
        if (!(span > 0.0)) {
            throw ParameterError("cannot rescale a flat profile to a nonzero roughness height");
        }
        scale = target_height / span;
    }
    for (double& v : profile.y) v = (v - base) * scale;
    return profile;
}

std::size_t SolidMask::fluid_count() const {
    return static_cast<std::size_t>(std::count(solid_.begin(), solid_.end(), std::uint8_t{0}));
}

int SolidMask::bottom_surface_row(int i) const {
    int j = -1;
    while (j + 1 < ny_ && solid(i, j + 1)) ++j;
    return j;
}

int SolidMask::top_surface_row(int i) const {
    int j = ny_;
    while (j - 1 >= 0 && solid(i, j - 1)) --j;
    return j;
}

bool SolidMask::fluid_connected_inlet_to_outlet() const {
    const std::size_t total = fluid_count();
    if (total == 0) return false;
    std::vector<std::uint8_t> seen(solid_.size(), 0);
    std::queue<std::pair<int, int>> frontier;
    for (int j = 0; j < ny_ && frontier.empty(); ++j) {
        if (fluid(0, j)) {
            frontier.emplace(0, j);
            seen[index(0, j)] = 1;
        }
    }
    std::size_t reached = 0;
    bool touches_outlet = false;
    while (!frontier.empty()) {
        const auto [i, j] = frontier.front();
        frontier.pop();
        ++reached;
        touches_outlet = touches_outlet || i == nx_ - 1;
        constexpr int di[4] = {1, -1, 0, 0};
        constexpr int dj[4] = {0, 0, 1, -1};
        for (int k = 0; k < 4; ++k) {
            const int a = i + di[k], b = j + dj[k];
            if (in_bounds(a, b) && fluid(a, b) && !seen[index(a, b)]) {
                seen[index(a, b)] = 1;
                frontier.emplace(a, b);
            }
        }
    }
    return touches_outlet && reached == total;
}

int round_half_up(double v) { return static_cast<int>(std::floor(v + 0.5)); }

SolidMask rasterize_walls(const WallProfile& top, const WallProfile& bottom, int nx, int ny,
                          double mean_gap) {
    top.validate();
    bottom.validate();
    if (nx < 2 || ny < 5) throw ParameterError("lattice must be at least 2 x 5 nodes");
    if (!(mean_gap > 0.0) || mean_gap > ny) {
        throw ParameterError("mean gap H=" + std::to_string(mean_gap) + " does not fit in ny=" +
                             std::to_string(ny));
    }
    for (const auto* p : {&top, &bottom}) {
        if (p->x.front() > 0.0 || p->x.back() < nx - 1) {
            throw ParameterError("wall profile must span columns [0, nx)");
        }
    }
    SolidMask mask(nx, ny);
    for (int i = 0; i < nx; ++i) {
        const int b = std::max(0, round_half_up(bottom.elevation_at(i)));
        const int t = ny - 1 - std::max(0, round_half_up(top.elevation_at(i)));
        for (int j = 0; j < ny; ++j) {
            if (j <= b || j >= t) mask.set_solid(i, j);
        }
        const int fluid = std::max(0, t - b - 1);
        if (fluid < 3) {
            throw GeometryError("channel pinch-off at column " + std::to_string(i) + ": " +
                                std::to_string(fluid) + " fluid nodes (< 3)");
        }
    }
    return mask;
}

}  // namespace roughflow::surface
