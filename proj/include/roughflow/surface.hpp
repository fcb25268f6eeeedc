/// @file surface.hpp
/// @brief Weierstrass–Mandelbrot rough-wall profiles and their lattice rasterization.
#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace roughflow::surface {

struct FractalSurfaceSpec {
    double amplitude = 0.0;          ///< spectral amplitude A_s
    double gamma = 1.5;              ///< frequency scaling factor, > 1
    double fractal_dimension = 1.5;  ///< D, strictly inside (1, 2)
    int n_min = 0;
    int n_max = 6;
    std::uint64_t phase_seed = 0;
    /// Explicit phases, one per mode n_min..n_max. Empty means "draw from phase_seed".
    std::vector<double> phases;

    /// Throws ParameterError when a parameter is outside its domain.
    void validate() const;
    int mode_count() const { return n_max - n_min + 1; }
    /// Phase of mode n, either explicit or keyed by (phase_seed, n).
    double phase(int n) const;
    /// Amplitude weight of mode n: A_s * gamma^(-n (D - 1)).
    double mode_weight(int n) const;
};

enum class WallSide { bottom, top };

struct WallProfile {
    std::vector<double> x;  ///< streamwise sample positions (lattice units)
    std::vector<double> y;  ///< elevation above the wall's base row (lattice units)
    WallSide side = WallSide::bottom;

    void validate() const;
    /// Piecewise-linear elevation at x; clamps outside the sampled range.
    double elevation_at(double x) const;
};

struct RoughnessStats {
    double h_avg = 0.0;
    double h_max = 0.0;
    double h_min = 0.0;
};

/// Evaluates the W–M sum at every sample. `length_scale` divides x before it
/// enters the cosine, so profiles over a lattice of nx columns use nx here.
WallProfile generate_wm_profile(const FractalSurfaceSpec& spec, std::span<const double> x_samples,
                                WallSide side = WallSide::bottom, double length_scale = 1.0);

/// Mean-absolute (Ra-style) height, peak and trough relative to the profile mean.
RoughnessStats roughness_stats(const WallProfile& profile);

/// Builds the wall actually rasterized on an nx-column lattice: the W–M
/// profile sampled at x = 0..nx-1 with length scale nx, shifted so its lowest
/// trough sits on the base row. When `target_height` > 0 the amplitude is
/// rescaled so the realized peak-to-trough height equals it.
WallProfile make_wall(const FractalSurfaceSpec& spec, int nx, WallSide side,
                      double target_height = 0.0);

/// Row-major (x fastest) solid/fluid flags for an nx x ny lattice.
class SolidMask {
public:
    SolidMask() = default;
    SolidMask(int nx, int ny) : nx_(nx), ny_(ny), solid_(std::size_t(nx) * ny, 0) {}

    int nx() const { return nx_; }
    int ny() const { return ny_; }
    std::size_t size() const { return solid_.size(); }
    std::size_t index(int i, int j) const { return std::size_t(j) * nx_ + i; }
    bool in_bounds(int i, int j) const { return i >= 0 && i < nx_ && j >= 0 && j < ny_; }
    bool solid(int i, int j) const { return solid_[index(i, j)] != 0; }
    bool fluid(int i, int j) const { return !solid(i, j); }
    void set_solid(int i, int j, bool s = true) { solid_[index(i, j)] = s ? 1 : 0; }
    std::size_t fluid_count() const;

    /// Highest solid row of the bottom wall in column i (-1 if none).
    int bottom_surface_row(int i) const;
    /// Lowest solid row of the top wall in column i (ny if none).
    int top_surface_row(int i) const;

    /// True when the fluid nodes form one 4-connected component touching
    /// both the first and the last column.
    bool fluid_connected_inlet_to_outlet() const;

    bool operator==(const SolidMask&) const = default;

private:
    int nx_ = 0;
    int ny_ = 0;
    std::vector<std::uint8_t> solid_;
};

/// Rounds half-up: 2.5 -> 3, 2.4 -> 2, -0.5 -> 0.
int round_half_up(double v);

/// Node (i, j) is solid iff j <= round(bottom(i)) or j >= ny - 1 - round(top(i)).
/// Rows 0 and ny-1 are always solid. Throws GeometryError naming the first
/// column left with fewer than 3 fluid nodes.
SolidMask rasterize_walls(const WallProfile& top, const WallProfile& bottom, int nx, int ny,
                          double mean_gap);

}  // namespace roughflow::surface
