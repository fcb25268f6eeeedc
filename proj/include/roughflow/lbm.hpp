/// @file lbm.hpp
/// @brief D2Q9 BGK lattice Boltzmann solver for rough-walled channels.
///
/// Lattice units throughout (dx = dt = 1). Populations are stored
/// structure-of-arrays, direction-major, with nodes row-major (x fastest).
/// Walls use link-wise bounce-back on the rasterized solid mask; the inlet
/// and outlet columns use Zou–He velocity and pressure closures.
#pragma once

#include "roughflow/surface.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace roughflow::lbm {

inline constexpr int Q = 9;
inline constexpr std::array<int, Q> cx{0, 1, 0, -1, 0, 1, -1, -1, 1};
inline constexpr std::array<int, Q> cy{0, 0, 1, 0, -1, 1, 1, -1, -1};
inline constexpr std::array<int, Q> opposite{0, 3, 4, 1, 2, 7, 8, 5, 6};
inline constexpr std::array<double, Q> weights{4.0 / 9,  1.0 / 9,  1.0 / 9,  1.0 / 9, 1.0 / 9,
                                               1.0 / 36, 1.0 / 36, 1.0 / 36, 1.0 / 36};
inline constexpr double cs2 = 1.0 / 3.0;

/// tau = nu / cs^2 + 1/2. Throws ParameterError for nu <= 0.
double tau_from_viscosity(double nu);
double viscosity_from_tau(double tau);
/// p = cs^2 rho.
double pressure_from_density(double rho);
/// Second-order Hermite equilibrium.
std::array<double, Q> equilibrium(double rho, double ux, double uy);

struct FlowParams {
    double inlet_speed = 0.05;
    double viscosity = 0.1;
    double tau = 0.8;
    double outlet_pressure = cs2;
    double reynolds = 0.0;  ///< diagnostic, U_i H / nu
    /// The inlet speed rises from 0 to U_i along a half cosine over this many
    /// steps. An impulsive start excites an x/t checkerboard mode of the
    /// momentum that BGK streaming leaves undamped next to the pressure outlet.
    std::uint64_t ramp_steps = 1000;

    /// Inlet speed applied while advancing from step t to t + 1.
    double inlet_speed_at(std::uint64_t t) const;

    static FlowParams from_viscosity(double inlet_speed, double nu, double height,
                                     double outlet_pressure = cs2);
    static FlowParams from_reynolds(double inlet_speed, double re, double height,
                                    double outlet_pressure = cs2);
    /// tau > 1/2 and U_i < 0.1.
    void validate() const;
};

enum class StreamwiseBoundary { inlet_outlet, periodic };

struct LatticeSpec {
    surface::SolidMask mask;
    StreamwiseBoundary streamwise = StreamwiseBoundary::inlet_outlet;
    bool periodic_y = false;

    int nx() const { return mask.nx(); }
    int ny() const { return mask.ny(); }
};

/// Macroscopic fields at one timestep. Solid nodes hold quiet NaN in every field.
struct FieldSnapshot {
    std::uint64_t step = 0;
    int nx = 0;
    int ny = 0;
    std::vector<double> rho, u, v, p;

    std::size_t index(int i, int j) const { return std::size_t(j) * nx + i; }
    bool solid(int i, int j) const;
    /// Mask reconstructed from the NaN sentinels.
    surface::SolidMask mask() const;
};

struct LbmState {
    int nx = 0;
    int ny = 0;
    std::uint64_t t = 0;
    std::vector<double> f;  ///< [Q][ny][nx]
    std::vector<double> rho, u, v;

    std::size_t nodes() const { return std::size_t(nx) * ny; }
    double& pop(int q, std::size_t n) { return f[std::size_t(q) * nodes() + n]; }
    double pop(int q, std::size_t n) const { return f[std::size_t(q) * nodes() + n]; }
};

class Solver {
public:
    Solver(LatticeSpec lattice, FlowParams params);

    /// Sets every fluid node to equilibrium at (rho, ux, uy).
    void initialize_equilibrium(double rho = 1.0, double ux = 0.0, double uy = 0.0);
    /// Per-node equilibrium initialization from row-major fields (solid entries ignored).
    void initialize_equilibrium(std::span<const double> rho, std::span<const double> ux,
                                std::span<const double> uy);

    /// One full update: collide, stream, bounce-back, inlet/outlet closures, moments.
    void collide_and_stream();
    void run(std::uint64_t steps);

    // Individual phases of collide_and_stream, exposed for testing.
    void collide();
    void stream();
    void apply_bounce_back();
    void apply_inlet_velocity(double inlet_speed);
    void apply_outlet_pressure(double outlet_pressure);
    /// Recomputes rho, u, v from the populations; throws InstabilityError on non-finite values.
    void update_moments();

    const LbmState& state() const { return state_; }
    /// Direct population access for tests and custom initial states.
    LbmState& mutable_state() { return state_; }
    std::span<double> post_collision() { return post_; }

    const LatticeSpec& lattice() const { return lattice_; }
    const FlowParams& params() const { return params_; }

    FieldSnapshot snapshot() const;
    /// Sum of rho over fluid nodes.
    double total_mass() const;

private:
    void build_links();

    LatticeSpec lattice_;
    FlowParams params_;
    LbmState state_;
    std::vector<double> post_;
    std::vector<std::uint32_t> fluid_nodes_;
    std::vector<std::int32_t> source_;  ///< [Q][node]: >= 0 source node, -1 bounce, -2 open
    std::vector<std::pair<std::uint8_t, std::uint32_t>> bounce_links_;
    std::vector<std::uint32_t> inlet_nodes_;
    std::vector<double> inlet_speed_factor_;  ///< 0 at wall-touching inlet nodes, else 1
    std::vector<std::uint32_t> outlet_nodes_;
};

struct Schedule {
    std::uint64_t total_steps = 0;
    std::uint64_t snapshot_interval = 1;
};

/// Runs from rest equilibrium, emitting the t = 0 snapshot, every multiple of
/// the interval, and the final step.
void run_simulation(const LatticeSpec& lattice, const FlowParams& params, const Schedule& schedule,
                    const std::function<void(const FieldSnapshot&)>& sink);

/// Advances until the largest change of |u| over `check_interval` steps falls
/// below `tolerance`, or `max_steps` is reached. Returns steps taken.
std::uint64_t run_to_steady(Solver& solver, double tolerance, std::uint64_t max_steps,
                            std::uint64_t check_interval = 100);

}  // namespace roughflow::lbm
