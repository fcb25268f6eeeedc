#include "roughflow/lbm.hpp"

#include "roughflow/error.hpp"
#include "roughflow/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <string>

namespace roughflow::lbm {

double tau_from_viscosity(double nu) {
    if (!(nu > 0.0)) throw ParameterError("viscosity must be positive, got " + std::to_string(nu));
    return nu / cs2 + 0.5;
}

double viscosity_from_tau(double tau) { return cs2 * (tau - 0.5); }

double pressure_from_density(double rho) { return cs2 * rho; }

std::array<double, Q> equilibrium(double rho, double ux, double uy) {
    std::array<double, Q> feq{};
    const double usq = ux * ux + uy * uy;
    for (int q = 0; q < Q; ++q) {
        const double cu = cx[q] * ux + cy[q] * uy;
        feq[q] = weights[q] * rho * (1.0 + cu / cs2 + cu * cu / (2.0 * cs2 * cs2) - usq / (2.0 * cs2));
    }
    return feq;
}

FlowParams FlowParams::from_viscosity(double inlet_speed, double nu, double height,
                                      double outlet_pressure) {
    FlowParams p;
    p.inlet_speed = inlet_speed;
    p.viscosity = nu;
    p.tau = tau_from_viscosity(nu);
    p.outlet_pressure = outlet_pressure;
    p.reynolds = inlet_speed * height / nu;
    return p;
}

FlowParams FlowParams::from_reynolds(double inlet_speed, double re, double height,
                                     double outlet_pressure) {
    if (!(re > 0.0)) throw ParameterError("Reynolds number must be positive");
    return from_viscosity(inlet_speed, inlet_speed * height / re, height, outlet_pressure);
}

double FlowParams::inlet_speed_at(std::uint64_t t) const {
    if (t >= ramp_steps) return inlet_speed;
    const double s = static_cast<double>(t) / static_cast<double>(ramp_steps);
    return inlet_speed * 0.5 * (1.0 - std::cos(std::numbers::pi * s));
}

void FlowParams::validate() const {
    if (!(tau > 0.5)) throw ParameterError("relaxation time must exceed 1/2, got " + std::to_string(tau));
    if (!(std::abs(inlet_speed) < 0.1)) {
        throw ParameterError("inlet speed must stay below 0.1 lattice units/step, got " +
                             std::to_string(inlet_speed));
    }
    if (!(outlet_pressure > 0.0)) throw ParameterError("outlet pressure must be positive");
}

bool FieldSnapshot::solid(int i, int j) const { return std::isnan(rho[index(i, j)]); }

surface::SolidMask FieldSnapshot::mask() const {
    surface::SolidMask m(nx, ny);
    for (int j = 0; j < ny; ++j) {
        for (int i = 0; i < nx; ++i) m.set_solid(i, j, solid(i, j));
    }
    return m;
}

Solver::Solver(LatticeSpec lattice, FlowParams params)
    : lattice_(std::move(lattice)), params_(params) {
    params_.validate();
    state_.nx = lattice_.nx();
    state_.ny = lattice_.ny();
    const std::size_t n = state_.nodes();
    state_.f.assign(Q * n, 0.0);
    state_.rho.assign(n, 0.0);
    state_.u.assign(n, 0.0);
    state_.v.assign(n, 0.0);
    post_.assign(Q * n, 0.0);
    build_links();
    initialize_equilibrium();
}

void Solver::build_links() {
    const int nx = lattice_.nx(), ny = lattice_.ny();
    const auto& mask = lattice_.mask;
    const std::size_t n = state_.nodes();
    const bool periodic_x = lattice_.streamwise == StreamwiseBoundary::periodic;
    source_.assign(Q * n, -1);
    fluid_nodes_.clear();
    bounce_links_.clear();
    inlet_nodes_.clear();
    inlet_speed_factor_.clear();
    outlet_nodes_.clear();
    for (int j = 0; j < ny; ++j) {
        for (int i = 0; i < nx; ++i) {
            if (mask.solid(i, j)) continue;
            const auto node = static_cast<std::uint32_t>(mask.index(i, j));
            fluid_nodes_.push_back(node);
            if (!periodic_x && i == 0) {
                inlet_nodes_.push_back(node);
                // Inlet nodes touching a wall are no-slip corners rather than
                // velocity sources: a uniform speed next to a no-slip wall
                // concentrates a pressure spike on them.
                bool touches_wall = false;
                for (int q = 1; q < Q; ++q) {
                    const int ni = i + cx[q], nj = j + cy[q];
                    if (ni >= 0 && mask.in_bounds(ni, nj) && mask.solid(ni, nj)) touches_wall = true;
                }
                inlet_speed_factor_.push_back(touches_wall ? 0.0 : 1.0);
            }
            if (!periodic_x && i == nx - 1) outlet_nodes_.push_back(node);
            for (int q = 0; q < Q; ++q) {
                int si = i - cx[q], sj = j - cy[q];
                std::int32_t src;
                if (si < 0 || si >= nx) {
                    if (periodic_x) {
                        si = (si + nx) % nx;
                    } else {
                        source_[q * n + node] = -2;
                        continue;
                    }
                }
                if (sj < 0 || sj >= ny) {
                    if (lattice_.periodic_y) {
                        sj = (sj + ny) % ny;
                    } else {
                        sj = -1;
                    }
                }
                if (sj < 0 || mask.solid(si, sj)) {
                    src = -1;
                    bounce_links_.emplace_back(static_cast<std::uint8_t>(q), node);
                } else {
                    src = static_cast<std::int32_t>(mask.index(si, sj));
                }
                source_[q * n + node] = src;
            }
        }
    }
}

void Solver::initialize_equilibrium(double rho, double ux, double uy) {
    const std::size_t n = state_.nodes();
    std::vector<double> r(n, rho), u(n, ux), v(n, uy);
    initialize_equilibrium(r, u, v);
}

void Solver::initialize_equilibrium(std::span<const double> rho, std::span<const double> ux,
                                    std::span<const double> uy) {
    const std::size_t n = state_.nodes();
    if (rho.size() != n || ux.size() != n || uy.size() != n) {
        throw ShapeError("initial fields must have nx*ny entries");
    }
    std::fill(state_.f.begin(), state_.f.end(), 0.0);
    std::fill(state_.rho.begin(), state_.rho.end(), 0.0);
    std::fill(state_.u.begin(), state_.u.end(), 0.0);
    std::fill(state_.v.begin(), state_.v.end(), 0.0);
    for (const auto node : fluid_nodes_) {
        if (!(rho[node] > 0.0)) throw ParameterError("initial density must be positive");
        const auto feq = equilibrium(rho[node], ux[node], uy[node]);
        for (int q = 0; q < Q; ++q) state_.pop(q, node) = feq[q];
    }
    state_.t = 0;
    update_moments();
}

void Solver::collide() {
    const std::size_t n = state_.nodes();
    const double omega = 1.0 / params_.tau;
    const auto count = static_cast<std::ptrdiff_t>(fluid_nodes_.size());
#pragma omp parallel for num_threads(thread_count()) schedule(static) if (count > 4096)
    for (std::ptrdiff_t k = 0; k < count; ++k) {
        const std::size_t node = fluid_nodes_[k];
        const double rho = state_.rho[node], ux = state_.u[node], uy = state_.v[node];
        const double usq = 1.5 * (ux * ux + uy * uy);
        for (int q = 0; q < Q; ++q) {
            const double cu = 3.0 * (cx[q] * ux + cy[q] * uy);
            const double feq = weights[q] * rho * (1.0 + cu + 0.5 * cu * cu - usq);
            const double f = state_.f[q * n + node];
            post_[q * n + node] = f - omega * (f - feq);
        }
    }
}

void Solver::stream() {
    const std::size_t n = state_.nodes();
    for (int q = 0; q < Q; ++q) {
        const std::int32_t* src = source_.data() + q * n;
        const double* from = post_.data() + q * n;
        double* to = state_.f.data() + q * n;
        for (const auto node : fluid_nodes_) {
            const std::int32_t s = src[node];
            if (s >= 0) to[node] = from[s];
        }
    }
}

void Solver::apply_bounce_back() {
    const std::size_t n = state_.nodes();
    for (const auto& [q, node] : bounce_links_) {
        state_.f[q * n + node] = post_[opposite[q] * n + node];
    }
}

void Solver::apply_inlet_velocity(double inlet_speed) {
    const std::size_t n = state_.nodes();
    auto f = [&](int q, std::size_t node) -> double& { return state_.f[q * n + node]; };
    for (std::size_t k = 0; k < inlet_nodes_.size(); ++k) {
        const auto node = inlet_nodes_[k];
        const double speed = inlet_speed * inlet_speed_factor_[k];
        const double rho = (f(0, node) + f(2, node) + f(4, node) +
                            2.0 * (f(3, node) + f(6, node) + f(7, node))) /
                           (1.0 - speed);
        const double ru = rho * speed;
        const double half_dy = 0.5 * (f(2, node) - f(4, node));
        f(1, node) = f(3, node) + (2.0 / 3.0) * ru;
        f(5, node) = f(7, node) - half_dy + ru / 6.0;
        f(8, node) = f(6, node) + half_dy + ru / 6.0;
    }
}

void Solver::apply_outlet_pressure(double outlet_pressure) {
    const std::size_t n = state_.nodes();
    const double rho = outlet_pressure / cs2;
    auto f = [&](int q, std::size_t node) -> double& { return state_.f[q * n + node]; };
    for (const auto node : outlet_nodes_) {
        const double ux = -1.0 + (f(0, node) + f(2, node) + f(4, node) +
                                  2.0 * (f(1, node) + f(5, node) + f(8, node))) /
                                     rho;
        const double ru = rho * ux;
        const double half_dy = 0.5 * (f(2, node) - f(4, node));
        f(3, node) = f(1, node) - (2.0 / 3.0) * ru;
        f(7, node) = f(5, node) + half_dy - ru / 6.0;
        f(6, node) = f(8, node) - half_dy - ru / 6.0;
    }
}

void Solver::update_moments() {
    const std::size_t n = state_.nodes();
    bool finite = true;
    for (const auto node : fluid_nodes_) {
        double rho = 0.0, mx = 0.0, my = 0.0;
        for (int q = 0; q < Q; ++q) {
            const double f = state_.f[q * n + node];
            rho += f;
            mx += cx[q] * f;
            my += cy[q] * f;
        }
        state_.rho[node] = rho;
        state_.u[node] = mx / rho;
        state_.v[node] = my / rho;
        finite = finite && std::isfinite(rho) && std::isfinite(mx) && std::isfinite(my) && rho > 0.0;
    }
    if (finite) return;

    double max_f = 0.0;
    std::size_t bad = 0;
    bool found = false;
    for (const auto node : fluid_nodes_) {
        for (int q = 0; q < Q; ++q) {
            const double f = state_.f[q * n + node];
            if (!std::isfinite(f)) {
                max_f = std::numeric_limits<double>::infinity();
            } else {
                max_f = std::max(max_f, std::abs(f));
            }
        }
        if (!found && !(std::isfinite(state_.rho[node]) && state_.rho[node] > 0.0 &&
                        std::isfinite(state_.u[node]) && std::isfinite(state_.v[node]))) {
            bad = node;
            found = true;
        }
    }
    std::ostringstream msg;
    msg << "non-finite or non-positive moments at t=" << state_.t << " node=(" << bad % state_.nx
        << "," << bad / state_.nx << ") max|f|=" << max_f;
    throw InstabilityError(msg.str());
}

void Solver::collide_and_stream() {
    collide();
    stream();
    apply_bounce_back();
    if (lattice_.streamwise == StreamwiseBoundary::inlet_outlet) {
        apply_inlet_velocity(params_.inlet_speed_at(state_.t));
        apply_outlet_pressure(params_.outlet_pressure);
    }
    ++state_.t;
    update_moments();
}

void Solver::run(std::uint64_t steps) {
    for (std::uint64_t s = 0; s < steps; ++s) collide_and_stream();
}

FieldSnapshot Solver::snapshot() const {
    FieldSnapshot s;
    s.step = state_.t;
    s.nx = state_.nx;
    s.ny = state_.ny;
    const std::size_t n = state_.nodes();
    const double nan = std::numeric_limits<double>::quiet_NaN();
    s.rho.assign(n, nan);
    s.u.assign(n, nan);
    s.v.assign(n, nan);
    s.p.assign(n, nan);
    for (const auto node : fluid_nodes_) {
        s.rho[node] = state_.rho[node];
        s.u[node] = state_.u[node];
        s.v[node] = state_.v[node];
        s.p[node] = pressure_from_density(state_.rho[node]);
    }
    return s;
}

double Solver::total_mass() const {
    double m = 0.0;
    for (const auto node : fluid_nodes_) m += state_.rho[node];
    return m;
}

void run_simulation(const LatticeSpec& lattice, const FlowParams& params, const Schedule& schedule,
                    const std::function<void(const FieldSnapshot&)>& sink) {
    if (schedule.snapshot_interval < 1) throw ParameterError("snapshot interval must be >= 1");
    Solver solver(lattice, params);
    sink(solver.snapshot());
    for (std::uint64_t t = 1; t <= schedule.total_steps; ++t) {
        try {
            solver.collide_and_stream();
        } catch (const InstabilityError& e) {
            throw InstabilityError(std::string("simulation diverged at step ") + std::to_string(t) +
                                   ": " + e.what());
        }
        if (t % schedule.snapshot_interval == 0 || t == schedule.total_steps) sink(solver.snapshot());
    }
}

std::uint64_t run_to_steady(Solver& solver, double tolerance, std::uint64_t max_steps,
                            std::uint64_t check_interval) {
    std::vector<double> prev = solver.state().u;
    std::uint64_t taken = 0;
    while (taken < max_steps) {
        const std::uint64_t chunk = std::min(check_interval, max_steps - taken);
        solver.run(chunk);
        taken += chunk;
        const auto& u = solver.state().u;
        double change = 0.0;
        for (std::size_t k = 0; k < u.size(); ++k) change = std::max(change, std::abs(u[k] - prev[k]));
        if (change < tolerance) break;
        prev = u;
    }
    return taken;
}

}  // namespace roughflow::lbm
