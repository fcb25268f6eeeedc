#include "roughflow/error.hpp"
#include "roughflow/lbm.hpp"
#include "roughflow/surface.hpp"

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <vector>

using namespace roughflow;
using namespace roughflow::lbm;

namespace {

/// Walls on rows 0 and ny-1 only.
surface::SolidMask channel(int nx, int ny) {
    surface::SolidMask m(nx, ny);
    for (int i = 0; i < nx; ++i) {
        m.set_solid(i, 0);
        m.set_solid(i, ny - 1);
    }
    return m;
}

surface::SolidMask rough_channel(int nx, int ny, double height, std::uint64_t seed) {
    surface::FractalSurfaceSpec s;
    s.amplitude = 1.0;
    s.phase_seed = seed;
    const auto bottom = surface::make_wall(s, nx, surface::WallSide::bottom, height);
    s.phase_seed = seed + 1;
    const auto top = surface::make_wall(s, nx, surface::WallSide::top, height);
    return surface::rasterize_walls(top, bottom, nx, ny, ny - 2);
}

}  // namespace

TEST_CASE("relaxation time from viscosity") {
    CHECK(tau_from_viscosity(1.0 / 6.0) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(tau_from_viscosity(1.0 / 3.0) == doctest::Approx(1.5).epsilon(1e-15));
    for (double nu : {1e-3, 0.02, 0.1, 0.9}) {
        CHECK(std::abs(viscosity_from_tau(tau_from_viscosity(nu)) - nu) <= 1e-15 * std::max(1.0, nu));
    }
    CHECK_THROWS_AS(tau_from_viscosity(0.0), ParameterError);
    CHECK_THROWS_AS(tau_from_viscosity(-0.1), ParameterError);
}

TEST_CASE("lattice constants") {
    CHECK(std::abs(std::accumulate(weights.begin(), weights.end(), 0.0) - 1.0) <= 2.3e-16);
    CHECK(cs2 == 1.0 / 3.0);
    for (int q = 0; q < Q; ++q) {
        CHECK(cx[opposite[q]] == -cx[q]);
        CHECK(cy[opposite[q]] == -cy[q]);
    }
}

TEST_CASE("equilibrium at rest equals the weights") {
    const auto f = equilibrium(1.0, 0.0, 0.0);
    const double expect[Q] = {4.0 / 9, 1.0 / 9, 1.0 / 9, 1.0 / 9, 1.0 / 9, 1.0 / 36, 1.0 / 36, 1.0 / 36, 1.0 / 36};
    for (int q = 0; q < Q; ++q) CHECK(f[q] == expect[q]);
    const auto g = equilibrium(2.5, 0.0, 0.0);
    for (int q = 0; q < Q; ++q) CHECK(g[q] == doctest::Approx(2.5 * expect[q]).epsilon(1e-16));
}

TEST_CASE("equilibrium moments") {
    for (auto [rho, ux, uy] : {std::tuple{1.0, 0.05, 0.0}, {0.97, -0.03, 0.02}, {1.2, 0.08, -0.06}}) {
        const auto f = equilibrium(rho, ux, uy);
        double m0 = 0, mx = 0, my = 0;
        for (int q = 0; q < Q; ++q) {
            m0 += f[q];
            mx += f[q] * cx[q];
            my += f[q] * cy[q];
        }
        CHECK(m0 == doctest::Approx(rho).epsilon(1e-15));
        CHECK(std::abs(mx - rho * ux) < 1e-16);
        CHECK(std::abs(my - rho * uy) < 1e-16);
    }
}

TEST_CASE("equilibrium at u = (1/20, 0) matches exact rational arithmetic") {
    // With cs^2 = 1/3 and u = 1/20: 1 + 3cu + 9(cu)^2/2 - 3u^2/2 = (797 + 120c + 9c^2) / 800.
    // Weights are k/36, so f_i = k (797 + 120 c + 9 c^2) / 28800 with integer numerators.
    const int k[Q] = {16, 4, 4, 4, 4, 1, 1, 1, 1};
    const auto f = equilibrium(1.0, 0.05, 0.0);
    for (int q = 0; q < Q; ++q) {
        const long num = k[q] * (797L + 120L * cx[q] + 9L * cx[q] * cx[q]);
        const double exact = static_cast<double>(num) / 28800.0;
        CHECK(std::abs(f[q] - exact) <= 1e-15 * exact);
    }
}

TEST_CASE("pressure from density") {
    CHECK(pressure_from_density(1.0) == 1.0 / 3.0);
    CHECK(pressure_from_density(3.0) == 1.0);
    for (double a : {0.5, 2.0, 7.0}) {
        CHECK(pressure_from_density(a * 1.1) == doctest::Approx(a * pressure_from_density(1.1)).epsilon(1e-15));
    }
}

TEST_CASE("inlet start-up ramp") {
    FlowParams p;
    p.inlet_speed = 0.05;
    p.ramp_steps = 1000;
    CHECK(p.inlet_speed_at(0) == 0.0);
    CHECK(p.inlet_speed_at(500) == doctest::Approx(0.025).epsilon(1e-14));
    CHECK(p.inlet_speed_at(1000) == 0.05);
    CHECK(p.inlet_speed_at(5000) == 0.05);
    p.ramp_steps = 0;
    CHECK(p.inlet_speed_at(0) == 0.05);
}

TEST_CASE("flow parameter validation") {
    auto p = FlowParams::from_reynolds(0.05, 10.0, 48.0);
    CHECK(p.viscosity == doctest::Approx(0.05 * 48 / 10));
    CHECK(p.tau == doctest::Approx(tau_from_viscosity(0.24)));
    CHECK_NOTHROW(p.validate());
    CHECK_THROWS_AS(FlowParams::from_reynolds(0.12, 10.0, 48.0).validate(), ParameterError);
    auto bad = p;
    bad.tau = 0.5;
    CHECK_THROWS_AS(bad.validate(), ParameterError);
}

TEST_CASE("uniform state on a fully periodic lattice is a fixed point") {
    LatticeSpec lat{surface::SolidMask(16, 12), StreamwiseBoundary::periodic, true};
    for (auto [ux, uy] : {std::pair{0.0, 0.0}, {0.03, -0.01}}) {
        Solver s(lat, FlowParams::from_viscosity(0.05, 0.1, 10.0));
        s.initialize_equilibrium(1.0, ux, uy);
        const auto before = s.state().f;
        s.run(200);
        const auto& after = s.state().f;
        double worst = 0.0;
        for (std::size_t k = 0; k < before.size(); ++k) worst = std::max(worst, std::abs(after[k] - before[k]));
        // Summing nine weights in floating point leaves rho one ulp off 1.
        CHECK(worst < 1e-15);
    }
}

TEST_CASE("a single population aimed at a wall returns reversed after one step") {
    const auto mask = channel(8, 6);
    Solver s(LatticeSpec{mask, StreamwiseBoundary::periodic, false}, FlowParams::from_viscosity(0.05, 0.1, 4.0));
    auto post = s.post_collision();
    std::fill(post.begin(), post.end(), 0.0);
    const std::size_t n = mask.size(), node = mask.index(3, 1);
    for (int q : {4, 7, 8}) {
        std::fill(post.begin(), post.end(), 0.0);
        post[q * n + node] = 0.7;
        s.stream();
        s.apply_bounce_back();
        const auto& f = s.state().f;
        for (std::size_t k = 0; k < f.size(); ++k) {
            if (k == opposite[q] * n + node) {
                CHECK(f[k] == 0.7);
            } else if (mask.fluid(static_cast<int>(k % n % 8), static_cast<int>(k % n / 8))) {
                CHECK(f[k] == 0.0);
            }
        }
    }
}

TEST_CASE("inlet velocity and outlet density are imposed exactly") {
    const int nx = 40, ny = 14;
    const auto mask = rough_channel(nx, ny, 2.0, 4);
    auto params = FlowParams::from_reynolds(0.04, 5.0, ny - 2);
    params.ramp_steps = 100;
    Solver s(LatticeSpec{mask}, params);
    s.initialize_equilibrium();
    for (int step = 0; step < 300; ++step) {
        const double target = params.inlet_speed_at(s.state().t);
        s.collide_and_stream();
        const auto& st = s.state();
        if (step >= 100) CHECK(target == 0.04);
        for (int j = 0; j < ny; ++j) {
            if (mask.fluid(0, j)) {
                const auto k = mask.index(0, j);
                // Inlet nodes with a solid neighbour act as no-slip corners.
                bool touches_wall = false;
                for (int q = 1; q < Q; ++q) {
                    if (cx[q] >= 0 && mask.in_bounds(cx[q], j + cy[q]) && mask.solid(cx[q], j + cy[q])) touches_wall = true;
                }
                CHECK(std::abs(st.u[k] - (touches_wall ? 0.0 : target)) < 1e-12);
                CHECK(std::abs(st.v[k]) < 1e-12);
            }
            if (mask.fluid(nx - 1, j)) {
                CHECK(std::abs(st.rho[mask.index(nx - 1, j)] - params.outlet_pressure / cs2) < 1e-12);
            }
        }
    }
}

TEST_CASE("stored moments agree with the populations after every step") {
    const auto mask = rough_channel(30, 16, 3.0, 8);
    Solver s(LatticeSpec{mask}, FlowParams::from_reynolds(0.05, 10.0, 14));
    s.initialize_equilibrium();
    for (int step = 0; step < 50; ++step) {
        s.collide_and_stream();
        const auto& st = s.state();
        const std::size_t n = st.nodes();
        for (std::size_t k = 0; k < n; ++k) {
            if (mask.solid(static_cast<int>(k % 30), static_cast<int>(k / 30))) continue;
            double rho = 0, mx = 0, my = 0;
            for (int q = 0; q < Q; ++q) {
                rho += st.pop(q, k);
                mx += cx[q] * st.pop(q, k);
                my += cy[q] * st.pop(q, k);
            }
            CHECK(std::abs(rho - st.rho[k]) <= 1e-14);
            CHECK(std::abs(mx / rho - st.u[k]) <= 1e-14);
            CHECK(std::abs(my / rho - st.v[k]) <= 1e-14);
        }
    }
}

TEST_CASE("mass is conserved with periodic ends and rough bounce-back walls") {
    const int nx = 64, ny = 24;
    const auto mask = rough_channel(nx, ny, 5.0, 2);
    Solver s(LatticeSpec{mask, StreamwiseBoundary::periodic}, FlowParams::from_viscosity(0.05, 0.05, 20));
    std::vector<double> rho(mask.size()), u(mask.size()), v(mask.size());
    for (int j = 0; j < ny; ++j) {
        for (int i = 0; i < nx; ++i) {
            const auto k = mask.index(i, j);
            rho[k] = 1.0 + 0.01 * std::sin(0.3 * i) * std::cos(0.5 * j);
            u[k] = 0.04 * std::sin(0.2 * j + 0.1 * i);
            v[k] = 0.02 * std::cos(0.15 * i);
        }
    }
    s.initialize_equilibrium(rho, u, v);
    const double m0 = s.total_mass();
    s.run(1000);
    CHECK(std::abs(s.total_mass() - m0) / m0 < 1e-10);
    const auto snap = s.snapshot();
    for (int j = 0; j < ny; ++j) {
        for (int i = 0; i < nx; ++i) {
            const auto k = snap.index(i, j);
            CHECK(std::isnan(snap.rho[k]) == mask.solid(i, j));
            if (mask.fluid(i, j)) CHECK(snap.p[k] == cs2 * snap.rho[k]);
        }
    }
    CHECK(snap.mask() == mask);
}

TEST_CASE("steady smooth channel balances mass flux and enforces no slip") {
    const int nx = 60, ny = 20;
    const auto mask = channel(nx, ny);
    Solver s(LatticeSpec{mask}, FlowParams::from_reynolds(0.05, 5.0, ny - 2));
    s.initialize_equilibrium();
    run_to_steady(s, 1e-10, 60000, 500);
    const auto& st = s.state();
    auto flux = [&](int i) {
        double q = 0.0;
        for (int j = 1; j < ny - 1; ++j) q += st.rho[mask.index(i, j)] * st.u[mask.index(i, j)];
        return q;
    };
    const double in = flux(0), out = flux(nx - 1);
    CHECK(std::abs(out - in) / in < 1e-3);
    const double centre = st.u[mask.index(nx / 2, ny / 2)];
    const double near_wall = st.u[mask.index(nx / 2, 1)];
    CHECK(near_wall < 0.15 * centre);
    CHECK(near_wall > 0.0);
}

TEST_CASE("snapshot cadence") {
    const LatticeSpec lat{channel(12, 8)};
    const auto params = FlowParams::from_reynolds(0.03, 5.0, 6);
    std::vector<std::uint64_t> steps;
    run_simulation(lat, params, {10, 10}, [&](const FieldSnapshot& s) { steps.push_back(s.step); });
    CHECK(steps == std::vector<std::uint64_t>{0, 10});
    steps.clear();
    run_simulation(lat, params, {10, 3}, [&](const FieldSnapshot& s) { steps.push_back(s.step); });
    CHECK(steps == std::vector<std::uint64_t>{0, 3, 6, 9, 10});
    CHECK_THROWS_AS(run_simulation(lat, params, {10, 0}, [](const FieldSnapshot&) {}), ParameterError);
}

TEST_CASE("simulation is deterministic") {
    const LatticeSpec lat{rough_channel(30, 14, 3.0, 1)};
    const auto params = FlowParams::from_reynolds(0.05, 10.0, 12);
    std::vector<FieldSnapshot> a, b;
    run_simulation(lat, params, {200, 100}, [&](const FieldSnapshot& s) { a.push_back(s); });
    run_simulation(lat, params, {200, 100}, [&](const FieldSnapshot& s) { b.push_back(s); });
    REQUIRE(a.size() == b.size());
    for (std::size_t k = 0; k < a.size(); ++k) {
        CHECK(std::memcmp(a[k].u.data(), b[k].u.data(), a[k].u.size() * sizeof(double)) == 0);
        CHECK(std::memcmp(a[k].rho.data(), b[k].rho.data(), a[k].rho.size() * sizeof(double)) == 0);
    }
}

TEST_CASE("non-finite populations raise an instability error") {
    Solver s(LatticeSpec{channel(10, 8), StreamwiseBoundary::periodic}, FlowParams::from_viscosity(0.05, 0.1, 6));
    s.initialize_equilibrium();
    s.mutable_state().pop(1, 25) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(s.run(3), InstabilityError);
}
