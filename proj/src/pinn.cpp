#include "roughflow/pinn.hpp"

#include "roughflow/error.hpp"
#include "roughflow/optim.hpp"
#include "roughflow/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

namespace roughflow::pinn {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

ad::JetLayout residual_layout() { return {{0, 1, 2}, {0, 1}}; }

/// Maps raw network jets to nondimensional field jets.
std::vector<FieldJet> extract_jets(const PinnModel& model, const ad::JetBatch& batch) {
    const auto& n = model.norm;
    const double sx = n.input_scale[0], sy = n.input_scale[1], st = n.input_scale[2];
    const auto value = batch.value();
    const auto dx = batch.first(0), dy = batch.first(1), dt = batch.first(2);
    const auto dxx = batch.second(0), dyy = batch.second(1);
    std::vector<FieldJet> jets(static_cast<std::size_t>(batch.points()));
    for (int j = 0; j < batch.points(); ++j) {
        auto& f = jets[j];
        const double cu = n.output_scale[kU], cv = n.output_scale[kV], cp = n.output_scale[kP],
                     cr = n.output_scale[kRho];
        f.u = n.output_shift[kU] + cu * value(kU, j);
        f.v = n.output_shift[kV] + cv * value(kV, j);
        f.p = n.output_shift[kP] + cp * value(kP, j);
        f.rho = n.output_shift[kRho] + cr * value(kRho, j);
        f.u_x = cu * sx * dx(kU, j);
        f.u_y = cu * sy * dy(kU, j);
        f.u_t = cu * st * dt(kU, j);
        f.u_xx = cu * sx * sx * dxx(kU, j);
        f.u_yy = cu * sy * sy * dyy(kU, j);
        f.v_x = cv * sx * dx(kV, j);
        f.v_y = cv * sy * dy(kV, j);
        f.v_t = cv * st * dt(kV, j);
        f.v_xx = cv * sx * sx * dxx(kV, j);
        f.v_yy = cv * sy * sy * dyy(kV, j);
        f.p_x = cp * sx * dx(kP, j);
        f.p_y = cp * sy * dy(kP, j);
    }
    return jets;
}

std::vector<Point> sample_points(std::span<const Sample> data) {
    std::vector<Point> pts(data.size());
    for (std::size_t k = 0; k < data.size(); ++k) pts[k] = data[k].point;
    return pts;
}

double data_term(const PinnModel& model, std::span<const Sample> data, double weight, ad::ParameterSet* grad) {
    if (data.empty()) return 0.0;
    const auto pts = sample_points(data);
    ad::JetBatch batch(model.params, model.spec, model.network_inputs(pts), ad::JetLayout::value_only());
    const auto& o = batch.output();
    const auto n = static_cast<double>(data.size());
    Eigen::MatrixXd g;
    if (grad) g = Eigen::MatrixXd::Zero(o.rows(), o.cols());
    double sum = 0.0;
    for (std::size_t j = 0; j < data.size(); ++j) {
        const auto& s = data[j];
        const auto nd = to_nondimensional(model.scales, s.u, s.v, s.p, s.rho);
        for (int k = 0; k < kMacroOutputs; ++k) {
            const double target = (nd[k] - model.norm.output_shift[k]) / model.norm.output_scale[k];
            const double r = o(k, Eigen::Index(j)) - target;
            sum += r * r;
            if (grad) g(k, Eigen::Index(j)) = 2.0 * weight * r / n;
        }
    }
    if (grad) batch.backward(g, *grad);
    return sum / n;
}

struct CollocationTerms {
    double momentum = 0.0;
    double continuity = 0.0;
    double moment = 0.0;
};

CollocationTerms collocation_terms(const PinnModel& model, std::span<const Point> points,
                                   const LossWeights& w, ad::ParameterSet* grad) {
    CollocationTerms terms;
    if (points.empty()) return terms;
    ad::JetBatch batch(model.params, model.spec, model.network_inputs(points), residual_layout());
    const auto jets = extract_jets(model, batch);
    const auto np = batch.points();
    const auto n = static_cast<double>(np);
    const double re = model.scales.reynolds;
    const auto& norm = model.norm;
    const double sx = norm.input_scale[0], sy = norm.input_scale[1], st = norm.input_scale[2];

    Eigen::MatrixXd g;
    if (grad) g = Eigen::MatrixXd::Zero(batch.output().rows(), batch.output().cols());
    auto put = [&](int channel, int block, int j, double v) { g(channel, Eigen::Index(block) * np + j) += v; };

    const bool kinetic = model.options.kinetic_head;
    const double rho0 = model.scales.reference_density, uref = model.scales.inlet_speed;
    for (int j = 0; j < np; ++j) {
        const auto& f = jets[j];
        const auto r = residuals(f, re);
        terms.continuity += r.continuity * r.continuity;
        terms.momentum += r.momentum_x * r.momentum_x + r.momentum_y * r.momentum_y;

        double d_u = 0, d_v = 0, d_rho = 0;
        if (grad) {
            const double cc = 2.0 * w.cont * r.continuity / n;
            const double cx_ = 2.0 * w.physics * r.momentum_x / n;
            const double cy_ = 2.0 * w.physics * r.momentum_y / n;
            d_u = cx_ * f.u_x + cy_ * f.v_x;
            d_v = cx_ * f.u_y + cy_ * f.v_y;
            d_rho = -(cx_ * f.p_x + cy_ * f.p_y) / (f.rho * f.rho);
            const double cu = norm.output_scale[kU], cv = norm.output_scale[kV], cp = norm.output_scale[kP];
            put(kU, 1, j, cu * sx * (cc + cx_ * f.u));
            put(kU, 2, j, cu * sy * (cx_ * f.v));
            put(kU, 3, j, cu * st * cx_);
            put(kU, 4, j, cu * sx * sx * (-cx_ / re));
            put(kU, 5, j, cu * sy * sy * (-cx_ / re));
            put(kV, 1, j, cv * sx * (cy_ * f.u));
            put(kV, 2, j, cv * sy * (cc + cy_ * f.v));
            put(kV, 3, j, cv * st * cy_);
            put(kV, 4, j, cv * sx * sx * (-cy_ / re));
            put(kV, 5, j, cv * sy * sy * (-cy_ / re));
            put(kP, 1, j, cp * sx * (cx_ / f.rho));
            put(kP, 2, j, cp * sy * (cy_ / f.rho));
        }

        if (kinetic) {
            const auto value = batch.value();
            const double rl = rho0 * f.rho, ul = uref * f.u, vl = uref * f.v;
            double m0 = 0, m1 = 0, m2 = 0;
            std::array<double, lbm::Q> fi{};
            for (int q = 0; q < lbm::Q; ++q) {
                fi[q] = lbm::weights[q] * (1.0 + value(kMacroOutputs + q, j));
                m0 += fi[q];
                m1 += fi[q] * lbm::cx[q];
                m2 += fi[q] * lbm::cy[q];
            }
            const double e0 = m0 - rl, e1 = m1 - rl * ul, e2 = m2 - rl * vl;
            terms.moment += e0 * e0 + e1 * e1 + e2 * e2;
            if (grad) {
                const double c = 2.0 * w.moment / n;
                for (int q = 0; q < lbm::Q; ++q) {
                    put(kMacroOutputs + q, 0, j,
                        lbm::weights[q] * c * (e0 + e1 * lbm::cx[q] + e2 * lbm::cy[q]));
                }
                d_rho += rho0 * c * (-e0 - e1 * ul - e2 * vl);
                d_u += uref * c * (-e1 * rl);
                d_v += uref * c * (-e2 * rl);
            }
        }
        if (grad) {
            put(kU, 0, j, norm.output_scale[kU] * d_u);
            put(kV, 0, j, norm.output_scale[kV] * d_v);
            put(kRho, 0, j, norm.output_scale[kRho] * d_rho);
        }
    }
    if (grad) batch.backward(g, *grad);
    terms.continuity /= n;
    terms.momentum /= n;
    terms.moment /= n;
    return terms;
}

double boundary_term(const PinnModel& model, std::span<const BoundaryPoint> boundary, double weight,
                     ad::ParameterSet* grad) {
    if (boundary.empty()) return 0.0;
    std::vector<Point> pts(boundary.size());
    for (std::size_t k = 0; k < boundary.size(); ++k) pts[k] = boundary[k].point;
    ad::JetBatch batch(model.params, model.spec, model.network_inputs(pts), ad::JetLayout::value_only());
    const auto& o = batch.output();
    const auto& norm = model.norm;
    const auto n = static_cast<double>(boundary.size());
    Eigen::MatrixXd g;
    if (grad) g = Eigen::MatrixXd::Zero(o.rows(), o.cols());
    double sum = 0.0;
    auto field = [&](int k, Eigen::Index j) { return norm.output_shift[k] + norm.output_scale[k] * o(k, j); };
    auto penalize = [&](int k, Eigen::Index j, double target) {
        const double r = field(k, j) - target;
        sum += r * r;
        if (grad) g(k, j) += 2.0 * weight * r * norm.output_scale[k] / n;
    };
    for (std::size_t k = 0; k < boundary.size(); ++k) {
        const auto j = Eigen::Index(k);
        const auto& b = boundary[k];
        switch (b.kind) {
            case BoundaryKind::wall:
                penalize(kU, j, 0.0);
                penalize(kV, j, 0.0);
                break;
            case BoundaryKind::inlet:
                penalize(kU, j, 1.0);
                penalize(kV, j, 0.0);
                break;
            case BoundaryKind::outlet:
                penalize(kP, j, 0.0);
                break;
            case BoundaryKind::initial:
                penalize(kU, j, b.target[0]);
                penalize(kV, j, b.target[1]);
                penalize(kP, j, b.target[2]);
                break;
            default:
                throw ContractError("unknown boundary kind tag");
        }
    }
    if (grad) batch.backward(g, *grad);
    return sum / n;
}

double mean_and_std(const std::vector<double>& v, double& stddev) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    stddev = std::sqrt(var / static_cast<double>(v.size()));
    return mean;
}

}  // namespace

Eigen::MatrixXd PinnModel::network_inputs(std::span<const Point> points) const {
    const int width = options.input_width();
    if (static_cast<int>(norm.input_center.size()) != width || static_cast<int>(norm.input_scale.size()) != width) {
        throw ShapeError("input normalization does not match model input width");
    }
    Eigen::MatrixXd in(width, static_cast<Eigen::Index>(points.size()));
    const double h = scales.height, ts = scales.time_scale();
    for (std::size_t k = 0; k < points.size(); ++k) {
        const auto c = Eigen::Index(k);
        int row = 0;
        auto put = [&](double raw) {
            in(row, c) = (raw - norm.input_center[row]) * norm.input_scale[row];
            ++row;
        };
        put(points[k].x / h);
        put(points[k].y / h);
        put(points[k].t / ts);
        if (options.geometry_inputs) {
            put(options.geometry_amplitude);
            put(options.geometry_dimension);
        }
        if (options.reynolds_input) put(scales.reynolds);
    }
    return in;
}

std::array<double, kMacroOutputs> to_nondimensional(const Scales& s, double u, double v, double p, double rho) {
    return {u / s.inlet_speed, v / s.inlet_speed, (p - s.outlet_pressure) / s.pressure_scale(),
            rho / s.reference_density};
}

std::array<double, kMacroOutputs> to_lattice(const Scales& s, const std::array<double, kMacroOutputs>& nd) {
    return {nd[kU] * s.inlet_speed, nd[kV] * s.inlet_speed, s.outlet_pressure + nd[kP] * s.pressure_scale(),
            nd[kRho] * s.reference_density};
}

LabeledDataset build_dataset(std::span<const lbm::FieldSnapshot> snapshots, std::size_t max_points,
                             std::uint64_t seed) {
    if (snapshots.empty()) throw ParameterError("dataset needs at least one snapshot");
    LabeledDataset out;
    Rng rng(derive_seed(seed, 0xda7a));
    const std::size_t per = max_points / snapshots.size();
    const std::size_t extra = max_points % snapshots.size();
    for (std::size_t s = 0; s < snapshots.size(); ++s) {
        const auto& snap = snapshots[s];
        if (snap.nx != snapshots[0].nx || snap.ny != snapshots[0].ny) {
            throw ShapeError("dataset snapshots disagree on grid shape");
        }
        std::vector<std::size_t> fluid;
        for (std::size_t node = 0; node < snap.rho.size(); ++node) {
            if (!std::isnan(snap.rho[node])) fluid.push_back(node);
        }
        const std::size_t want = std::min(fluid.size(), per + (s < extra ? 1 : 0));
        for (std::size_t k = 0; k < want; ++k) {
            std::swap(fluid[k], fluid[k + rng.below(fluid.size() - k)]);
            const std::size_t node = fluid[k];
            Sample smp;
            smp.point = {static_cast<double>(node % snap.nx), static_cast<double>(node / snap.nx),
                         static_cast<double>(snap.step)};
            smp.rho = snap.rho[node];
            smp.u = snap.u[node];
            smp.v = snap.v[node];
            smp.p = snap.p[node];
            if (!(std::isfinite(smp.rho) && std::isfinite(smp.u) && std::isfinite(smp.v) && std::isfinite(smp.p))) {
                throw NumericError("non-finite label in snapshot at step " + std::to_string(snap.step));
            }
            out.samples.push_back(smp);
        }
    }
    return out;
}

Normalization fit_normalization(const LabeledDataset& data, const Domain& domain, const Scales& scales,
                                const ModelOptions& options) {
    if (data.samples.empty()) throw ParameterError("cannot fit normalization to an empty dataset");
    Normalization norm;
    auto add_range = [&](double lo, double hi) {
        const double span = hi - lo;
        norm.input_center.push_back(0.5 * (lo + hi));
        norm.input_scale.push_back(span > 0.0 ? 2.0 / span : 1.0);
    };
    add_range(0.0, (domain.nx - 1) / scales.height);
    add_range(0.0, (domain.ny - 1) / scales.height);
    add_range(domain.t_begin / scales.time_scale(), domain.t_end / scales.time_scale());
    if (options.geometry_inputs) {
        norm.input_center.push_back(options.geometry_amplitude);
        norm.input_scale.push_back(1.0);
        norm.input_center.push_back(options.geometry_dimension);
        norm.input_scale.push_back(1.0);
    }
    if (options.reynolds_input) {
        norm.input_center.push_back(scales.reynolds);
        norm.input_scale.push_back(1.0);
    }
    for (int k = 0; k < kMacroOutputs; ++k) {
        std::vector<double> vals;
        vals.reserve(data.samples.size());
        for (const auto& s : data.samples) vals.push_back(to_nondimensional(scales, s.u, s.v, s.p, s.rho)[k]);
        double sd = 0.0;
        norm.output_shift[k] = mean_and_std(vals, sd);
        norm.output_scale[k] = sd > 1e-12 ? sd : 1.0;
    }
    return norm;
}

PinnModel make_model(const NetworkSettings& net, const Scales& scales, const ModelOptions& options,
                     const Normalization& norm) {
    PinnModel m;
    m.spec.input_width = options.input_width();
    m.spec.hidden_layers = net.hidden_layers;
    m.spec.hidden_width = net.hidden_width;
    m.spec.output_width = options.output_width();
    m.spec.activation = net.activation;
    m.spec.init_seed = net.init_seed;
    m.spec.validate();
    m.params = ad::init_parameters(m.spec);
    m.norm = norm;
    m.scales = scales;
    m.options = options;
    if (static_cast<int>(norm.input_center.size()) != options.input_width()) {
        throw ShapeError("normalization input width does not match model options");
    }
    return m;
}

Residuals residuals(const FieldJet& f, double reynolds) {
    if (!(f.rho > kDensityFloor)) {
        throw SingularDensityError("predicted density " + std::to_string(f.rho) + " at or below floor");
    }
    Residuals r;
    r.continuity = f.u_x + f.v_y;
    r.momentum_x = f.u_t + f.u * f.u_x + f.v * f.u_y + f.p_x / f.rho - (f.u_xx + f.u_yy) / reynolds;
    r.momentum_y = f.v_t + f.u * f.v_x + f.v * f.v_y + f.p_y / f.rho - (f.v_xx + f.v_yy) / reynolds;
    return r;
}

std::vector<FieldJet> field_jets(const PinnModel& model, std::span<const Point> points) {
    if (points.empty()) return {};
    ad::JetBatch batch(model.params, model.spec, model.network_inputs(points), residual_layout());
    return extract_jets(model, batch);
}

Residuals pde_residuals(const PinnModel& model, const Point& point) {
    return pde_residuals(model, std::span<const Point>(&point, 1)).front();
}

std::vector<Residuals> pde_residuals(const PinnModel& model, std::span<const Point> points) {
    const auto jets = field_jets(model, points);
    std::vector<Residuals> out;
    out.reserve(jets.size());
    for (const auto& j : jets) out.push_back(residuals(j, model.scales.reynolds));
    return out;
}

// -- collocation -----------------------------------------------------------------

std::string_view to_string(SamplingStrategy s) {
    return s == SamplingStrategy::uniform ? "uniform" : "near_wall_enriched";
}

SamplingStrategy parse_strategy(std::string_view name) {
    if (name == "uniform") return SamplingStrategy::uniform;
    if (name == "near_wall_enriched" || name == "enriched") return SamplingStrategy::near_wall_enriched;
    throw ParameterError("unknown sampling strategy '" + std::string(name) + "'");
}

std::string_view to_string(BoundaryKind k) {
    switch (k) {
        case BoundaryKind::wall: return "wall";
        case BoundaryKind::inlet: return "inlet";
        case BoundaryKind::outlet: return "outlet";
        case BoundaryKind::initial: return "initial";
    }
    return "unknown";
}

BoundaryKind parse_boundary_kind(std::string_view name) {
    if (name == "wall") return BoundaryKind::wall;
    if (name == "inlet") return BoundaryKind::inlet;
    if (name == "outlet") return BoundaryKind::outlet;
    if (name == "initial") return BoundaryKind::initial;
    throw ContractError("unknown boundary kind tag '" + std::string(name) + "'");
}

std::pair<std::size_t, std::size_t> split_counts(std::size_t total, double band_fraction) {
    if (!(band_fraction >= 0.0 && band_fraction <= 1.0)) throw ParameterError("band fraction must lie in [0, 1]");
    const auto interior = static_cast<std::size_t>(
        surface::round_half_up(static_cast<double>(total) * (1.0 - band_fraction)));
    return {interior, total - interior};
}

bool clear_of_solids(const surface::SolidMask& mask, double x, double y) {
    if (x < 0.0 || y < 0.0 || x > mask.nx() - 1 || y > mask.ny() - 1) return false;
    const int i0 = static_cast<int>(std::floor(x)), j0 = static_cast<int>(std::floor(y));
    for (int i = i0; i <= i0 + 1; ++i) {
        for (int j = j0; j <= j0 + 1; ++j) {
            if (!mask.in_bounds(i, j) || !mask.solid(i, j)) continue;
            const double dx = x - i, dy = y - j;
            if (dx * dx + dy * dy < 1.0) return false;
        }
    }
    return true;
}

bool in_wall_band(const surface::SolidMask& mask, double height, double x, double y) {
    const int i = std::clamp(surface::round_half_up(x), 0, mask.nx() - 1);
    const double bottom = mask.bottom_surface_row(i) + 0.5;
    const double top = mask.top_surface_row(i) - 0.5;
    const double band = 0.2 * height;
    return (y - bottom) < band || (top - y) < band;
}

CollocationSet sample_collocation(const surface::SolidMask& mask, double height, const Domain& domain,
                                  const Scales& scales, const SamplingConfig& config, std::uint64_t seed,
                                  const lbm::FieldSnapshot* initial_state) {
    if (config.total == 0) throw ParameterError("collocation count must be positive");
    if (mask.fluid_count() == 0) throw GeometryError("domain has no fluid nodes");
    if (domain.t_end < domain.t_begin) throw ParameterError("time window is reversed");

    CollocationSet set;
    set.strategy = config.strategy;
    set.seed = seed;
    Rng rng(derive_seed(seed, 0xc011));
    const double xmax = mask.nx() - 1, ymax = mask.ny() - 1;
    std::size_t attempts = 0, accepted = 0;
    auto draw = [&](auto&& accept) {
        for (;;) {
            ++attempts;
            const double x = rng.uniform(0.0, xmax);
            const double y = rng.uniform(0.0, ymax);
            if (clear_of_solids(mask, x, y) && accept(x, y)) {
                ++accepted;
                return Point{x, y, rng.uniform(domain.t_begin, domain.t_end)};
            }
            if (attempts >= 1000 && accepted * 100 < attempts) {
                throw GeometryError("geometry too tight: collocation acceptance below 1% (" +
                                    std::to_string(accepted) + "/" + std::to_string(attempts) + ")");
            }
        }
    };
    auto anywhere = [](double, double) { return true; };
    auto band = [&](double x, double y) { return in_wall_band(mask, height, x, y); };

    std::size_t n_interior = config.total, n_band = 0;
    if (config.strategy == SamplingStrategy::near_wall_enriched) {
        std::tie(n_interior, n_band) = split_counts(config.total, config.band_fraction);
    }
    for (std::size_t k = 0; k < n_interior; ++k) {
        set.interior.push_back(draw(anywhere));
        set.from_band.push_back(0);
    }
    // The band sampler gets its own acceptance statistics.
    attempts = accepted = 0;
    for (std::size_t k = 0; k < n_band; ++k) {
        set.interior.push_back(draw(band));
        set.from_band.push_back(1);
    }

    auto time = [&] { return rng.uniform(domain.t_begin, domain.t_end); };
    for (std::size_t k = 0; k < config.wall; ++k) {
        const bool top = rng.below(2) == 1;
        const double x = rng.uniform(0.0, xmax);
        const int i = std::clamp(surface::round_half_up(x), 0, mask.nx() - 1);
        const double y = top ? mask.top_surface_row(i) - 0.5 : mask.bottom_surface_row(i) + 0.5;
        set.boundary.push_back({{x, y, time()}, BoundaryKind::wall, {0, 0, 0}});
    }
    auto open_column = [&](int i, BoundaryKind kind, std::size_t count) {
        const double lo = mask.bottom_surface_row(i) + 1, hi = mask.top_surface_row(i) - 1;
        for (std::size_t k = 0; k < count; ++k) {
            const double y = rng.uniform(lo, hi);
            BoundaryPoint b{{static_cast<double>(i), y, time()}, kind, {0, 0, 0}};
            if (kind == BoundaryKind::inlet) b.target = {1.0, 0.0, 0.0};
            set.boundary.push_back(b);
        }
    };
    open_column(0, BoundaryKind::inlet, config.inlet);
    open_column(mask.nx() - 1, BoundaryKind::outlet, config.outlet);
    if (config.initial > 0) {
        if (!initial_state) throw ParameterError("initial-condition points need the initial snapshot");
        attempts = accepted = 0;
        for (std::size_t k = 0; k < config.initial; ++k) {
            Point p = draw(anywhere);
            p.t = domain.t_begin;
            const int i = std::clamp(surface::round_half_up(p.x), 0, mask.nx() - 1);
            const int j = std::clamp(surface::round_half_up(p.y), 0, mask.ny() - 1);
            const auto node = initial_state->index(i, j);
            const auto nd = to_nondimensional(scales, initial_state->u[node], initial_state->v[node],
                                              initial_state->p[node], initial_state->rho[node]);
            set.boundary.push_back({p, BoundaryKind::initial, {nd[kU], nd[kV], nd[kP]}});
        }
    }
    return set;
}

// -- losses ----------------------------------------------------------------------

void LossWeights::validate() const {
    for (double w : {data, physics, cont, bc, moment}) {
        if (!(w >= 0.0) || !std::isfinite(w)) throw ParameterError("loss weights must be finite and >= 0");
    }
    if (data == 0.0 && physics == 0.0 && cont == 0.0 && bc == 0.0 && moment == 0.0) {
        throw ParameterError("at least one loss weight must be positive");
    }
}

double data_loss(const PinnModel& model, std::span<const Sample> data) {
    if (data.empty()) throw ParameterError("data loss needs a nonempty dataset");
    return data_term(model, data, 1.0, nullptr);
}

double physics_loss(const PinnModel& model, std::span<const Point> collocation) {
    if (collocation.empty()) throw ParameterError("physics loss needs collocation points");
    const auto t = collocation_terms(model, collocation, LossWeights{}, nullptr);
    return t.continuity + t.momentum + t.moment;
}

double boundary_loss(const PinnModel& model, std::span<const BoundaryPoint> boundary) {
    return boundary_term(model, boundary, 1.0, nullptr);
}

LossBreakdown total_loss(const PinnModel& model, std::span<const Sample> data, std::span<const Point> collocation,
                         std::span<const BoundaryPoint> boundary, const LossWeights& weights,
                         ad::ParameterSet* grad) {
    weights.validate();
    LossBreakdown out;
    out.data = data_term(model, data, weights.data, grad);
    const auto c = collocation_terms(model, collocation, weights, grad);
    out.momentum = c.momentum;
    out.continuity = c.continuity;
    out.moment = c.moment;
    out.boundary = boundary_term(model, boundary, weights.bc, grad);
    out.total = weights.data * out.data + weights.physics * out.momentum + weights.cont * out.continuity +
                weights.bc * out.boundary + weights.moment * out.moment;
    return out;
}

// -- training --------------------------------------------------------------------

void TrainConfig::validate() const {
    if (!(adam.learning_rate > 0.0)) throw ParameterError("learning rate must be positive");
    if (!(adam.decay_rate > 0.0 && adam.decay_rate <= 1.0)) throw ParameterError("decay rate must lie in (0, 1]");
    if (adam.decay_interval < 1) throw ParameterError("decay interval must be >= 1");
    if (adam.epochs < 0 || lbfgs.max_iterations < 0) throw ParameterError("iteration counts must be >= 0");
    if (lbfgs.history < 1) throw ParameterError("L-BFGS history must be >= 1");
    if (!(lbfgs.c1 > 0.0 && lbfgs.c1 < lbfgs.c2 && lbfgs.c2 < 1.0)) {
        throw ParameterError("line search needs 0 < c1 < c2 < 1");
    }
    weights.validate();
}

namespace {

/// Cycles through a per-seed shuffled permutation in fixed-size chunks.
template <class T>
class BatchCursor {
public:
    BatchCursor(std::span<const T> items, std::size_t batch, Rng& rng)
        : items_(items), batch_(batch), rng_(rng), order_(items.size()) {
        std::iota(order_.begin(), order_.end(), std::size_t{0});
        pos_ = order_.size();
    }

    std::span<const T> next() {
        if (batch_ == 0 || batch_ >= items_.size()) return items_;
        buffer_.clear();
        while (buffer_.size() < batch_) {
            if (pos_ == order_.size()) {
                rng_.shuffle(order_.begin(), order_.end());
                pos_ = 0;
            }
            buffer_.push_back(items_[order_[pos_++]]);
        }
        return buffer_;
    }

private:
    std::span<const T> items_;
    std::size_t batch_;
    Rng& rng_;
    std::vector<std::size_t> order_;
    std::size_t pos_ = 0;
    std::vector<T> buffer_;
};

bool finite(const LossBreakdown& l) {
    return std::isfinite(l.total) && std::isfinite(l.data) && std::isfinite(l.momentum) &&
           std::isfinite(l.continuity) && std::isfinite(l.boundary) && std::isfinite(l.moment);
}

}  // namespace

TrainResult train(PinnModel model, const LabeledDataset& data, const CollocationSet& collocation,
                  const TrainConfig& config, const ProgressCallback& progress) {
    config.validate();
    TrainResult result;
    const std::span<const Sample> all_data = data.samples;
    const std::span<const Point> all_points = collocation.interior;
    const std::span<const BoundaryPoint> all_boundary = collocation.boundary;
    auto record = [&](long it, const char* phase, double lr, const LossBreakdown& l) {
        result.history.push_back({it, phase, lr, l});
        if (progress) progress(result.history.back());
    };

    Rng rng(derive_seed(config.seed, 0xada3));
    BatchCursor<Sample> data_batches(all_data, config.adam.batch_data, rng);
    BatchCursor<Point> point_batches(all_points, config.adam.batch_collocation, rng);
    BatchCursor<BoundaryPoint> boundary_batches(all_boundary, config.adam.batch_boundary, rng);
    const optim::ExponentialDecay schedule{config.adam.learning_rate, config.adam.decay_rate,
                                           config.adam.decay_interval};
    ad::ParameterSet grad = model.params.zeros_like();
    Eigen::VectorXd theta = model.params.flatten();
    optim::Adam adam(theta.size());

    long iteration = 0;
    for (; iteration < config.adam.epochs; ++iteration) {
        const double lr = schedule.rate(iteration);
        const auto d = data_batches.next();
        const auto c = point_batches.next();
        const auto b = boundary_batches.next();
        grad.set_zero();
        LossBreakdown loss;
        bool ok = true;
        try {
            loss = total_loss(model, d, c, b, config.weights, &grad);
            ok = finite(loss) && grad.all_finite();
        } catch (const SingularDensityError& e) {
            ok = false;
            result.abort_reason = e.what();
        }
        if (!ok) {
            result.aborted = true;
            if (result.abort_reason.empty()) result.abort_reason = "non-finite loss";
            result.abort_reason = "adam iteration " + std::to_string(iteration) + ": " + result.abort_reason;
            break;
        }
        record(iteration, "adam", lr, loss);
        theta = model.params.flatten();
        adam.step(theta, grad.flatten(), lr);
        if (!theta.allFinite()) {
            result.aborted = true;
            result.abort_reason = "adam iteration " + std::to_string(iteration) + ": non-finite parameters";
            break;
        }
        model.params.assign(theta);
    }

    if (!result.aborted && config.lbfgs.max_iterations > 0) {
        LossBreakdown last;
        auto objective = [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) -> double {
            model.params.assign(x);
            grad.set_zero();
            try {
                last = total_loss(model, all_data, all_points, all_boundary, config.weights, &grad);
            } catch (const SingularDensityError&) {
                last = LossBreakdown{};
                last.total = std::numeric_limits<double>::quiet_NaN();
                g.setConstant(std::numeric_limits<double>::quiet_NaN());
                return last.total;
            }
            g = grad.flatten();
            return finite(last) ? last.total : std::numeric_limits<double>::quiet_NaN();
        };
        optim::LbfgsOptions opts;
        opts.max_iterations = config.lbfgs.max_iterations;
        opts.history = config.lbfgs.history;
        opts.c1 = config.lbfgs.c1;
        opts.c2 = config.lbfgs.c2;
        opts.gradient_floor = config.lbfgs.gradient_floor;
        const long base = iteration;
        theta = model.params.flatten();
        const auto report = optim::lbfgs_minimize(objective, theta, opts, [&](int it, double, const Eigen::VectorXd&) {
            record(base + it - 1, "lbfgs", 0.0, last);
        });
        model.params.assign(theta);
        result.lbfgs_fallbacks = report.fallback_steps;
        result.lbfgs_stop = report.stop_reason;
        if (report.non_finite && report.iterations == 0) {
            result.aborted = true;
            result.abort_reason = "lbfgs: " + report.stop_reason;
        }
    }

    try {
        result.final_loss = total_loss(model, all_data, all_points, all_boundary, config.weights);
    } catch (const SingularDensityError& e) {
        result.final_loss.total = std::numeric_limits<double>::quiet_NaN();
        result.aborted = true;
        result.abort_reason = e.what();
    }
    result.model = std::move(model);
    return result;
}

void write_loss_history(std::ostream& out, std::span<const LossRecord> history) {
    out << "iter,phase,lr,total,data,mom,cont,bc,moment\n";
    const auto old = out.precision(17);
    for (const auto& r : history) {
        out << r.iteration << ',' << r.phase << ',' << r.learning_rate << ',' << r.loss.total << ','
            << r.loss.data << ',' << r.loss.momentum << ',' << r.loss.continuity << ',' << r.loss.boundary
            << ',' << r.loss.moment << '\n';
    }
    out.precision(old);
}

// -- evaluation ------------------------------------------------------------------

namespace {

std::vector<Point> fluid_points(const surface::SolidMask& mask, std::uint64_t step, std::vector<std::size_t>& nodes) {
    std::vector<Point> pts;
    for (int j = 0; j < mask.ny(); ++j) {
        for (int i = 0; i < mask.nx(); ++i) {
            if (mask.solid(i, j)) continue;
            nodes.push_back(mask.index(i, j));
            pts.push_back({static_cast<double>(i), static_cast<double>(j), static_cast<double>(step)});
        }
    }
    return pts;
}

}  // namespace

lbm::FieldSnapshot predict_fields(const PinnModel& model, const surface::SolidMask& mask, std::uint64_t step) {
    lbm::FieldSnapshot s;
    s.step = step;
    s.nx = mask.nx();
    s.ny = mask.ny();
    s.rho.assign(mask.size(), kNaN);
    s.u.assign(mask.size(), kNaN);
    s.v.assign(mask.size(), kNaN);
    s.p.assign(mask.size(), kNaN);
    std::vector<std::size_t> nodes;
    const auto pts = fluid_points(mask, step, nodes);
    if (pts.empty()) return s;
    ad::JetBatch batch(model.params, model.spec, model.network_inputs(pts), ad::JetLayout::value_only());
    const auto& o = batch.output();
    for (std::size_t k = 0; k < pts.size(); ++k) {
        std::array<double, kMacroOutputs> nd{};
        for (int c = 0; c < kMacroOutputs; ++c) {
            nd[c] = model.norm.output_shift[c] + model.norm.output_scale[c] * o(c, Eigen::Index(k));
        }
        const auto lat = to_lattice(model.scales, nd);
        s.u[nodes[k]] = lat[kU];
        s.v[nodes[k]] = lat[kV];
        s.p[nodes[k]] = lat[kP];
        s.rho[nodes[k]] = lat[kRho];
    }
    return s;
}

namespace {

/// d/dx and d/dy of the nondimensional u and v, scaled to lattice units.
struct VelocityGradients {
    std::vector<double> u_x, u_y, v_x, v_y;
};

VelocityGradients velocity_gradients(const PinnModel& model, std::span<const Point> points) {
    VelocityGradients g;
    if (points.empty()) return g;
    ad::JetBatch batch(model.params, model.spec, model.network_inputs(points), ad::JetLayout{{0, 1}, {}});
    const double factor = model.scales.inlet_speed / model.scales.height;
    const double cu = model.norm.output_scale[kU] * factor, cv = model.norm.output_scale[kV] * factor;
    const double sx = model.norm.input_scale[0], sy = model.norm.input_scale[1];
    const auto dx = batch.first(0), dy = batch.first(1);
    for (int j = 0; j < batch.points(); ++j) {
        g.u_x.push_back(cu * sx * dx(kU, j));
        g.u_y.push_back(cu * sy * dy(kU, j));
        g.v_x.push_back(cv * sx * dx(kV, j));
        g.v_y.push_back(cv * sy * dy(kV, j));
    }
    return g;
}

}  // namespace

std::vector<double> model_vorticity(const PinnModel& model, const surface::SolidMask& mask, std::uint64_t step) {
    std::vector<double> w(mask.size(), kNaN);
    std::vector<std::size_t> nodes;
    const auto pts = fluid_points(mask, step, nodes);
    const auto g = velocity_gradients(model, pts);
    for (std::size_t k = 0; k < pts.size(); ++k) w[nodes[k]] = g.v_x[k] - g.u_y[k];
    return w;
}

std::vector<double> model_continuity(const PinnModel& model, std::span<const Point> points) {
    const auto g = velocity_gradients(model, points);
    std::vector<double> r(points.size());
    for (std::size_t k = 0; k < points.size(); ++k) r[k] = g.u_x[k] + g.v_y[k];
    return r;
}

}  // namespace roughflow::pinn
