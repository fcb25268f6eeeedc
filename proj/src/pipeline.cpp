#include "roughflow/pipeline.hpp"

#include "roughflow/error.hpp"
#include "roughflow/parallel.hpp"
#include "roughflow/random.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

namespace roughflow::pipeline {

namespace {

// Stream labels for derive_seed; each consumer of the run seed gets its own.
constexpr std::uint64_t kDatasetStream = 0xda7a;
constexpr std::uint64_t kInitStream = 0x1417;
constexpr std::uint64_t kCollocationStream = 0xc011;
constexpr std::uint64_t kProbeStream = 0x9e0b;
constexpr std::uint64_t kBandProbeStream = 0xba4d;
constexpr std::uint64_t kTopWallStream = 0x709;

double parse_value(const std::string& v) {
    double out = 0.0;
    const auto* end = v.data() + v.size();
    const auto [ptr, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || ptr != end || !std::isfinite(out)) {
        throw ParameterError("sweep value '" + v + "' is not a finite real");
    }
    return out;
}

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

surface::WallProfile flat_wall(int nx, surface::WallSide side) {
    surface::WallProfile p;
    p.side = side;
    for (int i = 0; i < nx; ++i) {
        p.x.push_back(i);
        p.y.push_back(0.0);
    }
    return p;
}

void say(std::ostream* log, const std::string& line) {
    if (log) *log << line << '\n' << std::flush;
}

std::string describe(const std::exception& e) {
    if (const auto* re = dynamic_cast<const Error*>(&e)) return re->kind() + ": " + re->what();
    return std::string("internal: ") + e.what();
}

}  // namespace

Geometry build_geometry(const RunConfig& config) {
    const auto& s = config.surface;
    const int nx = config.lattice.nx;
    auto spec = s.spec;
    if (s.height > 0.0 && spec.amplitude == 0.0) spec.amplitude = 1.0;
    const bool rough = spec.amplitude > 0.0 && s.walls != datastore::RoughWalls::none;
    const bool rough_bottom = rough && s.walls != datastore::RoughWalls::top;
    const bool rough_top = rough && s.walls != datastore::RoughWalls::bottom;

    Geometry g;
    g.bottom = rough_bottom ? surface::make_wall(spec, nx, surface::WallSide::bottom, s.height)
                            : flat_wall(nx, surface::WallSide::bottom);
    auto top_spec = spec;
    if (top_spec.phases.empty()) top_spec.phase_seed = derive_seed(spec.phase_seed, kTopWallStream);
    g.top = rough_top ? surface::make_wall(top_spec, nx, surface::WallSide::top, s.height)
                      : flat_wall(nx, surface::WallSide::top);
    g.mask = surface::rasterize_walls(g.top, g.bottom, nx, config.lattice.ny, config.lattice.H);
    if (!g.mask.fluid_connected_inlet_to_outlet()) {
        throw GeometryError("fluid region is not a single connected channel from inlet to outlet");
    }
    return g;
}

lbm::LatticeSpec lattice_spec(const RunConfig& config, const Geometry& geometry) {
    lbm::LatticeSpec spec;
    spec.mask = geometry.mask;
    spec.streamwise = config.lattice.streamwise;
    return spec;
}

std::vector<lbm::FieldSnapshot> simulate(const RunConfig& config, const Geometry& geometry) {
    std::vector<lbm::FieldSnapshot> out;
    lbm::run_simulation(lattice_spec(config, geometry), config.flow_params(),
                        {config.flow.steps, config.flow.snapshot_interval},
                        [&](const lbm::FieldSnapshot& s) { out.push_back(s); });
    return out;
}

SnapshotSplit split_snapshots(const RunConfig& config, std::span<const lbm::FieldSnapshot> snapshots) {
    SnapshotSplit split;
    for (const auto& s : snapshots) {
        if (s.step == config.dataset.holdout_step) {
            split.holdout = s;
        } else if (s.step >= config.dataset.first_step) {
            split.train.push_back(s);
        }
    }
    if (split.train.empty()) {
        throw ParameterError("no snapshot at or after dataset.first_step = " +
                             std::to_string(config.dataset.first_step));
    }
    return split;
}

pinn::Scales scales_for(const RunConfig& config) {
    const auto fp = config.flow_params();
    pinn::Scales s;
    s.height = config.lattice.H;
    s.inlet_speed = config.flow.inlet_speed;
    s.reference_density = 1.0;
    s.outlet_pressure = config.flow.p0;
    s.reynolds = fp.reynolds;
    return s;
}

pinn::Domain domain_for(const RunConfig& config) {
    if (config.dataset.first_step > config.flow.steps) {
        throw ParameterError("dataset.first_step lies beyond flow.steps");
    }
    return {config.lattice.nx, config.lattice.ny, static_cast<double>(config.dataset.first_step),
            static_cast<double>(config.flow.steps)};
}

pinn::ModelOptions model_options_for(const RunConfig& config) {
    pinn::ModelOptions o;
    o.kinetic_head = config.network.kinetic_head;
    o.geometry_inputs = config.network.geometry_inputs;
    o.reynolds_input = config.network.reynolds_input;
    o.geometry_amplitude = config.surface.height > 0.0 ? config.surface.height : config.surface.spec.amplitude;
    o.geometry_dimension = config.surface.spec.fractal_dimension;
    return o;
}

pinn::CollocationSet collocation_for(const RunConfig& config, const surface::SolidMask& mask,
                                     const lbm::FieldSnapshot* initial_state) {
    return pinn::sample_collocation(mask, config.lattice.H, domain_for(config), scales_for(config), config.sampling,
                                    derive_seed(config.seed, kCollocationStream), initial_state);
}

std::vector<pinn::Point> probe_points(const RunConfig& config, const surface::SolidMask& mask, std::size_t count,
                                      std::uint64_t seed, bool band_only) {
    pinn::SamplingConfig pc;
    pc.strategy = band_only ? pinn::SamplingStrategy::near_wall_enriched : pinn::SamplingStrategy::uniform;
    pc.total = count;
    pc.band_fraction = 1.0;
    pc.wall = pc.inlet = pc.outlet = pc.initial = 0;
    return pinn::sample_collocation(mask, config.lattice.H, domain_for(config), scales_for(config), pc, seed)
        .interior;
}

ResidualSummary residual_summary(const pinn::PinnModel& model, std::span<const pinn::Point> points) {
    ResidualSummary s;
    if (points.empty()) return s;
    const auto r = pinn::pde_residuals(model, points);
    for (const auto& x : r) {
        s.mean_norm += std::sqrt(x.continuity * x.continuity + x.momentum_x * x.momentum_x +
                                 x.momentum_y * x.momentum_y);
    }
    s.mean_norm /= static_cast<double>(r.size());
    const auto c = pinn::model_continuity(model, points);
    for (double x : c) s.mean_abs_continuity += std::abs(x);
    s.mean_abs_continuity /= static_cast<double>(c.size());
    return s;
}

pinn::TrainResult train_model(const RunConfig& config, const surface::SolidMask& mask,
                              std::span<const lbm::FieldSnapshot> train_snapshots,
                              const pinn::ProgressCallback& progress) {
    for (const auto& s : train_snapshots) {
        if (s.nx != mask.nx() || s.ny != mask.ny()) {
            throw ShapeError("snapshot grid " + std::to_string(s.nx) + "x" + std::to_string(s.ny) +
                             " does not match configured lattice " + std::to_string(mask.nx()) + "x" +
                             std::to_string(mask.ny()));
        }
        if (!(s.mask() == mask)) {
            throw GeometryError("snapshot at step " + std::to_string(s.step) +
                                " has a solid mask different from the configured geometry");
        }
    }
    const auto data = pinn::build_dataset(train_snapshots, config.dataset.max_points,
                                          derive_seed(config.seed, kDatasetStream));
    const auto domain = domain_for(config);
    const auto scales = scales_for(config);
    const auto options = model_options_for(config);
    const auto norm = pinn::fit_normalization(data, domain, scales, options);
    pinn::NetworkSettings net;
    net.hidden_layers = config.network.hidden_layers;
    net.hidden_width = config.network.hidden_width;
    net.activation = config.network.activation;
    net.init_seed = derive_seed(config.seed, kInitStream);
    auto model = pinn::make_model(net, scales, options, norm);

    const lbm::FieldSnapshot* initial = nullptr;
    if (config.sampling.initial > 0) {
        for (const auto& s : train_snapshots) {
            if (s.step == config.dataset.first_step) initial = &s;
        }
        if (!initial) {
            throw ParameterError("initial-condition points need a snapshot at dataset.first_step = " +
                                 std::to_string(config.dataset.first_step));
        }
    }
    const auto colloc = collocation_for(config, mask, initial);
    auto tc = config.training;
    tc.seed = config.seed;
    return pinn::train(std::move(model), data, colloc, tc, progress);
}

metrics::MetricsReport evaluate_model(const pinn::PinnModel& model, const lbm::FieldSnapshot& ref,
                                      VorticityMethod method) {
    const auto mask = ref.mask();
    const auto pred = pinn::predict_fields(model, mask, ref.step);
    metrics::CompareOptions o;
    if (method == VorticityMethod::autodiff) {
        o.pred_vorticity = pinn::model_vorticity(model, mask, ref.step);
        std::vector<pinn::Point> pts;
        for (int j = 0; j < mask.ny(); ++j) {
            for (int i = 0; i < mask.nx(); ++i) {
                if (mask.fluid(i, j)) pts.push_back({double(i), double(j), double(ref.step)});
            }
        }
        o.pred_continuity = metrics::abs_stats(pinn::model_continuity(model, pts));
        o.vorticity_method = "autodiff";
    }
    return metrics::compare(pred, ref, o);
}

double converged_max_vorticity(const lbm::FieldSnapshot& s) {
    const auto w = metrics::vorticity(s);
    const int margin = static_cast<int>(std::lround(kVorticityMargin * s.nx));
    return metrics::max_abs_vorticity({s.nx, s.ny, w}, margin);
}

// -- sweeps ----------------------------------------------------------------------

RunConfig apply_sweep_value(const RunConfig& base, datastore::SweepAxis axis, const std::string& value) {
    using datastore::SweepAxis;
    auto c = base;
    c.sweep = {};
    switch (axis) {
        case SweepAxis::re:
            c.flow.re = parse_value(value);
            c.flow.nu.reset();
            break;
        case SweepAxis::amplitude:
            c.surface.height = parse_value(value);
            break;
        case SweepAxis::collocation_count: {
            const double n = parse_value(value);
            if (!(n >= 1.0) || n != std::floor(n)) throw ParameterError("collocation count must be a positive integer");
            c.sampling.total = static_cast<std::size_t>(n);
            break;
        }
        case SweepAxis::activation:
            c.network.activation = ad::parse_activation(value);
            break;
        case SweepAxis::learning_rate:
            c.training.adam.learning_rate = parse_value(value);
            break;
        case SweepAxis::strategy:
            c.sampling.strategy = pinn::parse_strategy(value);
            break;
    }
    // Reparse the canonical form so every domain check applies to the new value.
    return datastore::parse_config(datastore::serialize_config(c));
}

namespace {

void write_snapshots(const fs::path& dir, std::span<const lbm::FieldSnapshot> snaps, std::uint64_t hash,
                     const RunConfig& config) {
    datastore::Manifest m;
    m.headers["stage"] = "simulate";
    m.headers["config_hash"] = datastore::hex_hash(hash);
    m.headers["nx"] = std::to_string(config.lattice.nx);
    m.headers["ny"] = std::to_string(config.lattice.ny);
    for (const auto& s : snaps) {
        char name[40];
        std::snprintf(name, sizeof name, "snap_%010llu.rfs", static_cast<unsigned long long>(s.step));
        datastore::write_snapshot(dir / name, s, hash);
        m.paths.push_back(name);
    }
    datastore::write_manifest(dir / "dataset.manifest", m);
}

void write_text(const fs::path& path, const std::string& text) { datastore::write_file(path, text); }

std::string loss_csv(const pinn::TrainResult& r) {
    std::ostringstream ss;
    pinn::write_loss_history(ss, r.history);
    return ss.str();
}

pinn::ProgressCallback progress_logger(std::ostream* log, const std::string& prefix) {
    if (!log) return {};
    return [log, prefix](const pinn::LossRecord& r) {
        if (r.iteration % 100 != 0) return;
        char buf[160];
        std::snprintf(buf, sizeof buf, "%s%s %6ld  loss %.4e  data %.3e  mom %.3e  cont %.3e  bc %.3e", prefix.c_str(),
                      r.phase.c_str(), r.iteration, r.loss.total, r.loss.data, r.loss.momentum, r.loss.continuity,
                      r.loss.boundary);
        *log << buf << '\n' << std::flush;
    };
}

}  // namespace

LegOutcome run_leg(const RunConfig& config, const std::string& value, const fs::path& dir, std::ostream* log) {
    LegOutcome out;
    out.value = value;
    try {
        const auto hash = datastore::config_hash(config);
        const auto geometry = build_geometry(config);
        say(log, "[" + value + "] simulating " + std::to_string(config.flow.steps) + " steps");
        const auto snaps = simulate(config, geometry);
        if (!dir.empty()) write_snapshots(dir / "data", snaps, hash, config);
        const auto split = split_snapshots(config, snaps);
        if (!split.holdout) {
            throw ParameterError("held-out step " + std::to_string(config.dataset.holdout_step) +
                                 " is not an emitted snapshot");
        }
        out.omega_max_ref = converged_max_vorticity(snaps.back());
        say(log, "[" + value + "] training on " + std::to_string(split.train.size()) + " snapshots");
        const auto result = train_model(config, geometry.mask, split.train, progress_logger(log, "[" + value + "] "));
        if (result.aborted) throw NumericError("training aborted: " + result.abort_reason);
        out.final_loss = result.final_loss;
        out.lbfgs_fallbacks = result.lbfgs_fallbacks;
        out.report = evaluate_model(result.model, *split.holdout, VorticityMethod::finite_difference);
        const auto probe = probe_points(config, geometry.mask, 4096, derive_seed(config.seed, kProbeStream));
        out.probe = residual_summary(result.model, probe);
        const auto band = probe_points(config, geometry.mask, 4096, derive_seed(config.seed, kBandProbeStream), true);
        out.band_probe = residual_summary(result.model, band);
        if (!dir.empty()) {
            datastore::write_checkpoint(dir / "model.rfp", datastore::Checkpoint::from_model(result.model, hash));
            write_text(dir / "loss.csv", loss_csv(result));
            std::ostringstream rep;
            metrics::write_report_csv(rep, out.report);
            write_text(dir / "report.csv", rep.str());
        }
    } catch (const std::exception& e) {
        out.error = describe(e);
        say(log, "[" + value + "] failed: " + *out.error);
    }
    return out;
}

LineFit fit_line(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw ShapeError("fit inputs differ in length");
    const auto n = static_cast<double>(x.size());
    double mx = 0, my = 0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        mx += x[k];
        my += y[k];
    }
    mx /= n;
    my /= n;
    double sxx = 0, sxy = 0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        sxx += (x[k] - mx) * (x[k] - mx);
        sxy += (x[k] - mx) * (y[k] - my);
    }
    if (x.size() < 2 || sxx == 0.0) throw ParameterError("line fit needs at least two distinct x values");
    return {sxy / sxx, my - sxy / sxx * mx};
}

void write_sweep_report(std::ostream& out, datastore::SweepAxis axis, std::span<const LegOutcome> legs) {
    const auto old = out.precision(17);
    out << datastore::to_string(axis) << ",field,metric,value\n";
    std::vector<double> hx, mae_w;
    for (const auto& leg : legs) {
        if (leg.error) {
            std::string msg = *leg.error;
            std::replace(msg.begin(), msg.end(), '"', '\'');
            out << leg.value << ",error,message,\"" << msg << "\"\n";
            continue;
        }
        metrics::write_report_rows(out, leg.report, leg.value);
        const auto& l = leg.final_loss;
        for (const auto& [name, v] : {std::pair{"total", l.total}, {"data", l.data}, {"momentum", l.momentum},
                                      {"continuity", l.continuity}, {"boundary", l.boundary}, {"moment", l.moment}}) {
            out << leg.value << ",loss," << name << ',' << v << '\n';
        }
        out << leg.value << ",omega,max_abs_ref," << leg.omega_max_ref << '\n';
        out << leg.value << ",pde,mean_residual_norm," << leg.probe.mean_norm << '\n';
        out << leg.value << ",pde,band_mean_residual_norm," << leg.band_probe.mean_norm << '\n';
        out << leg.value << ",continuity,probe_mean_abs," << leg.probe.mean_abs_continuity << '\n';
        out << leg.value << ",lbfgs,fallback_steps," << leg.lbfgs_fallbacks << '\n';
        if (axis == datastore::SweepAxis::amplitude) {
            hx.push_back(parse_value(leg.value));
            mae_w.push_back(leg.report.omega.mae);
        }
    }
    if (axis == datastore::SweepAxis::amplitude && hx.size() >= 2) {
        try {
            const auto fit = fit_line(hx, mae_w);
            out << "fit,omega,mae_slope," << fit.slope << '\n';
            out << "fit,omega,mae_intercept," << fit.intercept << '\n';
        } catch (const ParameterError&) {
        }
    }
    out.precision(old);
}

// -- commands --------------------------------------------------------------------

namespace {

RunConfig load(const CommandOptions& o) {
    if (o.config.empty()) throw ConfigError("--config is required");
    auto c = datastore::load_config(o.config);
    if (o.seed) c.set_seed(*o.seed);
    return c;
}

void require_path(const fs::path& p, const char* flag) {
    if (p.empty()) throw ParameterError(std::string(flag) + " is required");
}

fs::path stage_path(const fs::path& artifact) {
    auto p = artifact;
    p += ".stage";
    return p;
}

/// Stage key: config hash folded with the bytes of every input file.
std::string stage_key(std::uint64_t config_hash, std::span<const fs::path> inputs) {
    std::uint64_t h = datastore::fnv1a64(datastore::hex_hash(config_hash));
    for (const auto& p : inputs) h = datastore::fnv1a64(datastore::read_file(p), h);
    return datastore::hex_hash(h);
}

bool up_to_date(const fs::path& record, std::string_view stage, const std::string& key, bool force) {
    if (force || !fs::exists(record)) return false;
    try {
        const auto m = datastore::read_manifest(record);
        const auto s = m.headers.find("stage");
        const auto k = m.headers.find("stage_key");
        if (s == m.headers.end() || s->second != stage || k == m.headers.end() || k->second != key) return false;
        for (const auto& p : m.paths) {
            if (!fs::exists(record.parent_path() / p)) return false;
        }
        return true;
    } catch (const Error&) {
        return false;
    }
}

void write_stage(const fs::path& record, std::string_view stage, const std::string& key, std::uint64_t config_hash,
                 const std::vector<std::string>& artifacts) {
    datastore::Manifest m;
    m.headers["stage"] = std::string(stage);
    m.headers["stage_key"] = key;
    m.headers["config_hash"] = datastore::hex_hash(config_hash);
    m.paths = artifacts;
    datastore::write_manifest(record, m);
}

std::string csv_profile(const surface::WallProfile& p) {
    std::string s = "x,y\n";
    for (std::size_t k = 0; k < p.x.size(); ++k) s += fmt17(p.x[k]) + "," + fmt17(p.y[k]) + "\n";
    return s;
}

fs::path sibling(const fs::path& p, const std::string& suffix) {
    return p.parent_path() / (p.stem().string() + suffix + p.extension().string());
}

VorticityMethod parse_method(const std::string& m) {
    if (m == "auto" || m == "autodiff") return VorticityMethod::autodiff;
    if (m == "fd" || m == "finite_difference") return VorticityMethod::finite_difference;
    throw ParameterError("unknown vorticity method '" + m + "' (expected auto|autodiff|fd)");
}

}  // namespace

bool cmd_surface(const CommandOptions& o) {
    const auto cfg = load(o);
    require_path(o.out, "--out");
    const auto hash = datastore::config_hash(cfg);
    const auto key = stage_key(hash, {});
    const auto record = stage_path(o.out);
    if (up_to_date(record, "surface", key, o.force)) {
        say(o.log, "surface: up to date (" + o.out.string() + ")");
        return false;
    }
    const auto g = build_geometry(cfg);
    write_text(o.out, csv_profile(g.bottom));
    std::vector<std::string> artifacts{o.out.filename().string()};
    const bool rough_top = cfg.surface.walls == datastore::RoughWalls::both ||
                           cfg.surface.walls == datastore::RoughWalls::top;
    if (rough_top && (cfg.surface.spec.amplitude > 0.0 || cfg.surface.height > 0.0)) {
        const auto top = sibling(o.out, "_top");
        write_text(top, csv_profile(g.top));
        artifacts.push_back(top.filename().string());
    }
    write_stage(record, "surface", key, hash, artifacts);
    say(o.log, "surface: wrote " + o.out.string());
    return true;
}

bool cmd_simulate(const CommandOptions& o) {
    const auto cfg = load(o);
    require_path(o.out, "--out-dir");
    const auto hash = datastore::config_hash(cfg);
    const auto key = stage_key(hash, {});
    const auto record = o.out / "simulate.stage";
    if (up_to_date(record, "simulate", key, o.force)) {
        say(o.log, "simulate: up to date (" + o.out.string() + ")");
        return false;
    }
    const auto g = build_geometry(cfg);
    say(o.log, "simulate: " + std::to_string(cfg.lattice.nx) + "x" + std::to_string(cfg.lattice.ny) + ", " +
                   std::to_string(cfg.flow.steps) + " steps, Re = " + fmt17(cfg.flow_params().reynolds));
    const auto snaps = simulate(cfg, g);
    write_snapshots(o.out, snaps, hash, cfg);
    const auto m = datastore::read_manifest(o.out / "dataset.manifest");
    auto artifacts = m.paths;
    artifacts.push_back("dataset.manifest");
    write_stage(record, "simulate", key, hash, artifacts);
    say(o.log, "simulate: wrote " + std::to_string(snaps.size()) + " snapshots to " + o.out.string());
    return true;
}

bool cmd_sample(const CommandOptions& o) {
    const auto cfg = load(o);
    require_path(o.out, "--out");
    const auto hash = datastore::config_hash(cfg);
    std::vector<fs::path> inputs;
    if (!o.data.empty()) inputs.push_back(o.data);
    const auto key = stage_key(hash, inputs);
    const auto record = stage_path(o.out);
    if (up_to_date(record, "sample", key, o.force)) {
        say(o.log, "sample: up to date (" + o.out.string() + ")");
        return false;
    }
    const auto g = build_geometry(cfg);
    std::optional<lbm::FieldSnapshot> initial;
    if (cfg.sampling.initial > 0) {
        if (o.data.empty()) throw ParameterError("sampling.initial > 0 needs --data <manifest> for the initial state");
        const auto loaded = datastore::load_manifest_snapshots(o.data);
        for (const auto& w : loaded.warnings) say(o.log, "warning: " + w);
        for (const auto& s : loaded.snapshots) {
            if (s.snapshot.step == cfg.dataset.first_step) initial = s.snapshot;
        }
        if (!initial) throw ParameterError("manifest has no snapshot at dataset.first_step");
    }
    const auto set = collocation_for(cfg, g.mask, initial ? &*initial : nullptr);
    std::string csv = "x,y,t,kind\n";
    for (std::size_t k = 0; k < set.interior.size(); ++k) {
        const auto& p = set.interior[k];
        csv += fmt17(p.x) + "," + fmt17(p.y) + "," + fmt17(p.t) + (set.from_band[k] ? ",band\n" : ",interior\n");
    }
    for (const auto& b : set.boundary) {
        csv += fmt17(b.point.x) + "," + fmt17(b.point.y) + "," + fmt17(b.point.t) + "," +
               std::string(pinn::to_string(b.kind)) + "\n";
    }
    write_text(o.out, csv);
    write_stage(record, "sample", key, hash, {o.out.filename().string()});
    say(o.log, "sample: wrote " + std::to_string(set.interior.size() + set.boundary.size()) + " points to " +
                   o.out.string());
    return true;
}

bool cmd_train(const CommandOptions& o) {
    const auto cfg = load(o);
    require_path(o.data, "--data");
    require_path(o.out, "--out");
    const auto hash = datastore::config_hash(cfg);
    const auto manifest = datastore::read_manifest(o.data);
    std::vector<fs::path> inputs{o.data};
    for (const auto& p : manifest.paths) {
        fs::path path(p);
        inputs.push_back(path.is_relative() ? o.data.parent_path() / path : path);
    }
    const auto key = stage_key(hash, inputs);
    const auto record = stage_path(o.out);
    if (up_to_date(record, "train", key, o.force)) {
        say(o.log, "train: up to date (" + o.out.string() + ")");
        return false;
    }
    const auto loaded = datastore::load_manifest_snapshots(o.data);
    for (const auto& w : loaded.warnings) say(o.log, "warning: " + w);
    std::vector<lbm::FieldSnapshot> snaps;
    for (const auto& s : loaded.snapshots) {
        if (s.snapshot.nx != cfg.lattice.nx || s.snapshot.ny != cfg.lattice.ny) {
            throw ShapeError("snapshot grid " + std::to_string(s.snapshot.nx) + "x" + std::to_string(s.snapshot.ny) +
                             " does not match configured lattice " + std::to_string(cfg.lattice.nx) + "x" +
                             std::to_string(cfg.lattice.ny));
        }
        snaps.push_back(s.snapshot);
    }
    const auto split = split_snapshots(cfg, snaps);
    const auto g = build_geometry(cfg);
    say(o.log, "train: " + std::to_string(split.train.size()) + " training snapshots");
    const auto result = train_model(cfg, g.mask, split.train, progress_logger(o.log, "train: "));
    datastore::write_checkpoint(o.out, datastore::Checkpoint::from_model(result.model, hash));
    const auto loss_path = sibling(o.out, ".loss").replace_extension(".csv");
    write_text(loss_path, loss_csv(result));
    if (result.aborted) {
        throw NumericError("training aborted (" + result.abort_reason + "); last good parameters written to " +
                           o.out.string());
    }
    write_stage(record, "train", key, hash, {o.out.filename().string(), loss_path.filename().string()});
    char buf[160];
    std::snprintf(buf, sizeof buf, "train: final loss %.6e (L-BFGS: %s, %d fallback steps)", result.final_loss.total,
                  result.lbfgs_stop.c_str(), result.lbfgs_fallbacks);
    say(o.log, buf);
    return true;
}

bool cmd_evaluate(const CommandOptions& o) {
    require_path(o.pred, "--pred");
    require_path(o.ref, "--ref");
    require_path(o.out, "--report");
    const auto method = parse_method(o.vorticity);
    std::uint64_t hash = 0;
    if (!o.config.empty()) hash = datastore::config_hash(load(o));
    std::vector<fs::path> inputs{o.pred, o.ref};
    const auto key = stage_key(datastore::fnv1a64(o.vorticity, hash), inputs);
    const auto record = stage_path(o.out);
    if (up_to_date(record, "evaluate", key, o.force)) {
        say(o.log, "evaluate: up to date (" + o.out.string() + ")");
        return false;
    }
    const auto ref = datastore::read_snapshot(o.ref).snapshot;
    const auto pred_bytes = datastore::read_file(o.pred);
    metrics::MetricsReport report;
    if (pred_bytes.starts_with("RFP1")) {
        const auto model = datastore::decode_checkpoint(pred_bytes).to_model();
        report = evaluate_model(model, ref, method);
    } else if (pred_bytes.starts_with("RFS1")) {
        const auto pred = datastore::decode_snapshot(pred_bytes).snapshot;
        report = metrics::compare(pred, ref);
    } else {
        throw FormatError(o.pred.string() + ": neither an RFS1 snapshot nor an RFP1 checkpoint at byte offset 0");
    }
    std::ostringstream ss;
    metrics::write_report_csv(ss, report);
    write_text(o.out, ss.str());
    write_stage(record, "evaluate", key, hash, {o.out.filename().string()});
    say(o.log, "evaluate: wrote " + o.out.string());
    return true;
}

bool cmd_sweep(const CommandOptions& o) {
    const auto cfg = load(o);
    require_path(o.out, "--out-dir");
    if (!cfg.sweep.axis) throw ConfigError("sweep needs sweep.axis and sweep.values in the config");
    const auto axis = *cfg.sweep.axis;
    const auto hash = datastore::config_hash(cfg);
    const auto key = stage_key(hash, {});
    const auto record = o.out / "sweep.stage";
    if (up_to_date(record, "sweep", key, o.force)) {
        say(o.log, "sweep: up to date (" + o.out.string() + ")");
        return false;
    }
    // Validate every value before any leg starts.
    std::vector<RunConfig> legs;
    for (const auto& v : cfg.sweep.values) legs.push_back(apply_sweep_value(cfg, axis, v));

    fs::create_directories(o.out);
    const auto lock = o.out / ".sweep.lock";
    {
        std::FILE* f = std::fopen(lock.c_str(), "wx");
        if (!f) throw ContractError("output directory " + o.out.string() + " is in use by another sweep (" +
                                    lock.string() + " exists)");
        std::fclose(f);
    }
    struct LockGuard {
        fs::path path;
        ~LockGuard() {
            std::error_code ec;
            fs::remove(path, ec);
        }
    } guard{lock};

    std::vector<fs::path> dirs;
    for (std::size_t k = 0; k < legs.size(); ++k) dirs.push_back(o.out / ("leg_" + std::to_string(k)));
    std::vector<LegOutcome> outcomes(legs.size());
    const int width = std::max(1, std::min({o.parallel, thread_count(), static_cast<int>(legs.size())}));
    if (width == 1) {
        for (std::size_t k = 0; k < legs.size(); ++k) {
            outcomes[k] = run_leg(legs[k], cfg.sweep.values[k], dirs[k], o.log);
        }
    } else {
        std::atomic<std::size_t> next{0};
        std::mutex log_mutex;
        std::vector<std::thread> pool;
        for (int w = 0; w < width; ++w) {
            pool.emplace_back([&] {
                for (std::size_t k = next++; k < legs.size(); k = next++) {
                    outcomes[k] = run_leg(legs[k], cfg.sweep.values[k], dirs[k], nullptr);
                    std::lock_guard lk(log_mutex);
                    say(o.log, "[" + cfg.sweep.values[k] + "] " + (outcomes[k].error ? "failed" : "done"));
                }
            });
        }
        for (auto& t : pool) t.join();
    }
    std::ostringstream ss;
    write_sweep_report(ss, axis, outcomes);
    write_text(o.out / "sweep.csv", ss.str());
    write_stage(record, "sweep", key, hash, {"sweep.csv"});
    say(o.log, "sweep: wrote " + (o.out / "sweep.csv").string());
    return true;
}

}  // namespace roughflow::pipeline
