#include "roughflow/datastore.hpp"

#include "roughflow/error.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <sstream>

namespace roughflow::datastore {

// -- flow section ----------------------------------------------------------------

lbm::FlowParams FlowSection::params(double height) const {
    lbm::FlowParams p;
    if (nu) {
        p = lbm::FlowParams::from_viscosity(inlet_speed, *nu, height, p0);
    } else if (re) {
        p = lbm::FlowParams::from_reynolds(inlet_speed, *re, height, p0);
    } else {
        throw ConfigError("flow section needs flow.nu or flow.Re");
    }
    p.ramp_steps = ramp_steps;
    return p;
}

void RunConfig::set_seed(std::uint64_t s) {
    seed = s;
    training.seed = s;
}

std::string_view to_string(SweepAxis a) {
    switch (a) {
        case SweepAxis::re: return "Re";
        case SweepAxis::amplitude: return "amplitude";
        case SweepAxis::collocation_count: return "collocation_count";
        case SweepAxis::activation: return "activation";
        case SweepAxis::learning_rate: return "learning_rate";
        case SweepAxis::strategy: return "strategy";
    }
    return "unknown";
}

SweepAxis parse_sweep_axis(std::string_view name) {
    for (auto a : {SweepAxis::re, SweepAxis::amplitude, SweepAxis::collocation_count, SweepAxis::activation,
                   SweepAxis::learning_rate, SweepAxis::strategy}) {
        if (name == to_string(a)) return a;
    }
    throw ParameterError("unknown sweep axis '" + std::string(name) + "'");
}

// -- config grammar --------------------------------------------------------------

namespace {

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

double parse_real(std::string_view v) {
    double out = 0.0;
    const auto* end = v.data() + v.size();
    const auto [ptr, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || ptr != end || !std::isfinite(out)) {
        throw ParameterError("expected a finite real, got '" + std::string(v) + "'");
    }
    return out;
}

template <class T>
T parse_integer(std::string_view v) {
    T out{};
    const auto* end = v.data() + v.size();
    const auto [ptr, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || ptr != end) throw ParameterError("expected an integer, got '" + std::string(v) + "'");
    return out;
}

bool parse_bool(std::string_view v) {
    if (v == "true") return true;
    if (v == "false") return false;
    throw ParameterError("expected true or false, got '" + std::string(v) + "'");
}

std::string format_real(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

std::vector<std::string> split_list(std::string_view v) {
    std::vector<std::string> out;
    while (true) {
        const auto comma = v.find(',');
        const auto item = trim(v.substr(0, comma));
        if (item.empty()) throw ParameterError("empty entry in list");
        out.emplace_back(item);
        if (comma == std::string_view::npos) break;
        v.remove_prefix(comma + 1);
    }
    return out;
}

std::string join(const std::vector<std::string>& items) {
    std::string s;
    for (std::size_t k = 0; k < items.size(); ++k) s += (k ? "," : "") + items[k];
    return s;
}

std::string_view walls_name(RoughWalls w) {
    switch (w) {
        case RoughWalls::both: return "both";
        case RoughWalls::bottom: return "bottom";
        case RoughWalls::top: return "top";
        case RoughWalls::none: return "none";
    }
    return "both";
}

void require(bool ok, const std::string& msg) {
    if (!ok) throw ParameterError(msg);
}

double positive(std::string_view v) {
    const double x = parse_real(v);
    require(x > 0.0, "must be positive");
    return x;
}

double non_negative(std::string_view v) {
    const double x = parse_real(v);
    require(x >= 0.0, "must be >= 0");
    return x;
}

struct KeyDef {
    const char* name;
    std::function<void(RunConfig&, std::string_view)> set;
    std::function<std::optional<std::string>(const RunConfig&)> get;
};

template <class F>
auto always(F f) {
    return [f](const RunConfig& c) -> std::optional<std::string> { return f(c); };
}

const std::vector<KeyDef>& key_table() {
    static const std::vector<KeyDef> table = [] {
        std::vector<KeyDef> t;
        auto real = [&](const char* name, auto member, auto check) {
            t.push_back({name, [member, check](RunConfig& c, std::string_view v) { member(c) = check(v); },
                         always([member](const RunConfig& c) { return format_real(member(const_cast<RunConfig&>(c))); })});
        };
        auto integer = [&](const char* name, auto member, long long lo) {
            using T = std::remove_reference_t<decltype(member(std::declval<RunConfig&>()))>;
            t.push_back({name,
                         [member, lo](RunConfig& c, std::string_view v) {
                             const auto x = parse_integer<long long>(v);
                             require(x >= lo, "must be >= " + std::to_string(lo));
                             member(c) = static_cast<T>(x);
                         },
                         always([member](const RunConfig& c) {
                             return std::to_string(member(const_cast<RunConfig&>(c)));
                         })});
        };
        auto boolean = [&](const char* name, auto member) {
            t.push_back({name, [member](RunConfig& c, std::string_view v) { member(c) = parse_bool(v); },
                         always([member](const RunConfig& c) {
                             return std::string(member(const_cast<RunConfig&>(c)) ? "true" : "false");
                         })});
        };

        // surface
        real("surface.amplitude", [](RunConfig& c) -> double& { return c.surface.spec.amplitude; }, non_negative);
        real("surface.gamma", [](RunConfig& c) -> double& { return c.surface.spec.gamma; },
             [](std::string_view v) { const double x = parse_real(v); require(x > 1.0, "must exceed 1"); return x; });
        real("surface.dimension", [](RunConfig& c) -> double& { return c.surface.spec.fractal_dimension; },
             [](std::string_view v) {
                 const double x = parse_real(v);
                 require(x > 1.0 && x < 2.0, "must lie strictly inside (1, 2)");
                 return x;
             });
        integer("surface.n_min", [](RunConfig& c) -> int& { return c.surface.spec.n_min; }, 0);
        integer("surface.n_max", [](RunConfig& c) -> int& { return c.surface.spec.n_max; }, 0);
        t.push_back({"surface.phase_seed",
                     [](RunConfig& c, std::string_view v) { c.surface.spec.phase_seed = parse_integer<std::uint64_t>(v); },
                     always([](const RunConfig& c) { return std::to_string(c.surface.spec.phase_seed); })});
        t.push_back({"surface.phases",
                     [](RunConfig& c, std::string_view v) {
                         c.surface.spec.phases.clear();
                         for (const auto& s : split_list(v)) c.surface.spec.phases.push_back(parse_real(s));
                     },
                     [](const RunConfig& c) -> std::optional<std::string> {
                         if (c.surface.spec.phases.empty()) return std::nullopt;
                         std::vector<std::string> items;
                         for (double p : c.surface.spec.phases) items.push_back(format_real(p));
                         return join(items);
                     }});
        real("surface.height", [](RunConfig& c) -> double& { return c.surface.height; }, non_negative);
        t.push_back({"surface.walls",
                     [](RunConfig& c, std::string_view v) {
                         for (auto w : {RoughWalls::both, RoughWalls::bottom, RoughWalls::top, RoughWalls::none}) {
                             if (v == walls_name(w)) {
                                 c.surface.walls = w;
                                 return;
                             }
                         }
                         throw ParameterError("expected both|bottom|top|none");
                     },
                     always([](const RunConfig& c) { return std::string(walls_name(c.surface.walls)); })});

        // lattice
        integer("lattice.nx", [](RunConfig& c) -> int& { return c.lattice.nx; }, 2);
        integer("lattice.ny", [](RunConfig& c) -> int& { return c.lattice.ny; }, 5);
        real("lattice.H", [](RunConfig& c) -> double& { return c.lattice.H; }, positive);
        t.push_back({"lattice.streamwise",
                     [](RunConfig& c, std::string_view v) {
                         if (v == "inlet_outlet") c.lattice.streamwise = lbm::StreamwiseBoundary::inlet_outlet;
                         else if (v == "periodic") c.lattice.streamwise = lbm::StreamwiseBoundary::periodic;
                         else throw ParameterError("expected inlet_outlet|periodic");
                     },
                     always([](const RunConfig& c) {
                         return std::string(c.lattice.streamwise == lbm::StreamwiseBoundary::periodic ? "periodic"
                                                                                                      : "inlet_outlet");
                     })});

        // flow
        real("flow.U_i", [](RunConfig& c) -> double& { return c.flow.inlet_speed; },
             [](std::string_view v) {
                 const double x = parse_real(v);
                 require(std::abs(x) < 0.1, "must satisfy |U_i| < 0.1 (low-Mach limit)");
                 return x;
             });
        t.push_back({"flow.nu", [](RunConfig& c, std::string_view v) { c.flow.nu = positive(v); },
                     [](const RunConfig& c) -> std::optional<std::string> {
                         if (!c.flow.nu) return std::nullopt;
                         return format_real(*c.flow.nu);
                     }});
        t.push_back({"flow.Re", [](RunConfig& c, std::string_view v) { c.flow.re = positive(v); },
                     [](const RunConfig& c) -> std::optional<std::string> {
                         if (!c.flow.re) return std::nullopt;
                         return format_real(*c.flow.re);
                     }});
        real("flow.p0", [](RunConfig& c) -> double& { return c.flow.p0; }, positive);
        integer("flow.steps", [](RunConfig& c) -> std::uint64_t& { return c.flow.steps; }, 1);
        integer("flow.snapshot_interval", [](RunConfig& c) -> std::uint64_t& { return c.flow.snapshot_interval; }, 1);
        integer("flow.ramp_steps", [](RunConfig& c) -> std::uint64_t& { return c.flow.ramp_steps; }, 0);

        // dataset
        integer("dataset.first_step", [](RunConfig& c) -> std::uint64_t& { return c.dataset.first_step; }, 0);
        integer("dataset.holdout_step", [](RunConfig& c) -> std::uint64_t& { return c.dataset.holdout_step; }, 0);
        integer("dataset.max_points", [](RunConfig& c) -> std::size_t& { return c.dataset.max_points; }, 1);

        // network
        integer("network.hidden_layers", [](RunConfig& c) -> int& { return c.network.hidden_layers; }, 1);
        integer("network.hidden_width", [](RunConfig& c) -> int& { return c.network.hidden_width; }, 1);
        t.push_back({"network.activation",
                     [](RunConfig& c, std::string_view v) { c.network.activation = ad::parse_activation(v); },
                     always([](const RunConfig& c) { return std::string(ad::to_string(c.network.activation)); })});
        boolean("network.kinetic_head", [](RunConfig& c) -> bool& { return c.network.kinetic_head; });
        boolean("network.geometry_inputs", [](RunConfig& c) -> bool& { return c.network.geometry_inputs; });
        boolean("network.reynolds_input", [](RunConfig& c) -> bool& { return c.network.reynolds_input; });

        // training
        integer("training.adam_epochs", [](RunConfig& c) -> int& { return c.training.adam.epochs; }, 0);
        real("training.learning_rate", [](RunConfig& c) -> double& { return c.training.adam.learning_rate; }, positive);
        real("training.decay_rate", [](RunConfig& c) -> double& { return c.training.adam.decay_rate; },
             [](std::string_view v) {
                 const double x = parse_real(v);
                 require(x > 0.0 && x <= 1.0, "must lie in (0, 1]");
                 return x;
             });
        integer("training.decay_interval", [](RunConfig& c) -> int& { return c.training.adam.decay_interval; }, 1);
        integer("training.batch_data", [](RunConfig& c) -> std::size_t& { return c.training.adam.batch_data; }, 0);
        integer("training.batch_collocation", [](RunConfig& c) -> std::size_t& { return c.training.adam.batch_collocation; }, 0);
        integer("training.batch_boundary", [](RunConfig& c) -> std::size_t& { return c.training.adam.batch_boundary; }, 0);
        integer("training.lbfgs_iterations", [](RunConfig& c) -> int& { return c.training.lbfgs.max_iterations; }, 0);
        integer("training.lbfgs_history", [](RunConfig& c) -> int& { return c.training.lbfgs.history; }, 1);
        real("training.lbfgs_c1", [](RunConfig& c) -> double& { return c.training.lbfgs.c1; }, positive);
        real("training.lbfgs_c2", [](RunConfig& c) -> double& { return c.training.lbfgs.c2; }, positive);
        real("training.gradient_floor", [](RunConfig& c) -> double& { return c.training.lbfgs.gradient_floor; }, non_negative);
        real("training.w_data", [](RunConfig& c) -> double& { return c.training.weights.data; }, non_negative);
        real("training.w_physics", [](RunConfig& c) -> double& { return c.training.weights.physics; }, non_negative);
        real("training.w_cont", [](RunConfig& c) -> double& { return c.training.weights.cont; }, non_negative);
        real("training.w_bc", [](RunConfig& c) -> double& { return c.training.weights.bc; }, non_negative);
        real("training.w_moment", [](RunConfig& c) -> double& { return c.training.weights.moment; }, non_negative);

        // sampling
        t.push_back({"sampling.strategy",
                     [](RunConfig& c, std::string_view v) { c.sampling.strategy = pinn::parse_strategy(v); },
                     always([](const RunConfig& c) { return std::string(pinn::to_string(c.sampling.strategy)); })});
        integer("sampling.total", [](RunConfig& c) -> std::size_t& { return c.sampling.total; }, 1);
        real("sampling.band_fraction", [](RunConfig& c) -> double& { return c.sampling.band_fraction; },
             [](std::string_view v) {
                 const double x = parse_real(v);
                 require(x >= 0.0 && x <= 1.0, "must lie in [0, 1]");
                 return x;
             });
        integer("sampling.wall", [](RunConfig& c) -> std::size_t& { return c.sampling.wall; }, 0);
        integer("sampling.inlet", [](RunConfig& c) -> std::size_t& { return c.sampling.inlet; }, 0);
        integer("sampling.outlet", [](RunConfig& c) -> std::size_t& { return c.sampling.outlet; }, 0);
        integer("sampling.initial", [](RunConfig& c) -> std::size_t& { return c.sampling.initial; }, 0);

        // sweep
        t.push_back({"sweep.axis", [](RunConfig& c, std::string_view v) { c.sweep.axis = parse_sweep_axis(v); },
                     [](const RunConfig& c) -> std::optional<std::string> {
                         if (!c.sweep.axis) return std::nullopt;
                         return std::string(to_string(*c.sweep.axis));
                     }});
        t.push_back({"sweep.values", [](RunConfig& c, std::string_view v) { c.sweep.values = split_list(v); },
                     [](const RunConfig& c) -> std::optional<std::string> {
                         if (c.sweep.values.empty()) return std::nullopt;
                         return join(c.sweep.values);
                     }});

        // run
        t.push_back({"run.seed", [](RunConfig& c, std::string_view v) { c.set_seed(parse_integer<std::uint64_t>(v)); },
                     always([](const RunConfig& c) { return std::to_string(c.seed); })});
        return t;
    }();
    return table;
}

[[noreturn]] void config_error(int line, std::string_view key, const std::string& msg) {
    throw ConfigError("line " + std::to_string(line) + ": key '" + std::string(key) + "': " + msg);
}

/// Cross-key checks; `lines` maps keys to the line that set them.
void validate_config(const RunConfig& c, const std::map<std::string, int>& lines) {
    auto line_of = [&](const std::string& key) {
        const auto it = lines.find(key);
        return it == lines.end() ? 0 : it->second;
    };
    auto fail = [&](const std::string& key, const std::string& msg) { config_error(line_of(key), key, msg); };
    if (!c.flow.nu && !c.flow.re) fail("flow.nu", "exactly one of flow.nu or flow.Re is required");
    if (c.flow.nu && c.flow.re) {
        const double implied = c.flow.inlet_speed * c.lattice.H / *c.flow.nu;
        if (std::abs(implied - *c.flow.re) > 1e-9 * std::abs(*c.flow.re)) {
            fail(line_of("flow.Re") > line_of("flow.nu") ? "flow.Re" : "flow.nu",
                 "flow.nu and flow.Re disagree: U_i H / nu = " + format_real(implied) + " but Re = " +
                     format_real(*c.flow.re));
        }
    }
    if (c.lattice.H > c.lattice.ny) fail("lattice.H", "H exceeds lattice.ny");
    if (c.surface.spec.n_max < c.surface.spec.n_min) fail("surface.n_max", "n_max is below n_min");
    if (!c.surface.spec.phases.empty() &&
        static_cast<int>(c.surface.spec.phases.size()) != c.surface.spec.mode_count()) {
        fail("surface.phases", "needs one phase per mode (" + std::to_string(c.surface.spec.mode_count()) + ")");
    }
    if (c.flow.snapshot_interval > c.flow.steps) fail("flow.snapshot_interval", "exceeds flow.steps");
    if (!(c.training.lbfgs.c1 < c.training.lbfgs.c2 && c.training.lbfgs.c2 < 1.0)) {
        fail("training.lbfgs_c2", "line search needs 0 < c1 < c2 < 1");
    }
    if (c.sweep.axis && c.sweep.values.empty()) fail("sweep.values", "sweep axis given without values");
    try {
        c.flow_params().validate();
    } catch (const Error& e) {
        fail(c.flow.nu ? "flow.nu" : "flow.Re", e.what());
    }
    try {
        c.training.weights.validate();
    } catch (const Error& e) {
        fail("training.w_data", e.what());
    }
}

}  // namespace

RunConfig parse_config(std::string_view text) {
    RunConfig cfg;
    std::map<std::string, int> lines;
    bool saw_lattice = false, saw_flow = false;
    int line_no = 0;
    while (!text.empty()) {
        ++line_no;
        const auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) config_error(line_no, line, "expected 'section.key = value'");
        const auto key = trim(line.substr(0, eq));
        const auto value = trim(line.substr(eq + 1));
        const auto& table = key_table();
        const auto it = std::find_if(table.begin(), table.end(), [&](const KeyDef& d) { return key == d.name; });
        if (it == table.end()) config_error(line_no, key, "unknown key");
        if (lines.count(std::string(key))) config_error(line_no, key, "duplicate key");
        if (value.empty()) config_error(line_no, key, "missing value");
        try {
            it->set(cfg, value);
        } catch (const Error& e) {
            config_error(line_no, key, e.what());
        }
        lines[std::string(key)] = line_no;
        saw_lattice = saw_lattice || key.starts_with("lattice.");
        saw_flow = saw_flow || key.starts_with("flow.");
    }
    if (!saw_lattice) throw ConfigError("missing required section 'lattice'");
    if (!saw_flow) throw ConfigError("missing required section 'flow'");
    validate_config(cfg, lines);
    return cfg;
}

RunConfig load_config(const fs::path& path) {
    try {
        return parse_config(read_file(path));
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

std::string serialize_config(const RunConfig& config) {
    std::string out;
    for (const auto& d : key_table()) {
        if (const auto v = d.get(config)) out += std::string(d.name) + " = " + *v + "\n";
    }
    const auto fp = config.flow_params();
    out += "# derived: Re = " + format_real(fp.reynolds) + ", nu = " + format_real(fp.viscosity) +
           ", tau = " + format_real(fp.tau) + "\n";
    return out;
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis) {
    std::uint64_t h = basis;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t config_hash(const RunConfig& config) { return fnv1a64(serialize_config(config)); }

std::string hex_hash(std::uint64_t h) {
    char buf[19];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// -- byte streams ----------------------------------------------------------------

namespace {

template <class T>
T to_little(T v) {
    if constexpr (std::endian::native == std::endian::big) {
        T r{};
        auto* src = reinterpret_cast<const unsigned char*>(&v);
        auto* dst = reinterpret_cast<unsigned char*>(&r);
        for (std::size_t k = 0; k < sizeof(T); ++k) dst[k] = src[sizeof(T) - 1 - k];
        return r;
    } else {
        return v;
    }
}

}  // namespace

void ByteWriter::u32(std::uint32_t v) {
    v = to_little(v);
    out_.append(reinterpret_cast<const char*>(&v), sizeof v);
}

void ByteWriter::u64(std::uint64_t v) {
    v = to_little(v);
    out_.append(reinterpret_cast<const char*>(&v), sizeof v);
}

void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void ByteReader::fail(const std::string& msg) const {
    throw FormatError(what_ + ": " + msg + " at byte offset " + std::to_string(pos_));
}

void ByteReader::need(std::size_t n, const char* field) {
    if (remaining() < n) {
        fail(std::string("truncated ") + field + " (need " + std::to_string(n) + " bytes, have " +
             std::to_string(remaining()) + ")");
    }
}

std::uint8_t ByteReader::u8() {
    need(1, "u8");
    return static_cast<std::uint8_t>(bytes_[pos_++]);
}

std::uint32_t ByteReader::u32() {
    need(4, "u32");
    std::uint32_t v;
    std::memcpy(&v, bytes_.data() + pos_, 4);
    pos_ += 4;
    return to_little(v);
}

std::uint64_t ByteReader::u64() {
    need(8, "u64");
    std::uint64_t v;
    std::memcpy(&v, bytes_.data() + pos_, 8);
    pos_ += 8;
    return to_little(v);
}

double ByteReader::f64() {
    need(8, "f64");
    return std::bit_cast<double>(u64());
}

std::string_view ByteReader::raw(std::size_t n) {
    need(n, "bytes");
    const auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
}

// -- snapshots -------------------------------------------------------------------

std::string encode_snapshot(const lbm::FieldSnapshot& s, std::uint64_t hash) {
    const std::size_t n = std::size_t(s.nx) * s.ny;
    for (const auto* f : {&s.rho, &s.u, &s.v, &s.p}) {
        if (f->size() != n) throw ShapeError("snapshot field size does not match its grid");
    }
    ByteWriter w;
    w.raw("RFS1");
    w.u32(static_cast<std::uint32_t>(s.nx));
    w.u32(static_cast<std::uint32_t>(s.ny));
    w.u64(s.step);
    w.f64(lbm::cs2);
    for (const auto* f : {&s.rho, &s.u, &s.v, &s.p}) {
        for (double x : *f) w.f64(x);
    }
    w.u64(hash);
    return w.take();
}

StoredSnapshot decode_snapshot(std::string_view bytes) {
    ByteReader r(bytes, "RFS1 snapshot");
    if (bytes.size() < 4 || r.raw(4) != "RFS1") r.fail("magic mismatch (expected RFS1)");
    StoredSnapshot out;
    auto& s = out.snapshot;
    s.nx = static_cast<int>(r.u32());
    s.ny = static_cast<int>(r.u32());
    s.step = r.u64();
    const double cs2 = r.f64();
    if (cs2 != lbm::cs2) r.fail("unexpected c_s^2 " + format_real(cs2));
    const std::size_t n = std::size_t(s.nx) * s.ny;
    if (r.remaining() < 4 * n * 8) r.fail("truncated field payload for " + std::to_string(s.nx) + "x" + std::to_string(s.ny));
    for (auto* f : {&s.rho, &s.u, &s.v, &s.p}) {
        f->resize(n);
        for (auto& x : *f) x = r.f64();
    }
    if (r.remaining() == 0) r.fail("config hash missing");
    out.config_hash = r.u64();
    if (r.remaining() != 0) r.fail("trailing bytes after config hash");
    return out;
}

void write_snapshot(const fs::path& path, const lbm::FieldSnapshot& s, std::uint64_t hash) {
    write_file(path, encode_snapshot(s, hash));
}

StoredSnapshot read_snapshot(const fs::path& path) {
    try {
        return decode_snapshot(read_file(path));
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

StoredSnapshot read_snapshot(const fs::path& path, int nx, int ny) {
    auto s = read_snapshot(path);
    if (s.snapshot.nx != nx || s.snapshot.ny != ny) {
        throw ShapeError(path.string() + ": snapshot grid " + std::to_string(s.snapshot.nx) + "x" +
                         std::to_string(s.snapshot.ny) + " does not match expected " + std::to_string(nx) + "x" +
                         std::to_string(ny));
    }
    return s;
}

// -- checkpoints -----------------------------------------------------------------

ad::NetworkSpec Checkpoint::spec() const {
    if (params.layers.empty()) throw FormatError("checkpoint has no layers");
    ad::NetworkSpec s;
    s.input_width = static_cast<int>(params.layers.front().weight.cols());
    s.hidden_layers = static_cast<int>(params.layers.size()) - 1;
    s.hidden_width = s.hidden_layers > 0 ? static_cast<int>(params.layers.front().weight.rows()) : 0;
    s.output_width = static_cast<int>(params.layers.back().weight.rows());
    s.activation = activation;
    s.init_seed = seed;
    return s;
}

pinn::PinnModel Checkpoint::to_model() const {
    if (!model) throw FormatError("checkpoint carries no model metadata (RFN1 block)");
    pinn::PinnModel m;
    m.spec = spec();
    m.params = params;
    m.norm = model->norm;
    m.scales = model->scales;
    m.options = model->options;
    if (m.spec.input_width != m.options.input_width() || m.spec.output_width != m.options.output_width()) {
        throw FormatError("checkpoint layer shapes disagree with its model metadata");
    }
    return m;
}

Checkpoint Checkpoint::from_model(const pinn::PinnModel& model, std::uint64_t hash) {
    Checkpoint c;
    c.params = model.params;
    c.seed = model.spec.init_seed;
    c.activation = model.spec.activation;
    c.config_hash = hash;
    c.model = ModelMetadata{model.norm, model.scales, model.options};
    return c;
}

std::string encode_checkpoint(const Checkpoint& c) {
    ByteWriter w;
    w.raw("RFP1");
    w.u32(static_cast<std::uint32_t>(c.params.layers.size()));
    for (const auto& layer : c.params.layers) {
        w.u32(static_cast<std::uint32_t>(layer.weight.rows()));
        w.u32(static_cast<std::uint32_t>(layer.weight.cols()));
        for (Eigen::Index i = 0; i < layer.weight.rows(); ++i) {
            for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) w.f64(layer.weight(i, j));
        }
        for (Eigen::Index i = 0; i < layer.bias.size(); ++i) w.f64(layer.bias(i));
    }
    w.u64(c.seed);
    w.u32(static_cast<std::uint32_t>(c.activation));
    w.u64(c.config_hash);
    if (c.model) {
        const auto& m = *c.model;
        w.raw("RFN1");
        w.u32(static_cast<std::uint32_t>(m.norm.input_center.size()));
        for (double x : m.norm.input_center) w.f64(x);
        for (double x : m.norm.input_scale) w.f64(x);
        for (double x : m.norm.output_shift) w.f64(x);
        for (double x : m.norm.output_scale) w.f64(x);
        for (double x : {m.scales.height, m.scales.inlet_speed, m.scales.reference_density, m.scales.outlet_pressure,
                         m.scales.reynolds}) {
            w.f64(x);
        }
        w.u8(m.options.kinetic_head);
        w.u8(m.options.geometry_inputs);
        w.u8(m.options.reynolds_input);
        w.f64(m.options.geometry_amplitude);
        w.f64(m.options.geometry_dimension);
    }
    return w.take();
}

Checkpoint decode_checkpoint(std::string_view bytes) {
    ByteReader r(bytes, "RFP1 checkpoint");
    if (bytes.size() < 4 || r.raw(4) != "RFP1") r.fail("magic mismatch (expected RFP1)");
    Checkpoint c;
    const auto layers = r.u32();
    if (layers == 0 || layers > 4096) r.fail("implausible layer count " + std::to_string(layers));
    for (std::uint32_t l = 0; l < layers; ++l) {
        const auto rows = r.u32(), cols = r.u32();
        const std::size_t count = std::size_t(rows) * cols + rows;
        if (rows == 0 || cols == 0 || r.remaining() < count * 8) {
            r.fail("truncated or empty layer " + std::to_string(l) + " (" + std::to_string(rows) + "x" +
                   std::to_string(cols) + ")");
        }
        if (l > 0 && cols != c.params.layers.back().weight.rows()) r.fail("layer " + std::to_string(l) + " fan-in mismatch");
        ad::DenseLayer layer;
        layer.weight.resize(rows, cols);
        layer.bias.resize(rows);
        for (std::uint32_t i = 0; i < rows; ++i) {
            for (std::uint32_t j = 0; j < cols; ++j) layer.weight(i, j) = r.f64();
        }
        for (std::uint32_t i = 0; i < rows; ++i) layer.bias(i) = r.f64();
        c.params.layers.push_back(std::move(layer));
    }
    c.seed = r.u64();
    const auto tag = r.u32();
    if (tag > static_cast<std::uint32_t>(ad::Activation::gelu)) r.fail("unknown activation tag " + std::to_string(tag));
    c.activation = static_cast<ad::Activation>(tag);
    if (r.remaining() == 0) r.fail("config hash missing");
    c.config_hash = r.u64();
    if (r.remaining() == 0) return c;
    if (r.raw(4) != "RFN1") r.fail("unknown trailing block (expected RFN1)");
    ModelMetadata m;
    const auto width = r.u32();
    if (width > 64) r.fail("implausible input width " + std::to_string(width));
    m.norm.input_center.resize(width);
    m.norm.input_scale.resize(width);
    for (auto& x : m.norm.input_center) x = r.f64();
    for (auto& x : m.norm.input_scale) x = r.f64();
    for (auto& x : m.norm.output_shift) x = r.f64();
    for (auto& x : m.norm.output_scale) x = r.f64();
    m.scales.height = r.f64();
    m.scales.inlet_speed = r.f64();
    m.scales.reference_density = r.f64();
    m.scales.outlet_pressure = r.f64();
    m.scales.reynolds = r.f64();
    m.options.kinetic_head = r.u8() != 0;
    m.options.geometry_inputs = r.u8() != 0;
    m.options.reynolds_input = r.u8() != 0;
    m.options.geometry_amplitude = r.f64();
    m.options.geometry_dimension = r.f64();
    if (r.remaining() != 0) r.fail("trailing bytes after model block");
    c.model = m;
    return c;
}

void write_checkpoint(const fs::path& path, const Checkpoint& c) { write_file(path, encode_checkpoint(c)); }

Checkpoint read_checkpoint(const fs::path& path) {
    try {
        return decode_checkpoint(read_file(path));
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

// -- manifests -------------------------------------------------------------------

std::string encode_manifest(const Manifest& m) {
    std::string out;
    for (const auto& [k, v] : m.headers) {
        if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
            throw ParameterError("manifest header '" + k + "' is not representable");
        }
        out += "# " + k + " = " + v + "\n";
    }
    for (const auto& p : m.paths) {
        if (p.empty() || p.front() == '#' || p.find('\n') != std::string::npos) {
            throw ParameterError("manifest path '" + p + "' is not representable");
        }
        out += p + "\n";
    }
    return out;
}

Manifest decode_manifest(std::string_view text) {
    Manifest m;
    int line_no = 0;
    while (!text.empty()) {
        ++line_no;
        const auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (trim(line).empty()) continue;
        if (line.front() == '#') {
            const auto body = line.substr(1);
            const auto eq = body.find('=');
            if (eq == std::string_view::npos) continue;  // plain comment
            m.headers[std::string(trim(body.substr(0, eq)))] = std::string(trim(body.substr(eq + 1)));
            continue;
        }
        m.paths.emplace_back(line);
    }
    return m;
}

void write_manifest(const fs::path& path, const Manifest& m) { write_file(path, encode_manifest(m)); }

Manifest read_manifest(const fs::path& path) { return decode_manifest(read_file(path)); }

LoadedDataset load_manifest_snapshots(const fs::path& manifest_path) {
    const auto m = read_manifest(manifest_path);
    if (m.paths.empty()) throw FormatError(manifest_path.string() + ": manifest lists no snapshots");
    std::optional<std::uint64_t> expected;
    if (const auto it = m.headers.find("config_hash"); it != m.headers.end()) {
        expected = std::stoull(it->second, nullptr, 16);
    }
    LoadedDataset out;
    const auto base = manifest_path.parent_path();
    for (const auto& p : m.paths) {
        fs::path path(p);
        if (path.is_relative()) path = base / path;
        auto s = read_snapshot(path);
        if (!out.snapshots.empty()) {
            const auto& first = out.snapshots.front().snapshot;
            if (s.snapshot.nx != first.nx || s.snapshot.ny != first.ny) {
                throw ShapeError(path.string() + ": grid " + std::to_string(s.snapshot.nx) + "x" +
                                 std::to_string(s.snapshot.ny) + " differs from " + std::to_string(first.nx) + "x" +
                                 std::to_string(first.ny));
            }
        }
        if (!expected) {
            out.warnings.push_back(manifest_path.string() + ": no config_hash header to check " + p + " against");
        } else if (s.config_hash != *expected) {
            out.warnings.push_back(p + ": config hash " + hex_hash(s.config_hash) + " differs from manifest " +
                                   hex_hash(*expected));
        }
        out.snapshots.push_back(std::move(s));
    }
    return out;
}

// -- files -----------------------------------------------------------------------

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParameterError("cannot open '" + path.string() + "' for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& path, std::string_view bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ParameterError("cannot open '" + tmp.string() + "' for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw ParameterError("write to '" + tmp.string() + "' failed");
    }
    fs::rename(tmp, path);
}

}  // namespace roughflow::datastore
