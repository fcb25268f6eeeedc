#include "support.hpp"

#include "roughflow/datastore.hpp"
#include "roughflow/error.hpp"

#include <doctest.h>

#include <charconv>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <unistd.h>

using namespace roughflow;
using namespace roughflow::datastore;
namespace fs = std::filesystem;

namespace {

const std::string kMinimal = "lattice.nx = 40\nlattice.ny = 12\nlattice.H = 10\nflow.U_i = 0.05\nflow.Re = 10\n";

/// Fresh scratch directory, removed on destruction.
struct ScratchDir {
    fs::path path;
    explicit ScratchDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("roughflow_test_" + tag + "_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~ScratchDir() { fs::remove_all(path); }
};

std::string real_text(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

lbm::FieldSnapshot sample_snapshot(int nx, int ny, std::uint64_t seed) {
    Rng rng(seed);
    lbm::FieldSnapshot s;
    s.nx = nx;
    s.ny = ny;
    s.step = 123456789012ULL;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (int k = 0; k < nx * ny; ++k) {
        const bool solid = rng.below(5) == 0;
        s.rho.push_back(solid ? nan : 1.0 + rng.uniform(-1e-3, 1e-3));
        s.u.push_back(solid ? nan : rng.uniform(-0.1, 0.1));
        s.v.push_back(solid ? nan : -0.0);
        s.p.push_back(solid ? nan : std::nextafter(lbm::cs2, 1.0));
    }
    return s;
}

bool bit_equal(const std::vector<double>& a, const std::vector<double>& b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("viscosity and velocity imply the echoed Reynolds number") {
    const auto c = parse_config("lattice.nx = 60\nlattice.ny = 52\nlattice.H = 50\nflow.nu = 0.1\nflow.U_i = 0.05\n");
    CHECK(c.flow_params().reynolds == doctest::Approx(25.0).epsilon(1e-14));
    const auto text = serialize_config(c);
    CHECK(text.find("# derived: Re = 25") != std::string::npos);
    CHECK(text.find("tau = 0.8") != std::string::npos);
}

TEST_CASE("viscosity and Reynolds number must agree when both are given") {
    const std::string base = "lattice.nx = 60\nlattice.ny = 52\nlattice.H = 50\nflow.U_i = 0.05\nflow.nu = 0.1\n";
    CHECK_NOTHROW(parse_config(base + "flow.Re = 25\n"));
    try {
        parse_config(base + "flow.Re = 30\n");
        FAIL("expected a config error");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("line 6") != std::string::npos);
        CHECK(msg.find("flow.Re") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_config("lattice.nx = 60\nlattice.ny = 52\nlattice.H = 50\nflow.U_i = 0.05\n"), ConfigError);
}

TEST_CASE("parse errors name the line and key") {
    auto message = [](const std::string& text) {
        try {
            parse_config(text);
        } catch (const ConfigError& e) {
            return std::string(e.what());
        }
        return std::string("no error");
    };
    CHECK(message(kMinimal + "flow.colour = blue\n").find("line 6: key 'flow.colour'") != std::string::npos);
    CHECK(message(kMinimal + "lattice.nx = 50\n").find("line 6") != std::string::npos);
    CHECK(message(kMinimal + "surface.dimension = 2.5\n").find("surface.dimension") != std::string::npos);
    CHECK(message(kMinimal + "network.kinetic_head = yes\n").find("network.kinetic_head") != std::string::npos);
    CHECK(message(kMinimal + "lattice.ny\n").find("line 6") != std::string::npos);
    CHECK(message("flow.U_i = 0.05\nflow.Re = 10\n").find("lattice") != std::string::npos);
    CHECK(message("lattice.nx = 40\nlattice.ny = 12\nlattice.H = 10\n").find("flow") != std::string::npos);
    CHECK(message(kMinimal + "lattice.H = 20\n").find("no error") == std::string::npos);
    CHECK(message(kMinimal + "flow.U_i = 0.2\n").find("no error") == std::string::npos);
    CHECK(message(kMinimal + "training.lbfgs_c2 = 1e-5\n").find("training.lbfgs_c2") != std::string::npos);
}

TEST_CASE("comments, blank lines and defaults") {
    const auto c = parse_config("# channel\n\n" + kMinimal + "  run.seed = 42   # trailing comment\n");
    CHECK(c.seed == 42);
    CHECK(c.training.seed == 42);
    CHECK(c.network.hidden_layers == 8);
    CHECK(c.training.weights.bc == 1.2);
    CHECK(c.sampling.band_fraction == 0.4);
}

TEST_CASE("serialized configs reparse to an identical config over fuzzed inputs") {
    Rng rng(2718);
    auto pick = [&](std::initializer_list<const char*> xs) { return std::string(*(xs.begin() + rng.below(xs.size()))); };
    auto real = [&](double lo, double hi) { return real_text(rng.uniform(lo, hi)); };
    auto integer = [&](std::uint64_t lo, std::uint64_t hi) { return std::to_string(lo + rng.below(hi - lo + 1)); };
    for (int trial = 0; trial < 300; ++trial) {
        const int ny = 10 + static_cast<int>(rng.below(90));
        const std::uint64_t steps = 1 + rng.below(100000);
        const int n_min = static_cast<int>(rng.below(4));
        std::vector<std::pair<std::string, std::string>> kv{
            {"surface.amplitude", real(0, 5)},
            {"surface.gamma", real(1.01, 3)},
            {"surface.dimension", real(1.01, 1.99)},
            {"surface.n_min", std::to_string(n_min)},
            {"surface.n_max", std::to_string(n_min + static_cast<int>(rng.below(8)))},
            {"surface.phase_seed", std::to_string(rng.bits())},
            {"surface.height", real(0, 10)},
            {"surface.walls", pick({"both", "bottom", "top", "none"})},
            {"lattice.nx", integer(20, 400)},
            {"lattice.ny", std::to_string(ny)},
            {"lattice.H", real(3, ny)},
            {"lattice.streamwise", pick({"inlet_outlet", "periodic"})},
            {"flow.U_i", real(0.001, 0.09)},
            {rng.below(2) ? "flow.Re" : "flow.nu", rng.below(2) ? real(1, 100) : real(0.01, 0.5)},
            {"flow.p0", real(0.2, 0.5)},
            {"flow.steps", std::to_string(steps)},
            {"flow.snapshot_interval", std::to_string(1 + rng.below(steps))},
            {"flow.ramp_steps", integer(0, 5000)},
            {"dataset.first_step", integer(0, 20000)},
            {"dataset.holdout_step", integer(0, 20000)},
            {"dataset.max_points", integer(1, 5000)},
            {"network.hidden_layers", integer(1, 10)},
            {"network.hidden_width", integer(1, 256)},
            {"network.activation", pick({"tanh", "relu", "elu", "gelu"})},
            {"network.kinetic_head", pick({"true", "false"})},
            {"network.geometry_inputs", pick({"true", "false"})},
            {"network.reynolds_input", pick({"true", "false"})},
            {"training.adam_epochs", integer(0, 10000)},
            {"training.learning_rate", real(1e-5, 1e-1)},
            {"training.decay_rate", real(0.5, 1.0)},
            {"training.decay_interval", integer(1, 1000)},
            {"training.batch_data", integer(1, 4096)},
            {"training.batch_collocation", integer(1, 4096)},
            {"training.batch_boundary", integer(1, 1024)},
            {"training.lbfgs_iterations", integer(0, 5000)},
            {"training.lbfgs_history", integer(1, 50)},
            {"training.lbfgs_c1", real(1e-6, 1e-3)},
            {"training.lbfgs_c2", real(0.5, 0.99)},
            {"training.gradient_floor", real(1e-14, 1e-6)},
            {"training.w_data", real(0.1, 3)},
            {"training.w_physics", real(0, 3)},
            {"training.w_cont", real(0, 3)},
            {"training.w_bc", real(0, 3)},
            {"training.w_moment", real(0, 3)},
            {"sampling.strategy", pick({"uniform", "near_wall_enriched", "enriched"})},
            {"sampling.total", integer(1, 10000)},
            {"sampling.band_fraction", real(0, 1)},
            {"sampling.wall", integer(0, 500)},
            {"sampling.inlet", integer(0, 100)},
            {"sampling.outlet", integer(0, 100)},
            {"sampling.initial", integer(0, 100)},
            {"run.seed", std::to_string(rng.bits())},
        };
        if (rng.below(3) == 0) {
            kv.push_back({"sweep.axis", pick({"Re", "amplitude", "collocation_count", "learning_rate"})});
            kv.push_back({"sweep.values", real(1, 20) + ", " + real(1, 20)});
        }
        // Sections and keys may appear in any order.
        for (std::size_t k = kv.size(); k > 1; --k) std::swap(kv[k - 1], kv[rng.below(k)]);
        std::string text;
        for (const auto& [k, v] : kv) text += k + " = " + v + "\n";
        CAPTURE(text);
        const auto parsed = parse_config(text);
        const auto canonical = serialize_config(parsed);
        const auto reparsed = parse_config(canonical);
        CHECK(serialize_config(reparsed) == canonical);
        CHECK(config_hash(reparsed) == config_hash(parsed));
        // Reals survive the trip bit for bit.
        CHECK(reparsed.flow.inlet_speed == parsed.flow.inlet_speed);
        CHECK(reparsed.lattice.H == parsed.lattice.H);
        CHECK(reparsed.training.adam.learning_rate == parsed.training.adam.learning_rate);
        CHECK(reparsed.surface.spec.phase_seed == parsed.surface.spec.phase_seed);
        CHECK(reparsed.seed == parsed.seed);
    }
}

TEST_CASE("config hash is FNV-1a over the canonical text") {
    CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
    CHECK(fnv1a64("foobar") == 0x85944171f73967e8ULL);
    const auto c = parse_config(kMinimal);
    CHECK(config_hash(c) == fnv1a64(serialize_config(c)));
    CHECK(hex_hash(0xabcULL) == "0000000000000abc");
    auto d = c;
    d.set_seed(9);
    CHECK(config_hash(d) != config_hash(c));
}

TEST_CASE("snapshot round trip is bit-exact including NaN sentinels") {
    const auto s = sample_snapshot(7, 5, 3);
    const auto bytes = encode_snapshot(s, 0x1122334455667788ULL);
    CHECK(bytes.substr(0, 4) == "RFS1");
    CHECK(bytes.size() == 4 + 4 + 4 + 8 + 8 + 4 * 35 * 8 + 8);
    // Little-endian u32 nx right after the magic.
    CHECK(static_cast<unsigned char>(bytes[4]) == 7);
    CHECK(bytes[5] == 0);
    const auto back = decode_snapshot(bytes);
    CHECK(back.config_hash == 0x1122334455667788ULL);
    CHECK(back.snapshot.step == s.step);
    CHECK(back.snapshot.nx == 7);
    CHECK(back.snapshot.ny == 5);
    CHECK(bit_equal(back.snapshot.rho, s.rho));
    CHECK(bit_equal(back.snapshot.u, s.u));
    CHECK(bit_equal(back.snapshot.v, s.v));
    CHECK(bit_equal(back.snapshot.p, s.p));

    ScratchDir dir("snap");
    write_snapshot(dir.path / "a.rfs", s, 42);
    CHECK(read_file(dir.path / "a.rfs") == encode_snapshot(s, 42));
    CHECK(bit_equal(read_snapshot(dir.path / "a.rfs").snapshot.u, s.u));
    try {
        read_snapshot(dir.path / "a.rfs", 8, 5);
        FAIL("expected a shape error");
    } catch (const ShapeError& e) {
        CHECK(std::string(e.what()).find("7x5") != std::string::npos);
        CHECK(std::string(e.what()).find("8x5") != std::string::npos);
    }
}

TEST_CASE("damaged snapshots are format errors with a byte offset") {
    const auto bytes = encode_snapshot(sample_snapshot(4, 4, 1), 7);
    auto expect_offset = [](const std::string& b, const std::string& fragment) {
        try {
            decode_snapshot(b);
            FAIL("expected a format error");
        } catch (const FormatError& e) {
            const std::string msg = e.what();
            CHECK(msg.find("offset") != std::string::npos);
            CHECK(msg.find(fragment) != std::string::npos);
        }
    };
    expect_offset(bytes.substr(0, bytes.size() - 1), "");
    expect_offset(bytes.substr(0, bytes.size() - 8), "config hash missing");
    expect_offset(bytes.substr(0, 100), "truncated");
    expect_offset("RFS2" + bytes.substr(4), "magic");
    expect_offset(bytes + "x", "trailing");
    for (std::size_t cut = 0; cut < bytes.size(); cut += 37) {
        CHECK_THROWS_AS(decode_snapshot(bytes.substr(0, cut)), FormatError);
    }
}

TEST_CASE("checkpoint round trip") {
    auto model = testing::small_model(17, true);
    model.options.geometry_inputs = true;
    model.options.geometry_amplitude = 5.0;
    model.options.geometry_dimension = 1.5;
    model.spec.input_width = model.options.input_width();
    model.params = testing::random_parameters(model.spec, 4);
    model.norm.input_center = {1.0, 0.5, 100.0, 5.0, 1.5};
    model.norm.input_scale = {0.9, 1.7, 0.02, 1.0, 1.0};
    const auto ck = Checkpoint::from_model(model, 0xfeedULL);
    const auto bytes = encode_checkpoint(ck);
    CHECK(bytes.substr(0, 4) == "RFP1");
    const auto back = decode_checkpoint(bytes);
    CHECK(back.config_hash == 0xfeedULL);
    CHECK(back.params == model.params);
    const auto m2 = back.to_model();
    CHECK(m2.norm.input_center == model.norm.input_center);
    CHECK(m2.norm.output_scale == model.norm.output_scale);
    CHECK(m2.scales.reynolds == model.scales.reynolds);
    CHECK(m2.options.kinetic_head);
    CHECK(m2.options.geometry_amplitude == 5.0);
    CHECK(encode_checkpoint(back) == bytes);

    Checkpoint bare;
    bare.params = model.params;
    bare.activation = ad::Activation::gelu;
    bare.seed = 99;
    const auto bare_back = decode_checkpoint(encode_checkpoint(bare));
    CHECK_FALSE(bare_back.model.has_value());
    CHECK(bare_back.activation == ad::Activation::gelu);
    CHECK(bare_back.seed == 99);
    CHECK_THROWS_AS(bare_back.to_model(), FormatError);

    CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 1)), FormatError);
    Checkpoint no_block = ck;
    no_block.model.reset();
    const auto plain = encode_checkpoint(no_block);
    CHECK_THROWS_AS(decode_checkpoint(plain.substr(0, plain.size() - 8)), FormatError);
}

TEST_CASE("manifests round trip and surface hash mismatches as warnings") {
    ScratchDir dir("manifest");
    const auto a = sample_snapshot(5, 4, 1), b = sample_snapshot(5, 4, 2);
    write_snapshot(dir.path / "a.rfs", a, 0x10);
    write_snapshot(dir.path / "b.rfs", b, 0x20);
    Manifest m;
    m.headers["config_hash"] = hex_hash(0x10);
    m.headers["stage"] = "simulate";
    m.paths = {"a.rfs", "b.rfs"};
    write_manifest(dir.path / "data.manifest", m);
    const auto back = read_manifest(dir.path / "data.manifest");
    CHECK(back.headers == m.headers);
    CHECK(back.paths == m.paths);
    CHECK(decode_manifest(encode_manifest(m)).paths == m.paths);
    CHECK(encode_manifest(m).find("# config_hash = 0000000000000010\n") != std::string::npos);

    const auto loaded = load_manifest_snapshots(dir.path / "data.manifest");
    CHECK(loaded.snapshots.size() == 2);
    REQUIRE(loaded.warnings.size() == 1);
    CHECK(loaded.warnings[0].find("b.rfs") != std::string::npos);

    write_snapshot(dir.path / "c.rfs", sample_snapshot(6, 4, 3), 0x10);
    m.paths = {"a.rfs", "c.rfs"};
    write_manifest(dir.path / "bad.manifest", m);
    CHECK_THROWS_AS(load_manifest_snapshots(dir.path / "bad.manifest"), ShapeError);
}

TEST_CASE("byte reader reports offsets") {
    ByteWriter w;
    w.u32(0x01020304);
    w.f64(-0.0);
    const auto bytes = w.take();
    CHECK(bytes.substr(0, 4) == std::string("\x04\x03\x02\x01", 4));
    ByteReader r(bytes, "probe");
    CHECK(r.u32() == 0x01020304);
    CHECK(std::signbit(r.f64()));
    try {
        r.u8();
        FAIL("expected a format error");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("offset 12") != std::string::npos);
    }
}
