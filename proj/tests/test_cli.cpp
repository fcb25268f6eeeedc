#include "roughflow/datastore.hpp"
#include "roughflow/pipeline.hpp"

#include <doctest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>
#include <unistd.h>

namespace fs = std::filesystem;
using namespace roughflow;

namespace {

const char* kTinyConfig = R"(surface.amplitude = 1
surface.height = 2
lattice.nx = 40
lattice.ny = 16
lattice.H = 14
flow.U_i = 0.05
flow.Re = 5
flow.steps = 2000
flow.snapshot_interval = 250
flow.ramp_steps = 200
dataset.first_step = 1000
dataset.holdout_step = 1500
dataset.max_points = 300
network.hidden_layers = 2
network.hidden_width = 16
training.adam_epochs = 60
training.lbfgs_iterations = 10
training.batch_collocation = 128
sampling.total = 256
sampling.wall = 64
sampling.inlet = 16
sampling.outlet = 16
run.seed = 3
)";

struct Result {
    int code = -1;
    std::string output;
};

/// Runs the CLI with stderr folded into the captured output.
Result run(const std::string& args) {
    const std::string cmd = std::string(ROUGHFLOW_CLI) + " " + args + " 2>&1";
    Result r;
    FILE* pipe = ::popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    std::array<char, 4096> buf{};
    while (std::fgets(buf.data(), buf.size(), pipe)) r.output += buf.data();
    const int status = ::pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

struct Workspace {
    fs::path dir;
    explicit Workspace(const std::string& tag, const std::string& extra = "") {
        dir = fs::temp_directory_path() / ("roughflow_cli_" + tag + "_" + std::to_string(::getpid()));
        fs::remove_all(dir);
        fs::create_directories(dir);
        std::ofstream(dir / "run.cfg") << kTinyConfig << extra;
    }
    ~Workspace() { fs::remove_all(dir); }
    std::string cfg() const { return "--config " + (dir / "run.cfg").string(); }
    std::string path(const std::string& rel) const { return (dir / rel).string(); }
};

std::vector<std::string> lines(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

}  // namespace

TEST_CASE("surface writes full-precision CSV") {
    Workspace w("surface");
    const auto r = run("surface " + w.cfg() + " --out " + w.path("wall.csv"));
    REQUIRE(r.code == 0);
    const auto rows = lines(datastore::read_file(w.path("wall.csv")));
    CHECK(rows.front() == "x,y");
    CHECK(rows.size() == 41);
    CHECK(fs::exists(w.path("wall_top.csv")));
    CHECK(datastore::read_file(w.path("wall.csv")).find('\r') == std::string::npos);
}

TEST_CASE("simulate is deterministic, idempotent and honours --force") {
    Workspace w("simulate");
    REQUIRE(run("simulate " + w.cfg() + " --out-dir " + w.path("a")).code == 0);
    REQUIRE(run("simulate " + w.cfg() + " --out-dir " + w.path("b")).code == 0);
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(w.path("a"))) names.push_back(e.path().filename().string());
    CHECK(names.size() >= 9);
    for (const auto& n : names) {
        if (n.ends_with(".rfs")) {
            CHECK(datastore::fnv1a64(datastore::read_file(w.path("a/" + n))) ==
                  datastore::fnv1a64(datastore::read_file(w.path("b/" + n))));
        }
    }
    const auto snap = w.path("a/snap_0000002000.rfs");
    const auto before = fs::last_write_time(snap);
    const auto again = run("simulate " + w.cfg() + " --out-dir " + w.path("a"));
    CHECK(again.code == 0);
    CHECK(again.output.find("up to date") != std::string::npos);
    CHECK(fs::last_write_time(snap) == before);
    const auto forced = run("simulate " + w.cfg() + " --out-dir " + w.path("a") + " --force");
    CHECK(forced.code == 0);
    CHECK(forced.output.find("up to date") == std::string::npos);

    // A different seed is a different config, so the stage reruns.
    const auto reseeded = run("simulate " + w.cfg() + " --out-dir " + w.path("a") + " --seed 11");
    CHECK(reseeded.output.find("up to date") == std::string::npos);
}

TEST_CASE("train, evaluate and sample through the CLI") {
    Workspace w("train");
    REQUIRE(run("simulate " + w.cfg() + " --out-dir " + w.path("data")).code == 0);
    const auto manifest = w.path("data/dataset.manifest");
    const auto t = run("train " + w.cfg() + " --data " + manifest + " --out " + w.path("model.rfp"));
    REQUIRE(t.code == 0);
    CHECK(fs::exists(w.path("model.loss.csv")));
    const auto e = run("evaluate " + w.cfg() + " --pred " + w.path("model.rfp") + " --ref " +
                       w.path("data/snap_0000001500.rfs") + " --report " + w.path("report.csv"));
    REQUIRE(e.code == 0);
    const auto report = datastore::read_file(w.path("report.csv"));
    CHECK(report.rfind("field,metric,value\n", 0) == 0);
    CHECK(report.find("omega,method,autodiff") != std::string::npos);

    const auto s = run("sample " + w.cfg() + " --out " + w.path("points.csv"));
    REQUIRE(s.code == 0);
    const auto rows = lines(datastore::read_file(w.path("points.csv")));
    CHECK(rows.front() == "x,y,t,kind");
    CHECK(rows.size() == 1 + 256 + 64 + 16 + 16);

    // Snapshot-vs-snapshot comparison of a field with itself.
    const auto self = run("evaluate --pred " + w.path("data/snap_0000001500.rfs") + " --ref " +
                          w.path("data/snap_0000001500.rfs") + " --report " + w.path("self.csv"));
    REQUIRE(self.code == 0);
    CHECK(datastore::read_file(w.path("self.csv")).find("u,rel_l2,0\n") != std::string::npos);
}

TEST_CASE("evaluate rejects mismatched grids naming both shapes") {
    Workspace w("mismatch");
    REQUIRE(run("simulate " + w.cfg() + " --out-dir " + w.path("a")).code == 0);
    std::string other = kTinyConfig;
    other.replace(other.find("lattice.nx = 40"), 15, "lattice.nx = 44");
    std::ofstream(w.path("other.cfg")) << other;
    REQUIRE(run("simulate --config " + w.path("other.cfg") + " --out-dir " + w.path("b")).code == 0);
    const auto r = run("evaluate --pred " + w.path("b/snap_0000002000.rfs") + " --ref " +
                       w.path("a/snap_0000002000.rfs") + " --report " + w.path("r.csv"));
    CHECK(r.code != 0);
    CHECK(r.output.rfind("error: ", 0) == 0);
    CHECK(r.output.find("44x16") != std::string::npos);
    CHECK(r.output.find("40x16") != std::string::npos);
    CHECK(std::count(r.output.begin(), r.output.end(), '\n') == 1);
}

TEST_CASE("usage and configuration errors exit non-zero with one line") {
    Workspace w("errors");
    const auto missing = run("simulate --config " + w.path("nope.cfg") + " --out-dir " + w.path("x"));
    CHECK(missing.code != 0);
    CHECK(missing.output.rfind("error: ", 0) == 0);
    std::ofstream(w.path("bad.cfg")) << kTinyConfig << "flow.mystery = 1\n";
    const auto bad = run("simulate --config " + w.path("bad.cfg") + " --out-dir " + w.path("x"));
    CHECK(bad.code != 0);
    CHECK(bad.output.find("flow.mystery") != std::string::npos);
    CHECK(run("frobnicate").code != 0);
}

TEST_CASE("a single-value sweep reproduces the evaluate report with an axis column") {
    Workspace w("sweep", "sweep.axis = Re\nsweep.values = 5\n");
    const auto r = run("sweep " + w.cfg() + " --out-dir " + w.path("sweep"));
    REQUIRE(r.code == 0);
    const auto sweep_rows = lines(datastore::read_file(w.path("sweep/sweep.csv")));
    CHECK(sweep_rows.front() == "Re,field,metric,value");

    // The leg's model and held-out snapshot, evaluated on their own.
    const auto e = run("evaluate " + w.cfg() + " --pred " + w.path("sweep/leg_0/model.rfp") + " --ref " +
                       w.path("sweep/leg_0/data/snap_0000001500.rfs") + " --vorticity fd --report " +
                       w.path("eval.csv"));
    REQUIRE(e.code == 0);
    const auto eval_rows = lines(datastore::read_file(w.path("eval.csv")));
    REQUIRE(eval_rows.size() > 20);
    std::size_t cursor = 1;
    for (std::size_t k = 1; k < eval_rows.size(); ++k) {
        CAPTURE(eval_rows[k]);
        REQUIRE(cursor < sweep_rows.size());
        CHECK(sweep_rows[cursor] == "5," + eval_rows[k]);
        ++cursor;
    }
    // Anything after the evaluate rows is sweep-specific diagnostics.
    for (; cursor < sweep_rows.size(); ++cursor) {
        const auto& row = sweep_rows[cursor];
        CHECK((row.starts_with("5,loss,") || row.starts_with("5,omega,max_abs_ref") || row.starts_with("5,pde,") ||
               row.starts_with("5,continuity,probe") || row.starts_with("5,lbfgs,")));
    }

    const auto again = run("sweep " + w.cfg() + " --out-dir " + w.path("sweep"));
    CHECK(again.output.find("up to date") != std::string::npos);
    CHECK_FALSE(fs::exists(w.path("sweep/.sweep.lock")));
}
