/// @file roughflow.cpp
/// @brief Command-line driver: one subcommand per pipeline stage.
///
/// Exit status is 0 on success. Any failure prints exactly one line,
/// `error: <kind>: <message>`, to stderr and exits with status 1
/// (status 2 for usage errors).
#include "roughflow/error.hpp"
#include "roughflow/parallel.hpp"
#include "roughflow/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <string>

namespace {

using roughflow::pipeline::CommandOptions;

struct Subcommand {
    const char* name;
    bool (*run)(const CommandOptions&);
};

void add_common(CLI::App* cmd, CommandOptions& o, bool config_required) {
    auto* c = cmd->add_option("--config", o.config, "run configuration file");
    if (config_required) c->required();
    cmd->add_flag("--force", o.force, "redo the stage even when its manifest is up to date");
    cmd->add_option("--seed", o.seed, "override run.seed");
}

}  // namespace

int main(int argc, char** argv) {
    roughflow::configure_threads();
    CLI::App app{"roughflow: fractal-rough microchannel flow, lattice Boltzmann reference data and a "
                 "physics-informed surrogate"};
    app.require_subcommand(1);
    CommandOptions o;
    o.log = &std::cerr;

    auto* surface = app.add_subcommand("surface", "write the rasterized wall profile as x,y CSV");
    add_common(surface, o, true);
    surface->add_option("--out", o.out, "output CSV")->required();

    auto* simulate = app.add_subcommand("simulate", "run the lattice Boltzmann solver and write RFS1 snapshots");
    add_common(simulate, o, true);
    simulate->add_option("--out-dir", o.out, "output directory")->required();

    auto* sample = app.add_subcommand("sample", "write the collocation and boundary points as CSV");
    add_common(sample, o, true);
    sample->add_option("--out", o.out, "output CSV")->required();
    sample->add_option("--data", o.data, "dataset manifest (only for initial-condition points)");

    auto* train = app.add_subcommand("train", "train the surrogate on a dataset manifest");
    add_common(train, o, true);
    train->add_option("--data", o.data, "dataset manifest")->required();
    train->add_option("--out", o.out, "output RFP1 checkpoint")->required();

    auto* evaluate = app.add_subcommand("evaluate", "compare a snapshot or checkpoint against a reference snapshot");
    add_common(evaluate, o, false);
    evaluate->add_option("--pred", o.pred, "predicted RFS1 snapshot or RFP1 checkpoint")->required();
    evaluate->add_option("--ref", o.ref, "reference RFS1 snapshot")->required();
    evaluate->add_option("--report,--out", o.out, "output report CSV")->required();
    evaluate->add_option("--vorticity", o.vorticity, "model vorticity: auto|autodiff|fd")->capture_default_str();

    auto* sweep = app.add_subcommand("sweep", "run the pipeline once per value of sweep.axis");
    add_common(sweep, o, true);
    sweep->add_option("--out-dir", o.out, "output directory")->required();
    sweep->add_option("--parallel", o.parallel, "concurrent legs (capped by ROUGHFLOW_THREADS)")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();

    const Subcommand commands[] = {
        {"surface", roughflow::pipeline::cmd_surface},   {"simulate", roughflow::pipeline::cmd_simulate},
        {"sample", roughflow::pipeline::cmd_sample},     {"train", roughflow::pipeline::cmd_train},
        {"evaluate", roughflow::pipeline::cmd_evaluate}, {"sweep", roughflow::pipeline::cmd_sweep},
    };

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::string msg = e.what();
        for (auto& ch : msg) {
            if (ch == '\n') ch = ' ';
        }
        std::cerr << "error: usage: " << msg << '\n';
        return 2;
    }

    try {
        for (const auto& c : commands) {
            if (app.got_subcommand(c.name)) c.run(o);
        }
    } catch (const roughflow::Error& e) {
        std::cerr << "error: " << e.kind() << ": " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
