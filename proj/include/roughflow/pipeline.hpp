/// @file pipeline.hpp
/// @brief End-to-end stages shared by the CLI and the acceptance suite:
/// geometry, simulation, dataset split, training, evaluation and sweeps.
#pragma once

#include "roughflow/datastore.hpp"
#include "roughflow/metrics.hpp"
#include "roughflow/pinn.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace roughflow::pipeline {

namespace fs = std::filesystem;
using datastore::RunConfig;

struct Geometry {
    surface::WallProfile bottom;
    surface::WallProfile top;
    surface::SolidMask mask;
};

/// Rough walls per the surface section. The top wall draws its phases from a
/// stream derived from the bottom wall's phase seed.
Geometry build_geometry(const RunConfig& config);
lbm::LatticeSpec lattice_spec(const RunConfig& config, const Geometry& geometry);

/// Runs the configured schedule from rest and returns every emitted snapshot.
std::vector<lbm::FieldSnapshot> simulate(const RunConfig& config, const Geometry& geometry);

struct SnapshotSplit {
    std::vector<lbm::FieldSnapshot> train;
    std::optional<lbm::FieldSnapshot> holdout;
};

/// Training snapshots have step >= first_step and differ from holdout_step.
SnapshotSplit split_snapshots(const RunConfig& config, std::span<const lbm::FieldSnapshot> snapshots);

pinn::Scales scales_for(const RunConfig& config);
/// Spatial extent of the lattice and the training time window.
pinn::Domain domain_for(const RunConfig& config);
pinn::ModelOptions model_options_for(const RunConfig& config);

pinn::CollocationSet collocation_for(const RunConfig& config, const surface::SolidMask& mask,
                                     const lbm::FieldSnapshot* initial_state = nullptr);

/// Fresh uniform probe points (no boundary points); `band_only` restricts
/// them to the near-wall bands.
std::vector<pinn::Point> probe_points(const RunConfig& config, const surface::SolidMask& mask, std::size_t count,
                                      std::uint64_t seed, bool band_only = false);

struct ResidualSummary {
    double mean_norm = 0.0;           ///< mean of |(R_cont, R_x, R_y)|, nondimensional
    double mean_abs_continuity = 0.0; ///< mean |du/dx + dv/dy|, lattice units
};

ResidualSummary residual_summary(const pinn::PinnModel& model, std::span<const pinn::Point> points);

/// Builds the dataset, normalization, model and collocation set, then trains.
pinn::TrainResult train_model(const RunConfig& config, const surface::SolidMask& mask,
                              std::span<const lbm::FieldSnapshot> train_snapshots,
                              const pinn::ProgressCallback& progress = {});

enum class VorticityMethod { autodiff, finite_difference };

/// Compares a trained model against a reference snapshot on its own grid.
metrics::MetricsReport evaluate_model(const pinn::PinnModel& model, const lbm::FieldSnapshot& ref,
                                      VorticityMethod method = VorticityMethod::autodiff);

/// Fraction of the lattice width excluded at each streamwise end when taking max |omega|.
inline constexpr double kVorticityMargin = 0.1;
double converged_max_vorticity(const lbm::FieldSnapshot& s);

// -- sweeps ----------------------------------------------------------------------

/// Applies one sweep value to a copy of the base config.
RunConfig apply_sweep_value(const RunConfig& base, datastore::SweepAxis axis, const std::string& value);

struct LegOutcome {
    std::string value;
    std::optional<std::string> error;
    pinn::LossBreakdown final_loss;
    metrics::MetricsReport report;
    double omega_max_ref = 0.0;
    ResidualSummary probe;
    ResidualSummary band_probe;
    int lbfgs_fallbacks = 0;
};

/// Simulate, train and evaluate against the held-out snapshot. Artifacts go
/// under `dir` when it is non-empty. Errors are captured in the outcome.
LegOutcome run_leg(const RunConfig& config, const std::string& value, const fs::path& dir, std::ostream* log);

struct LineFit {
    double slope = 0.0;
    double intercept = 0.0;
};

/// Ordinary least squares; ParameterError for fewer than two distinct x.
LineFit fit_line(std::span<const double> x, std::span<const double> y);

/// Long-format report: `<axis>,field,metric,value`.
void write_sweep_report(std::ostream& out, datastore::SweepAxis axis, std::span<const LegOutcome> legs);

// -- commands --------------------------------------------------------------------

struct CommandOptions {
    fs::path config;
    fs::path out;
    bool force = false;
    std::optional<std::uint64_t> seed;
    fs::path data;   ///< train: dataset manifest; sample: optional initial-state source
    fs::path pred;   ///< evaluate: snapshot or checkpoint
    fs::path ref;    ///< evaluate: reference snapshot
    std::string vorticity = "auto";  ///< evaluate: auto | autodiff | fd
    int parallel = 1;                ///< sweep: concurrent legs
    std::ostream* log = nullptr;
};

/// Each returns true when work was done and false when the stage was already
/// up to date with the same config and inputs.
bool cmd_surface(const CommandOptions& options);
bool cmd_simulate(const CommandOptions& options);
bool cmd_sample(const CommandOptions& options);
bool cmd_train(const CommandOptions& options);
bool cmd_evaluate(const CommandOptions& options);
bool cmd_sweep(const CommandOptions& options);

}  // namespace roughflow::pipeline
