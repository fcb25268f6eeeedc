/// @file pinn.hpp
/// @brief Physics-informed surrogate: model, composite loss, collocation
/// sampling and the Adam -> L-BFGS training loop.
///
/// Coordinates and labels enter in lattice units and are converted to the
/// non-dimensional frame (x/H, y/H, t U/H, u/U, (p - p0)/(rho0 U^2), rho/rho0)
/// where the momentum and continuity residuals are evaluated. The network sees
/// those inputs affinely mapped onto [-1, 1]; its raw outputs are mapped back
/// through a per-channel shift/scale.
#pragma once

#include "roughflow/autodiff.hpp"
#include "roughflow/lbm.hpp"
#include "roughflow/surface.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace roughflow::pinn {

/// Macroscopic head channel order.
enum Channel : int { kU = 0, kV = 1, kP = 2, kRho = 3 };
inline constexpr int kMacroOutputs = 4;
inline constexpr int kKineticOutputs = lbm::Q;
inline constexpr double kDensityFloor = 1e-6;

/// A spatiotemporal location in lattice units.
struct Point {
    double x = 0.0;
    double y = 0.0;
    double t = 0.0;
};

/// Characteristic scales of the non-dimensional frame.
struct Scales {
    double height = 1.0;       ///< H (lattice units)
    double inlet_speed = 0.05; ///< U_i
    double reference_density = 1.0;
    double outlet_pressure = lbm::cs2;
    double reynolds = 10.0;

    double time_scale() const { return height / inlet_speed; }
    double pressure_scale() const { return reference_density * inlet_speed * inlet_speed; }
};

struct ModelOptions {
    bool kinetic_head = false;
    bool geometry_inputs = false;  ///< append (A_s, D) input channels
    bool reynolds_input = false;   ///< append an Re input channel
    double geometry_amplitude = 0.0;
    double geometry_dimension = 0.0;

    int input_width() const { return 3 + (geometry_inputs ? 2 : 0) + (reynolds_input ? 1 : 0); }
    int output_width() const { return kMacroOutputs + (kinetic_head ? kKineticOutputs : 0); }
};

struct Normalization {
    /// Network input = (nondimensional input - center) * scale, per input channel.
    std::vector<double> input_center, input_scale;
    /// Nondimensional field = shift + scale * raw output, per macroscopic channel.
    std::array<double, kMacroOutputs> output_shift{0, 0, 0, 0};
    std::array<double, kMacroOutputs> output_scale{1, 1, 1, 1};
};

struct PinnModel {
    ad::NetworkSpec spec;
    ad::ParameterSet params;
    Normalization norm;
    Scales scales;
    ModelOptions options;

    /// Network inputs (input_width x N) for lattice-unit points.
    Eigen::MatrixXd network_inputs(std::span<const Point> points) const;
};

struct NetworkSettings {
    int hidden_layers = 8;
    int hidden_width = 128;
    ad::Activation activation = ad::Activation::tanh;
    std::uint64_t init_seed = 0;
};

/// Time window and spatial extent the model is trained over, lattice units.
struct Domain {
    int nx = 0;
    int ny = 0;
    double t_begin = 0.0;
    double t_end = 0.0;
};

/// One LBM-labelled sample, lattice units.
struct Sample {
    Point point;
    double rho = 1.0, u = 0.0, v = 0.0, p = lbm::cs2;
};

struct LabeledDataset {
    std::vector<Sample> samples;
    std::string manifest;  ///< provenance: manifest path the snapshots came from
};

/// Draws up to max_points fluid-node samples, split evenly across snapshots,
/// without replacement within a snapshot.
LabeledDataset build_dataset(std::span<const lbm::FieldSnapshot> snapshots, std::size_t max_points,
                             std::uint64_t seed);

/// Input normalization maps the domain onto [-1, 1]; output normalization
/// uses the mean and standard deviation of the dataset labels.
Normalization fit_normalization(const LabeledDataset& data, const Domain& domain, const Scales& scales,
                                const ModelOptions& options);

PinnModel make_model(const NetworkSettings& net, const Scales& scales, const ModelOptions& options,
                     const Normalization& norm);

// -- nondimensional conversions -------------------------------------------------

std::array<double, kMacroOutputs> to_nondimensional(const Scales& s, double u, double v, double p, double rho);
std::array<double, kMacroOutputs> to_lattice(const Scales& s, const std::array<double, kMacroOutputs>& nd);

/// Nondimensional fields and their derivatives at one point.
struct FieldJet {
    double u = 0, v = 0, p = 0, rho = 1;
    double u_x = 0, u_y = 0, u_t = 0, u_xx = 0, u_yy = 0;
    double v_x = 0, v_y = 0, v_t = 0, v_xx = 0, v_yy = 0;
    double p_x = 0, p_y = 0;
};

struct Residuals {
    double continuity = 0.0;
    double momentum_x = 0.0;
    double momentum_y = 0.0;
};

/// Continuity and momentum residuals of a field jet. Throws
/// SingularDensityError when rho <= kDensityFloor.
Residuals residuals(const FieldJet& jet, double reynolds);

std::vector<FieldJet> field_jets(const PinnModel& model, std::span<const Point> points);
Residuals pde_residuals(const PinnModel& model, const Point& point);
std::vector<Residuals> pde_residuals(const PinnModel& model, std::span<const Point> points);

// -- collocation -----------------------------------------------------------------

enum class SamplingStrategy { uniform, near_wall_enriched };
std::string_view to_string(SamplingStrategy s);
SamplingStrategy parse_strategy(std::string_view name);

enum class BoundaryKind { wall, inlet, outlet, initial };
std::string_view to_string(BoundaryKind k);
BoundaryKind parse_boundary_kind(std::string_view name);

struct BoundaryPoint {
    Point point;
    BoundaryKind kind = BoundaryKind::wall;
    /// Nondimensional (u, v, p) target; used by initial-condition points.
    std::array<double, 3> target{0, 0, 0};
};

struct CollocationSet {
    std::vector<Point> interior;
    std::vector<std::uint8_t> from_band;  ///< 1 where the point came from the wall-band sampler
    std::vector<BoundaryPoint> boundary;
    SamplingStrategy strategy = SamplingStrategy::uniform;
    std::uint64_t seed = 0;
};

struct SamplingConfig {
    SamplingStrategy strategy = SamplingStrategy::near_wall_enriched;
    std::size_t total = 2048;
    double band_fraction = 0.4;
    std::size_t wall = 256;
    std::size_t inlet = 64;
    std::size_t outlet = 64;
    std::size_t initial = 0;
};

/// Interior/band split for enriched sampling: interior = round_half_up(total * (1 - band)).
std::pair<std::size_t, std::size_t> split_counts(std::size_t total, double band_fraction);

/// True when (x, y) lies at least one lattice unit from every solid node.
bool clear_of_solids(const surface::SolidMask& mask, double x, double y);
/// True when (x, y) is within 0.2 H of the local bottom or top wall surface.
bool in_wall_band(const surface::SolidMask& mask, double height, double x, double y);

/// Uniform: `total` points over the fluid region. Enriched: the interior share
/// uniform over the fluid region and the band share uniform inside the wall
/// bands, all rejection-sampled against the solid mask. Boundary points are
/// placed on the wall surfaces, the inlet and the outlet. Throws GeometryError
/// when the rejection acceptance rate falls below 1%.
CollocationSet sample_collocation(const surface::SolidMask& mask, double height, const Domain& domain,
                                  const Scales& scales, const SamplingConfig& config, std::uint64_t seed,
                                  const lbm::FieldSnapshot* initial_state = nullptr);

// -- losses ----------------------------------------------------------------------

struct LossWeights {
    double data = 1.0;
    double physics = 0.8;
    double cont = 0.6;
    double bc = 1.2;
    double moment = 1.0;

    void validate() const;
};

struct LossBreakdown {
    double total = 0.0;
    double data = 0.0;
    double momentum = 0.0;
    double continuity = 0.0;
    double boundary = 0.0;
    double moment = 0.0;
};

double data_loss(const PinnModel& model, std::span<const Sample> data);
/// Bundled form: mean squared continuity + momentum residuals plus the
/// moment-consistency term.
double physics_loss(const PinnModel& model, std::span<const Point> collocation);
double boundary_loss(const PinnModel& model, std::span<const BoundaryPoint> boundary);

/// Weighted composite loss with its unweighted terms. When `grad` is
/// non-null the exact parameter gradient of the total is added into it.
LossBreakdown total_loss(const PinnModel& model, std::span<const Sample> data,
                         std::span<const Point> collocation, std::span<const BoundaryPoint> boundary,
                         const LossWeights& weights, ad::ParameterSet* grad = nullptr);

// -- training --------------------------------------------------------------------

struct AdamConfig {
    int epochs = 5000;  ///< one epoch = one optimizer step
    double learning_rate = 1e-3;
    double decay_rate = 0.95;
    int decay_interval = 200;
    std::size_t batch_data = 512;
    std::size_t batch_collocation = 512;
    std::size_t batch_boundary = 128;
};

struct LbfgsConfig {
    int max_iterations = 2000;
    int history = 20;
    double c1 = 1e-4;
    double c2 = 0.9;
    double gradient_floor = 1e-10;
};

struct TrainConfig {
    AdamConfig adam;
    LbfgsConfig lbfgs;
    LossWeights weights;
    std::uint64_t seed = 0;

    void validate() const;
};

struct LossRecord {
    long iteration = 0;
    std::string phase;
    double learning_rate = 0.0;
    LossBreakdown loss;
};

struct TrainResult {
    PinnModel model;
    std::vector<LossRecord> history;
    int lbfgs_fallbacks = 0;
    std::string lbfgs_stop;
    bool aborted = false;  ///< non-finite loss; model holds the last good parameters
    std::string abort_reason;
    LossBreakdown final_loss;  ///< full-batch loss of the returned model
};

using ProgressCallback = std::function<void(const LossRecord&)>;

TrainResult train(PinnModel model, const LabeledDataset& data, const CollocationSet& collocation,
                  const TrainConfig& config, const ProgressCallback& progress = {});

/// `iter,phase,lr,total,data,mom,cont,bc,moment`
void write_loss_history(std::ostream& out, std::span<const LossRecord> history);

// -- evaluation ------------------------------------------------------------------

/// Evaluates the macroscopic head at every fluid node of `mask` at lattice
/// time `step`; lattice units, NaN at solid nodes.
lbm::FieldSnapshot predict_fields(const PinnModel& model, const surface::SolidMask& mask, std::uint64_t step);

/// Exact vorticity dv/dx - du/dy (lattice units) at fluid nodes, NaN at solids.
std::vector<double> model_vorticity(const PinnModel& model, const surface::SolidMask& mask, std::uint64_t step);

/// Exact continuity residual du/dx + dv/dy in lattice units at each point.
std::vector<double> model_continuity(const PinnModel& model, std::span<const Point> points);

}  // namespace roughflow::pinn
