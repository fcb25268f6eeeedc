/// @file metrics.hpp
/// @brief Pointwise error metrics and derived flow diagnostics for comparing
/// predicted fields against reference fields.
///
/// Every function excludes NaN (solid) entries pairwise.
#pragma once

#include "roughflow/lbm.hpp"

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace roughflow::metrics {

double mae(std::span<const double> y, std::span<const double> y_ref);
double rmse(std::span<const double> y, std::span<const double> y_ref);
/// ||y - y_ref|| / ||y_ref||; UndefinedMetricError for a zero-norm reference.
double rel_l2(std::span<const double> y, std::span<const double> y_ref);
/// 1 - SS_res / SS_tot; UndefinedMetricError for a constant reference.
double r2(std::span<const double> y, std::span<const double> y_ref);
/// Pearson correlation; UndefinedMetricError when either side is constant.
double pearson(std::span<const double> y, std::span<const double> y_ref);

/// A scalar field on an nx x ny grid, row-major with x fastest. NaN marks solids.
struct GridField {
    int nx = 0;
    int ny = 0;
    std::span<const double> values;

    double at(int i, int j) const { return values[std::size_t(j) * nx + i]; }
};

/// d/dx and d/dy by second-order central differences, second-order one-sided
/// stencils where a neighbour is solid or off-grid, first-order when only one
/// neighbour exists, and zero when a node has no fluid neighbour along the axis.
std::vector<double> derivative_x(const GridField& f, double spacing = 1.0);
std::vector<double> derivative_y(const GridField& f, double spacing = 1.0);

/// dv/dx - du/dy, NaN at solid nodes.
std::vector<double> vorticity(const lbm::FieldSnapshot& s, double spacing = 1.0);

struct ResidualStats {
    double mean_abs = 0.0;
    double max_abs = 0.0;
};

ResidualStats abs_stats(std::span<const double> values);

struct ContinuityField {
    std::vector<double> residual;  ///< du/dx + dv/dy, NaN at solids
    ResidualStats stats;
};

ContinuityField continuity_residual_field(const lbm::FieldSnapshot& s, double spacing = 1.0);

/// Sum of omega^2 over fluid nodes times the cell area.
double enstrophy(std::span<const double> omega, double cell_area = 1.0);
/// |E_pred - E_ref| / E_ref over nodes finite in both fields.
double enstrophy_deviation(std::span<const double> pred_omega, std::span<const double> ref_omega);
/// Relative deviation of sum(rho u^2) over nodes fluid in both snapshots.
double momentum_flux_deviation(const lbm::FieldSnapshot& pred, const lbm::FieldSnapshot& ref);

inline constexpr double kExtremaFloor = 6e-3;

/// Fraction of local maxima of |ref| (above `floor`) matched by the prediction.
/// For each reference extremum the node of largest |pred| in its 3x3
/// neighbourhood must lie within `tolerance` (relative) of the reference value.
double extrema_match_rate(const GridField& pred, const GridField& ref, double tolerance,
                          double floor = kExtremaFloor);

/// max |omega| over fluid nodes, skipping `margin` columns at each streamwise end.
double max_abs_vorticity(const GridField& omega, int margin = 0);

enum class Field { rho, u, v, p };
enum class Axis { column, row };  ///< column: fixed x; row: fixed y

struct Profile {
    std::vector<double> coordinate;
    std::vector<double> value;
};

/// One grid line of a field with solid nodes omitted; RangeError outside the grid.
Profile extract_profile(const lbm::FieldSnapshot& s, Field field, Axis axis, int position);

struct FieldMetrics {
    double mae = 0.0;
    double rmse = 0.0;
    double rel_l2 = 0.0;
    double r2 = 0.0;
    double pearson = 0.0;
};

/// Metrics with undefined entries reported as NaN instead of thrown.
FieldMetrics field_metrics(std::span<const double> y, std::span<const double> y_ref);

struct MetricsReport {
    FieldMetrics u, v, p, omega;
    ResidualStats continuity;
    double momentum_flux_deviation = 0.0;
    double enstrophy_deviation = 0.0;
    double extrema_match_rate = 0.0;
    std::string vorticity_method = "finite_difference";
};

struct CompareOptions {
    double extrema_tolerance = 0.15;
    /// Exact model vorticity and continuity overrides; finite differences of
    /// the predicted snapshot are used when absent.
    std::optional<std::vector<double>> pred_vorticity;
    std::optional<ResidualStats> pred_continuity;
    std::string vorticity_method = "finite_difference";
};

/// Full comparison of a predicted snapshot against a reference on the same
/// grid; ShapeError naming both shapes otherwise.
MetricsReport compare(const lbm::FieldSnapshot& pred, const lbm::FieldSnapshot& ref,
                      const CompareOptions& options = {});

/// `field,metric,value` rows.
void write_report_csv(std::ostream& out, const MetricsReport& report);

/// The same rows prefixed with one leading column value (used by sweeps).
void write_report_rows(std::ostream& out, const MetricsReport& report, const std::string& prefix);

}  // namespace roughflow::metrics
