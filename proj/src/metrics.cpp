#include "roughflow/metrics.hpp"

#include "roughflow/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

namespace roughflow::metrics {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

/// Visits index pairs where both entries are finite; returns the pair count.
template <class F>
std::size_t for_pairs(std::span<const double> y, std::span<const double> y_ref, F&& f) {
    if (y.size() != y_ref.size()) {
        throw ShapeError("metric inputs differ in length: " + std::to_string(y.size()) + " vs " +
                         std::to_string(y_ref.size()));
    }
    std::size_t n = 0;
    for (std::size_t k = 0; k < y.size(); ++k) {
        if (std::isnan(y[k]) || std::isnan(y_ref[k])) continue;
        f(y[k], y_ref[k]);
        ++n;
    }
    if (n == 0) throw UndefinedMetricError("no fluid entries shared by prediction and reference");
    return n;
}

double ref_mean(std::span<const double> y, std::span<const double> y_ref) {
    double sum = 0.0;
    const auto n = for_pairs(y, y_ref, [&](double, double r) { sum += r; });
    return sum / static_cast<double>(n);
}

void require_same_grid(const lbm::FieldSnapshot& a, const lbm::FieldSnapshot& b) {
    if (a.nx != b.nx || a.ny != b.ny) {
        throw ShapeError("grid mismatch: prediction is " + std::to_string(a.nx) + "x" + std::to_string(a.ny) +
                         ", reference is " + std::to_string(b.nx) + "x" + std::to_string(b.ny));
    }
}

/// Derivative along one axis. `step` is the index stride of that axis.
std::vector<double> derivative(const GridField& f, double spacing, bool along_x) {
    if (f.values.size() != std::size_t(f.nx) * f.ny) throw ShapeError("field size does not match its grid");
    std::vector<double> d(f.values.size(), kNaN);
    auto fluid = [&](int i, int j) {
        return i >= 0 && i < f.nx && j >= 0 && j < f.ny && !std::isnan(f.at(i, j));
    };
    for (int j = 0; j < f.ny; ++j) {
        for (int i = 0; i < f.nx; ++i) {
            if (!fluid(i, j)) continue;
            const int di = along_x ? 1 : 0, dj = along_x ? 0 : 1;
            auto val = [&](int k) { return f.at(i + k * di, j + k * dj); };
            auto ok = [&](int k) { return fluid(i + k * di, j + k * dj); };
            double g = 0.0;
            if (ok(1) && ok(-1)) {
                g = (val(1) - val(-1)) / (2.0 * spacing);
            } else if (ok(1) && ok(2)) {
                g = (-3.0 * val(0) + 4.0 * val(1) - val(2)) / (2.0 * spacing);
            } else if (ok(-1) && ok(-2)) {
                g = (3.0 * val(0) - 4.0 * val(-1) + val(-2)) / (2.0 * spacing);
            } else if (ok(1)) {
                g = (val(1) - val(0)) / spacing;
            } else if (ok(-1)) {
                g = (val(0) - val(-1)) / spacing;
            }
            d[std::size_t(j) * f.nx + i] = g;
        }
    }
    return d;
}

GridField grid(const lbm::FieldSnapshot& s, const std::vector<double>& v) { return {s.nx, s.ny, v}; }

}  // namespace

double mae(std::span<const double> y, std::span<const double> y_ref) {
    double sum = 0.0;
    const auto n = for_pairs(y, y_ref, [&](double a, double b) { sum += std::abs(a - b); });
    return sum / static_cast<double>(n);
}

double rmse(std::span<const double> y, std::span<const double> y_ref) {
    double sum = 0.0;
    const auto n = for_pairs(y, y_ref, [&](double a, double b) { sum += (a - b) * (a - b); });
    return std::sqrt(sum / static_cast<double>(n));
}

double rel_l2(std::span<const double> y, std::span<const double> y_ref) {
    double num = 0.0, den = 0.0;
    for_pairs(y, y_ref, [&](double a, double b) {
        num += (a - b) * (a - b);
        den += b * b;
    });
    if (den == 0.0) throw UndefinedMetricError("relative L2 error is undefined for a zero-norm reference");
    return std::sqrt(num / den);
}

/// True when every paired entry of the chosen side holds the same value.
static bool constant_pairs(std::span<const double> y, std::span<const double> y_ref, bool prediction_side) {
    bool first = true, constant = true;
    double seen = 0.0;
    for_pairs(y, y_ref, [&](double a, double b) {
        const double x = prediction_side ? a : b;
        if (first) {
            seen = x;
            first = false;
        } else if (x != seen) {
            constant = false;
        }
    });
    return constant;
}

double r2(std::span<const double> y, std::span<const double> y_ref) {
    const double mean = ref_mean(y, y_ref);
    double ss_res = 0.0, ss_tot = 0.0;
    for_pairs(y, y_ref, [&](double a, double b) {
        ss_res += (a - b) * (a - b);
        ss_tot += (b - mean) * (b - mean);
    });
    // The rounded mean of a constant field can differ from its entries, so
    // constancy is tested on the values themselves.
    if (ss_tot == 0.0 || constant_pairs(y, y_ref, false)) {
        throw UndefinedMetricError("R^2 is undefined for a constant reference");
    }
    return 1.0 - ss_res / ss_tot;
}

double pearson(std::span<const double> y, std::span<const double> y_ref) {
    double sy = 0.0, sr = 0.0;
    const auto n = static_cast<double>(for_pairs(y, y_ref, [&](double a, double b) {
        sy += a;
        sr += b;
    }));
    const double my = sy / n, mr = sr / n;
    double cov = 0.0, vy = 0.0, vr = 0.0;
    for_pairs(y, y_ref, [&](double a, double b) {
        cov += (a - my) * (b - mr);
        vy += (a - my) * (a - my);
        vr += (b - mr) * (b - mr);
    });
    if (vy == 0.0 || vr == 0.0 || constant_pairs(y, y_ref, true) || constant_pairs(y, y_ref, false)) {
        throw UndefinedMetricError("correlation is undefined for a constant field");
    }
    return cov / std::sqrt(vy * vr);
}

std::vector<double> derivative_x(const GridField& f, double spacing) { return derivative(f, spacing, true); }
std::vector<double> derivative_y(const GridField& f, double spacing) { return derivative(f, spacing, false); }

std::vector<double> vorticity(const lbm::FieldSnapshot& s, double spacing) {
    const auto v_x = derivative_x(grid(s, s.v), spacing);
    const auto u_y = derivative_y(grid(s, s.u), spacing);
    std::vector<double> w(v_x.size());
    for (std::size_t k = 0; k < w.size(); ++k) w[k] = v_x[k] - u_y[k];
    return w;
}

ResidualStats abs_stats(std::span<const double> values) {
    ResidualStats st;
    std::size_t n = 0;
    for (double x : values) {
        if (std::isnan(x)) continue;
        st.mean_abs += std::abs(x);
        st.max_abs = std::max(st.max_abs, std::abs(x));
        ++n;
    }
    if (n == 0) throw UndefinedMetricError("no fluid entries to summarize");
    st.mean_abs /= static_cast<double>(n);
    return st;
}

ContinuityField continuity_residual_field(const lbm::FieldSnapshot& s, double spacing) {
    const auto u_x = derivative_x(grid(s, s.u), spacing);
    const auto v_y = derivative_y(grid(s, s.v), spacing);
    ContinuityField c;
    c.residual.resize(u_x.size());
    for (std::size_t k = 0; k < u_x.size(); ++k) c.residual[k] = u_x[k] + v_y[k];
    c.stats = abs_stats(c.residual);
    return c;
}

double enstrophy(std::span<const double> omega, double cell_area) {
    double sum = 0.0;
    for (double w : omega) {
        if (!std::isnan(w)) sum += w * w;
    }
    return sum * cell_area;
}

double enstrophy_deviation(std::span<const double> pred_omega, std::span<const double> ref_omega) {
    double ep = 0.0, er = 0.0;
    for_pairs(pred_omega, ref_omega, [&](double a, double b) {
        ep += a * a;
        er += b * b;
    });
    if (er == 0.0) throw UndefinedMetricError("reference enstrophy is zero");
    return std::abs(ep - er) / er;
}

double momentum_flux_deviation(const lbm::FieldSnapshot& pred, const lbm::FieldSnapshot& ref) {
    require_same_grid(pred, ref);
    double fp = 0.0, fr = 0.0;
    std::size_t n = 0;
    for (std::size_t k = 0; k < ref.u.size(); ++k) {
        if (std::isnan(pred.u[k]) || std::isnan(ref.u[k]) || std::isnan(pred.rho[k]) || std::isnan(ref.rho[k])) {
            continue;
        }
        fp += pred.rho[k] * pred.u[k] * pred.u[k];
        fr += ref.rho[k] * ref.u[k] * ref.u[k];
        ++n;
    }
    if (n == 0 || fr == 0.0) throw UndefinedMetricError("reference momentum flux is zero");
    return std::abs(fp - fr) / fr;
}

double extrema_match_rate(const GridField& pred, const GridField& ref, double tolerance, double floor) {
    if (!(tolerance > 0.0)) throw ParameterError("extrema tolerance must be positive");
    if (pred.nx != ref.nx || pred.ny != ref.ny) throw ShapeError("extrema fields differ in shape");
    std::size_t extrema = 0, matched = 0;
    for (int j = 0; j < ref.ny; ++j) {
        for (int i = 0; i < ref.nx; ++i) {
            const double r = ref.at(i, j);
            if (std::isnan(r) || std::abs(r) <= floor) continue;
            bool is_max = true;
            double best = kNaN;
            for (int dj = -1; dj <= 1; ++dj) {
                for (int di = -1; di <= 1; ++di) {
                    const int a = i + di, b = j + dj;
                    if (a < 0 || a >= ref.nx || b < 0 || b >= ref.ny) continue;
                    const double rn = ref.at(a, b);
                    if (!std::isnan(rn) && std::abs(rn) > std::abs(r)) is_max = false;
                    const double pn = pred.at(a, b);
                    if (!std::isnan(pn) && (std::isnan(best) || std::abs(pn) > std::abs(best))) best = pn;
                }
            }
            if (!is_max) continue;
            ++extrema;
            if (!std::isnan(best) && std::abs(best - r) <= tolerance * std::abs(r)) ++matched;
        }
    }
    if (extrema == 0) throw UndefinedMetricError("no reference vorticity extrema above the magnitude floor");
    return static_cast<double>(matched) / static_cast<double>(extrema);
}

double max_abs_vorticity(const GridField& omega, int margin) {
    double m = 0.0;
    for (int j = 0; j < omega.ny; ++j) {
        for (int i = margin; i < omega.nx - margin; ++i) {
            const double w = omega.at(i, j);
            if (!std::isnan(w)) m = std::max(m, std::abs(w));
        }
    }
    return m;
}

Profile extract_profile(const lbm::FieldSnapshot& s, Field field, Axis axis, int position) {
    const int limit = axis == Axis::column ? s.nx : s.ny;
    if (position < 0 || position >= limit) {
        throw RangeError("profile position " + std::to_string(position) + " outside [0, " +
                         std::to_string(limit - 1) + "]");
    }
    const std::vector<double>* values = nullptr;
    switch (field) {
        case Field::rho: values = &s.rho; break;
        case Field::u: values = &s.u; break;
        case Field::v: values = &s.v; break;
        case Field::p: values = &s.p; break;
    }
    Profile prof;
    const int count = axis == Axis::column ? s.ny : s.nx;
    for (int k = 0; k < count; ++k) {
        const auto idx = axis == Axis::column ? s.index(position, k) : s.index(k, position);
        const double v = (*values)[idx];
        if (std::isnan(v)) continue;
        prof.coordinate.push_back(k);
        prof.value.push_back(v);
    }
    return prof;
}

FieldMetrics field_metrics(std::span<const double> y, std::span<const double> y_ref) {
    auto guarded = [](auto&& f) {
        try {
            return f();
        } catch (const UndefinedMetricError&) {
            return kNaN;
        }
    };
    FieldMetrics m;
    m.mae = guarded([&] { return mae(y, y_ref); });
    m.rmse = guarded([&] { return rmse(y, y_ref); });
    m.rel_l2 = guarded([&] { return rel_l2(y, y_ref); });
    m.r2 = guarded([&] { return r2(y, y_ref); });
    m.pearson = guarded([&] { return pearson(y, y_ref); });
    return m;
}

MetricsReport compare(const lbm::FieldSnapshot& pred, const lbm::FieldSnapshot& ref, const CompareOptions& options) {
    require_same_grid(pred, ref);
    MetricsReport rep;
    rep.u = field_metrics(pred.u, ref.u);
    rep.v = field_metrics(pred.v, ref.v);
    rep.p = field_metrics(pred.p, ref.p);
    const auto ref_w = vorticity(ref);
    const auto pred_w = options.pred_vorticity ? *options.pred_vorticity : vorticity(pred);
    if (pred_w.size() != ref_w.size()) throw ShapeError("vorticity override does not match the grid");
    rep.omega = field_metrics(pred_w, ref_w);
    rep.vorticity_method = options.vorticity_method;
    rep.continuity = options.pred_continuity ? *options.pred_continuity : continuity_residual_field(pred).stats;
    auto guarded = [](auto&& f) {
        try {
            return f();
        } catch (const UndefinedMetricError&) {
            return kNaN;
        }
    };
    rep.momentum_flux_deviation = guarded([&] { return momentum_flux_deviation(pred, ref); });
    rep.enstrophy_deviation = guarded([&] { return enstrophy_deviation(pred_w, ref_w); });
    rep.extrema_match_rate = guarded([&] {
        return extrema_match_rate({pred.nx, pred.ny, pred_w}, {ref.nx, ref.ny, ref_w}, options.extrema_tolerance);
    });
    return rep;
}

namespace {

void emit(std::ostream& out, const std::string& prefix, const char* field, const char* metric, double v) {
    if (!prefix.empty()) out << prefix << ',';
    out << field << ',' << metric << ',' << v << '\n';
}

void emit_field(std::ostream& out, const std::string& prefix, const char* name, const FieldMetrics& m) {
    emit(out, prefix, name, "mae", m.mae);
    emit(out, prefix, name, "rmse", m.rmse);
    emit(out, prefix, name, "rel_l2", m.rel_l2);
    emit(out, prefix, name, "r2", m.r2);
    emit(out, prefix, name, "pearson", m.pearson);
}

}  // namespace

void write_report_rows(std::ostream& out, const MetricsReport& r, const std::string& prefix) {
    const auto old = out.precision(17);
    emit_field(out, prefix, "u", r.u);
    emit_field(out, prefix, "v", r.v);
    emit_field(out, prefix, "p", r.p);
    emit_field(out, prefix, "omega", r.omega);
    emit(out, prefix, "continuity", "mean_abs", r.continuity.mean_abs);
    emit(out, prefix, "continuity", "max_abs", r.continuity.max_abs);
    emit(out, prefix, "global", "momentum_flux_deviation", r.momentum_flux_deviation);
    emit(out, prefix, "global", "enstrophy_deviation", r.enstrophy_deviation);
    emit(out, prefix, "global", "extrema_match_rate", r.extrema_match_rate);
    if (!prefix.empty()) out << prefix << ',';
    out << "omega,method," << r.vorticity_method << '\n';
    out.precision(old);
}

void write_report_csv(std::ostream& out, const MetricsReport& report) {
    out << "field,metric,value\n";
    write_report_rows(out, report, "");
}

}  // namespace roughflow::metrics
