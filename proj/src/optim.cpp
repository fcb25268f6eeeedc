#include "roughflow/optim.hpp"

#include "roughflow/error.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

namespace roughflow::optim {

double ExponentialDecay::rate(long iteration) const {
    return initial * std::pow(factor, static_cast<double>(iteration / interval));
}

Adam::Adam(Eigen::Index size, double beta1, double beta2, double epsilon)
    : beta1_(beta1), beta2_(beta2), epsilon_(epsilon), m_(Eigen::VectorXd::Zero(size)),
      v_(Eigen::VectorXd::Zero(size)) {}

void Adam::step(Eigen::VectorXd& x, const Eigen::VectorXd& g, double learning_rate) {
    ++t_;
    m_ = beta1_ * m_ + (1.0 - beta1_) * g;
    v_ = beta2_ * v_ + (1.0 - beta2_) * g.cwiseProduct(g);
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    x.array() -= learning_rate * (m_.array() / c1) / ((v_.array() / c2).sqrt() + epsilon_);
}

namespace {

struct Pair {
    Eigen::VectorXd s, y;
    double rho;
};

Eigen::VectorXd two_loop(const std::deque<Pair>& pairs, const Eigen::VectorXd& g) {
    Eigen::VectorXd q = g;
    std::vector<double> alpha(pairs.size());
    for (std::size_t k = pairs.size(); k-- > 0;) {
        alpha[k] = pairs[k].rho * pairs[k].s.dot(q);
        q -= alpha[k] * pairs[k].y;
    }
    const auto& last = pairs.back();
    q *= last.s.dot(last.y) / last.y.squaredNorm();
    for (std::size_t k = 0; k < pairs.size(); ++k) {
        const double beta = pairs[k].rho * pairs[k].y.dot(q);
        q += (alpha[k] - beta) * pairs[k].s;
    }
    return -q;
}

struct Trial {
    double alpha = 0.0;
    double value = 0.0;
    Eigen::VectorXd x, grad;
};

}  // namespace

LbfgsReport lbfgs_minimize(const Objective& objective, Eigen::VectorXd& x, const LbfgsOptions& options,
                           const IterationCallback& on_iteration) {
    LbfgsReport report;
    Eigen::VectorXd grad(x.size());
    double value = objective(x, grad);
    ++report.evaluations;
    if (!std::isfinite(value) || !grad.allFinite()) {
        report.non_finite = true;
        report.stop_reason = "non-finite objective at start";
        report.final_value = value;
        return report;
    }

    std::deque<Pair> pairs;
    auto evaluate = [&](const Eigen::VectorXd& base, const Eigen::VectorXd& dir, double alpha) {
        Trial t;
        t.alpha = alpha;
        t.x = base + alpha * dir;
        t.grad.resize(base.size());
        t.value = objective(t.x, t.grad);
        ++report.evaluations;
        return t;
    };

    while (true) {
        report.gradient_norm = grad.norm();
        report.final_value = value;
        if (report.gradient_norm <= options.gradient_floor) {
            report.stop_reason = "gradient floor";
            break;
        }
        if (report.iterations >= options.max_iterations) {
            report.stop_reason = "iteration cap";
            break;
        }

        Eigen::VectorXd dir = pairs.empty() ? Eigen::VectorXd(-grad) : two_loop(pairs, grad);
        double slope = grad.dot(dir);
        if (!(slope < 0.0)) {
            pairs.clear();
            dir = -grad;
            slope = -grad.squaredNorm();
        }
        double alpha = pairs.empty() ? std::min(1.0, 1.0 / grad.lpNorm<1>()) : 1.0;

        // Bracketing search for a point satisfying both Wolfe conditions.
        double lo = 0.0, hi = INFINITY;
        bool accepted = false;
        bool saw_non_finite = false;
        Trial trial;
        for (int k = 0; k < options.max_line_search; ++k) {
            trial = evaluate(x, dir, alpha);
            const bool finite = std::isfinite(trial.value) && trial.grad.allFinite();
            saw_non_finite = saw_non_finite || !finite;
            if (!finite || trial.value > value + options.c1 * alpha * slope) {
                hi = alpha;
                double next = 0.5 * (lo + hi);
                if (finite && lo == 0.0) {
                    const double denom = 2.0 * (trial.value - value - slope * alpha);
                    if (denom > 0.0) next = std::clamp(-slope * alpha * alpha / denom, 0.1 * alpha, 0.5 * alpha);
                }
                alpha = next;
                continue;
            }
            const double trial_slope = trial.grad.dot(dir);
            if (trial_slope < options.c2 * slope) {
                lo = alpha;
                alpha = std::isfinite(hi) ? 0.5 * (lo + hi) : 2.0 * alpha;
                continue;
            }
            accepted = true;
            break;
        }

        if (!accepted) {
            // Steepest-descent recovery: backtrack on sufficient decrease alone.
            ++report.fallback_steps;
            pairs.clear();
            dir = -grad;
            slope = -grad.squaredNorm();
            alpha = 1.0 / std::max(1.0, grad.norm());
            for (int k = 0; k < 60; ++k) {
                trial = evaluate(x, dir, alpha);
                if (std::isfinite(trial.value) && trial.grad.allFinite() &&
                    trial.value <= value + options.c1 * alpha * slope) {
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if (!accepted) {
                report.non_finite = saw_non_finite;
                report.stop_reason = "line search failed";
                break;
            }
        }

        Eigen::VectorXd s = trial.x - x;
        Eigen::VectorXd y = trial.grad - grad;
        const double sy = s.dot(y);
        x = std::move(trial.x);
        grad = std::move(trial.grad);
        value = trial.value;
        ++report.iterations;
        if (sy > 1e-12 * s.norm() * y.norm() && sy > 0.0) {
            pairs.push_back({std::move(s), std::move(y), 1.0 / sy});
            if (static_cast<int>(pairs.size()) > options.history) pairs.pop_front();
        }
        if (on_iteration) on_iteration(report.iterations, value, x);
    }
    return report;
}

}  // namespace roughflow::optim
