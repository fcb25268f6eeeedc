/// @file optim.hpp
/// @brief First-order and quasi-Newton optimizers over flat parameter vectors.
#pragma once

#include <Eigen/Dense>

#include <functional>
#include <string>

namespace roughflow::optim {

/// Staircase exponential decay: initial * factor^floor(iteration / interval).
struct ExponentialDecay {
    double initial = 1e-3;
    double factor = 0.95;
    int interval = 200;

    double rate(long iteration) const;
};

class Adam {
public:
    explicit Adam(Eigen::Index size, double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8);

    /// One bias-corrected update of x along gradient g.
    void step(Eigen::VectorXd& x, const Eigen::VectorXd& g, double learning_rate);
    long steps() const { return t_; }

private:
    double beta1_, beta2_, epsilon_;
    long t_ = 0;
    Eigen::VectorXd m_, v_;
};

/// Returns f(x) and writes the gradient into `grad`.
using Objective = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd& grad)>;

struct LbfgsOptions {
    int max_iterations = 2000;
    int history = 20;
    double c1 = 1e-4;   ///< sufficient-decrease constant
    double c2 = 0.9;    ///< curvature constant
    double gradient_floor = 1e-10;
    int max_line_search = 25;
};

struct LbfgsReport {
    int iterations = 0;
    int evaluations = 0;
    int fallback_steps = 0;  ///< line-search failures recovered by a steepest-descent step
    double final_value = 0.0;
    double gradient_norm = 0.0;
    bool non_finite = false;  ///< objective went non-finite; x holds the last good point
    std::string stop_reason;
};

/// Called after every accepted iteration with (iteration, value, x).
using IterationCallback = std::function<void(int, double, const Eigen::VectorXd&)>;

/// Limited-memory BFGS with a bracketing weak-Wolfe line search. Minimizes in
/// place; x is left at the best accepted point.
LbfgsReport lbfgs_minimize(const Objective& objective, Eigen::VectorXd& x, const LbfgsOptions& options,
                           const IterationCallback& on_iteration = {});

}  // namespace roughflow::optim
