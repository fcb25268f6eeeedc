/// @file support.hpp
/// @brief Independent oracles and small fixtures shared by the unit tests.
#pragma once

#include "roughflow/autodiff.hpp"
#include "roughflow/lbm.hpp"
#include "roughflow/pinn.hpp"
#include "roughflow/random.hpp"

#include <cmath>
#include <vector>

namespace testing {

/// Straight-loop network evaluation, independent of the Eigen code paths.
inline std::vector<double> naive_forward(const roughflow::ad::ParameterSet& p, roughflow::ad::Activation act,
                                         std::vector<double> x) {
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
        const auto& L = p.layers[l];
        std::vector<double> y(static_cast<std::size_t>(L.weight.rows()));
        for (Eigen::Index i = 0; i < L.weight.rows(); ++i) {
            double s = L.bias(i);
            for (Eigen::Index j = 0; j < L.weight.cols(); ++j) s += L.weight(i, j) * x[j];
            if (l + 1 < p.layers.size()) {
                switch (act) {
                    case roughflow::ad::Activation::tanh: s = std::tanh(s); break;
                    case roughflow::ad::Activation::relu: s = s > 0 ? s : 0.0; break;
                    case roughflow::ad::Activation::elu: s = s > 0 ? s : std::expm1(s); break;
                    case roughflow::ad::Activation::gelu: s = 0.5 * s * (1.0 + std::erf(s / std::sqrt(2.0))); break;
                }
            }
            y[i] = s;
        }
        x = std::move(y);
    }
    return x;
}

/// Network with weights drawn uniformly from [-scale, scale] and nonzero biases.
inline roughflow::ad::ParameterSet random_parameters(const roughflow::ad::NetworkSpec& spec, std::uint64_t seed,
                                                     double scale = 0.6) {
    auto p = roughflow::ad::init_parameters(spec);
    roughflow::Rng rng(seed);
    for (auto& L : p.layers) {
        for (Eigen::Index i = 0; i < L.weight.size(); ++i) L.weight.data()[i] = rng.uniform(-scale, scale);
        for (Eigen::Index i = 0; i < L.bias.size(); ++i) L.bias(i) = rng.uniform(-0.2, 0.2);
    }
    return p;
}

/// ||a - b|| / ||b|| over all entries.
inline double rel_err(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    const double den = b.norm();
    return den == 0.0 ? (a - b).norm() : (a - b).norm() / den;
}

/// A small model with nontrivial normalization, suitable for gradient checks.
inline roughflow::pinn::PinnModel small_model(std::uint64_t seed, bool kinetic = false, int width = 12) {
    using namespace roughflow::pinn;
    PinnModel m;
    m.options.kinetic_head = kinetic;
    m.spec.input_width = m.options.input_width();
    m.spec.hidden_layers = 2;
    m.spec.hidden_width = width;
    m.spec.output_width = m.options.output_width();
    m.spec.activation = roughflow::ad::Activation::tanh;
    m.params = random_parameters(m.spec, seed);
    m.scales.height = 10.0;
    m.scales.inlet_speed = 0.05;
    m.scales.reynolds = 7.0;
    m.norm.input_center = {1.0, 0.5, 100.0};
    m.norm.input_scale = {0.9, 1.7, 0.02};
    m.norm.output_shift = {0.4, 0.0, 0.1, 1.0};
    m.norm.output_scale = {0.3, 0.05, 0.4, 0.01};
    // Keep the predicted density well away from the floor.
    return m;
}

inline std::vector<roughflow::pinn::Point> random_points(std::size_t n, std::uint64_t seed) {
    roughflow::Rng rng(seed);
    std::vector<roughflow::pinn::Point> pts(n);
    for (auto& p : pts) p = {rng.uniform(0.0, 20.0), rng.uniform(1.0, 9.0), rng.uniform(1000.0, 1200.0)};
    return pts;
}

}  // namespace testing
