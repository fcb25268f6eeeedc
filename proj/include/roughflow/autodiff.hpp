/// @file autodiff.hpp
/// @brief Exact derivatives of fully connected networks.
///
/// A batch of points is pushed through the network together with its
/// forward-mode jets: first derivatives along selected input directions and
/// diagonal second derivatives along a subset of them. All jet blocks of a
/// layer share one matrix product. The recorded forward pass can then be
/// reversed to obtain the exact parameter gradient of any scalar built from
/// output values and output jets, which includes the mixed
/// parameter/second-input-derivative terms that PDE residual losses need.
#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace roughflow::ad {

enum class Activation : std::uint32_t { tanh = 0, relu = 1, elu = 2, gelu = 3 };

std::string_view to_string(Activation a);
/// Throws ParameterError for unknown names.
Activation parse_activation(std::string_view name);
bool is_twice_differentiable(Activation a);

/// Activation value and its first three derivatives, elementwise.
struct ActivationJet {
    Eigen::ArrayXXd value, d1, d2, d3;
};
ActivationJet activate(Activation a, const Eigen::ArrayXXd& z, int order);

struct NetworkSpec {
    int input_width = 3;
    int hidden_layers = 8;
    int hidden_width = 128;
    int output_width = 4;
    Activation activation = Activation::tanh;
    std::uint64_t init_seed = 0;

    void validate() const;
    int layer_count() const { return hidden_layers + 1; }
    std::size_t parameter_count() const;
};

struct DenseLayer {
    Eigen::MatrixXd weight;  ///< rows = fan_out, cols = fan_in
    Eigen::VectorXd bias;
};

struct ParameterSet {
    std::vector<DenseLayer> layers;

    std::size_t size() const;
    /// Per layer: weights row-major, then biases.
    Eigen::VectorXd flatten() const;
    void assign(const Eigen::VectorXd& flat);
    bool all_finite() const;
    ParameterSet zeros_like() const;
    void set_zero();
    bool operator==(const ParameterSet& other) const;
};

/// Glorot-uniform weights from a generator seeded with spec.init_seed; zero biases.
ParameterSet init_parameters(const NetworkSpec& spec);
ParameterSet zero_parameters(const NetworkSpec& spec);

/// Affine-then-activation layers; the last layer is affine only.
Eigen::VectorXd forward(const ParameterSet& params, const NetworkSpec& spec, std::span<const double> x);

struct InputDerivatives {
    Eigen::MatrixXd jacobian;      ///< [output][input]
    Eigen::MatrixXd hessian_diag;  ///< [output][input], d^2 out / d in^2
};

/// Throws UnsupportedActivationError for relu (second derivative requested).
InputDerivatives input_derivatives(const ParameterSet& params, const NetworkSpec& spec,
                                   std::span<const double> x);

/// Which input derivatives a batch carries. Every entry of `second` must
/// also appear in `first`.
struct JetLayout {
    std::vector<int> first;
    std::vector<int> second;

    int blocks() const { return 1 + static_cast<int>(first.size() + second.size()); }
    int first_block(int k) const { return 1 + k; }
    int second_block(int k) const { return 1 + static_cast<int>(first.size()) + k; }
    static JetLayout value_only() { return {}; }
};

/// Forward pass over a batch with a tape for the reverse pass. Output and
/// gradient matrices are output_width x (blocks * points), one column block
/// per jet component in layout order.
class JetBatch {
public:
    JetBatch(const ParameterSet& params, const NetworkSpec& spec, const Eigen::MatrixXd& inputs,
             JetLayout layout);

    int points() const { return points_; }
    const JetLayout& layout() const { return layout_; }
    const Eigen::MatrixXd& output() const { return output_; }

    auto value() const { return output_.leftCols(points_); }
    auto first(int k) const { return output_.middleCols(layout_.first_block(k) * points_, points_); }
    auto second(int k) const { return output_.middleCols(layout_.second_block(k) * points_, points_); }

    /// Adds d(loss)/d(params) into `grad` given d(loss)/d(output).
    void backward(const Eigen::MatrixXd& output_grad, ParameterSet& grad) const;

private:
    const ParameterSet& params_;
    NetworkSpec spec_;
    JetLayout layout_;
    int points_ = 0;
    std::vector<int> second_source_;       ///< first-block index feeding each second block
    std::vector<Eigen::MatrixXd> inputs_;  ///< layer inputs (jets), per layer
    std::vector<Eigen::MatrixXd> preact_;  ///< hidden pre-activations (jets)
    Eigen::MatrixXd output_;
};

}  // namespace roughflow::ad
