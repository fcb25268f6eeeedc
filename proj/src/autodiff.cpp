#include "roughflow/autodiff.hpp"

#include "roughflow/error.hpp"
#include "roughflow/random.hpp"

#include <cmath>
#include <numbers>

namespace roughflow::ad {

std::string_view to_string(Activation a) {
    switch (a) {
        case Activation::tanh: return "tanh";
        case Activation::relu: return "relu";
        case Activation::elu: return "elu";
        case Activation::gelu: return "gelu";
    }
    return "unknown";
}

Activation parse_activation(std::string_view name) {
    if (name == "tanh") return Activation::tanh;
    if (name == "relu") return Activation::relu;
    if (name == "elu") return Activation::elu;
    if (name == "gelu") return Activation::gelu;
    throw ParameterError("unknown activation '" + std::string(name) + "'");
}

bool is_twice_differentiable(Activation a) { return a != Activation::relu; }

ActivationJet activate(Activation a, const Eigen::ArrayXXd& z, int order) {
    ActivationJet j;
    switch (a) {
        case Activation::tanh: {
            j.value = z.tanh();
            if (order >= 1) j.d1 = 1.0 - j.value.square();
            if (order >= 2) j.d2 = -2.0 * j.value * j.d1;
            if (order >= 3) j.d3 = (6.0 * j.value.square() - 2.0) * j.d1;
            break;
        }
        case Activation::relu: {
            j.value = z.max(0.0);
            if (order >= 1) j.d1 = (z > 0.0).cast<double>();
            if (order >= 2) j.d2 = Eigen::ArrayXXd::Zero(z.rows(), z.cols());
            if (order >= 3) j.d3 = Eigen::ArrayXXd::Zero(z.rows(), z.cols());
            break;
        }
        case Activation::elu: {
            const Eigen::ArrayXXd e = z.min(0.0).exp();
            const auto pos = (z > 0.0);
            j.value = pos.select(z, e - 1.0);
            if (order >= 1) j.d1 = pos.select(Eigen::ArrayXXd::Ones(z.rows(), z.cols()), e);
            if (order >= 2) j.d2 = pos.select(Eigen::ArrayXXd::Zero(z.rows(), z.cols()), e);
            if (order >= 3) j.d3 = j.d2;
            break;
        }
        case Activation::gelu: {
            // Exact form z * Phi(z).
            const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
            const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
            const Eigen::ArrayXXd cdf = 0.5 * (1.0 + (z * inv_sqrt2).unaryExpr([](double v) { return std::erf(v); }));
            const Eigen::ArrayXXd pdf = inv_sqrt2pi * (-0.5 * z.square()).exp();
            j.value = z * cdf;
            if (order >= 1) j.d1 = cdf + z * pdf;
            if (order >= 2) j.d2 = pdf * (2.0 - z.square());
            if (order >= 3) j.d3 = pdf * (z.cube() - 4.0 * z);
            break;
        }
    }
    return j;
}

void NetworkSpec::validate() const {
    if (input_width < 1 || hidden_width < 1 || output_width < 1) {
        throw ParameterError("network widths must be >= 1");
    }
    if (hidden_layers < 1) throw ParameterError("network needs at least one hidden layer");
}

std::size_t NetworkSpec::parameter_count() const {
    std::size_t n = std::size_t(hidden_width) * (input_width + 1);
    n += std::size_t(hidden_layers - 1) * hidden_width * (hidden_width + 1);
    n += std::size_t(output_width) * (hidden_width + 1);
    return n;
}

std::size_t ParameterSet::size() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight.size() + l.bias.size();
    return n;
}

Eigen::VectorXd ParameterSet::flatten() const {
    Eigen::VectorXd flat(static_cast<Eigen::Index>(size()));
    Eigen::Index k = 0;
    for (const auto& l : layers) {
        for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
            for (Eigen::Index c = 0; c < l.weight.cols(); ++c) flat[k++] = l.weight(r, c);
        }
        for (Eigen::Index r = 0; r < l.bias.size(); ++r) flat[k++] = l.bias[r];
    }
    return flat;
}

void ParameterSet::assign(const Eigen::VectorXd& flat) {
    if (static_cast<std::size_t>(flat.size()) != size()) {
        throw ShapeError("flat parameter vector has " + std::to_string(flat.size()) +
                         " entries, expected " + std::to_string(size()));
    }
    Eigen::Index k = 0;
    for (auto& l : layers) {
        for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
            for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = flat[k++];
        }
        for (Eigen::Index r = 0; r < l.bias.size(); ++r) l.bias[r] = flat[k++];
    }
}

bool ParameterSet::all_finite() const {
    for (const auto& l : layers) {
        if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
    }
    return true;
}

ParameterSet ParameterSet::zeros_like() const {
    ParameterSet z = *this;
    z.set_zero();
    return z;
}

void ParameterSet::set_zero() {
    for (auto& l : layers) {
        l.weight.setZero();
        l.bias.setZero();
    }
}

bool ParameterSet::operator==(const ParameterSet& other) const {
    if (layers.size() != other.layers.size()) return false;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& a = layers[i];
        const auto& b = other.layers[i];
        if (a.weight.rows() != b.weight.rows() || a.weight.cols() != b.weight.cols()) return false;
        if (a.weight != b.weight || a.bias != b.bias) return false;
    }
    return true;
}

ParameterSet zero_parameters(const NetworkSpec& spec) {
    spec.validate();
    ParameterSet p;
    int fan_in = spec.input_width;
    for (int l = 0; l < spec.layer_count(); ++l) {
        const int fan_out = (l == spec.hidden_layers) ? spec.output_width : spec.hidden_width;
        p.layers.push_back({Eigen::MatrixXd::Zero(fan_out, fan_in), Eigen::VectorXd::Zero(fan_out)});
        fan_in = fan_out;
    }
    return p;
}

ParameterSet init_parameters(const NetworkSpec& spec) {
    ParameterSet p = zero_parameters(spec);
    Rng rng(spec.init_seed);
    for (auto& l : p.layers) {
        const double bound = std::sqrt(6.0 / static_cast<double>(l.weight.rows() + l.weight.cols()));
        for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
            for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = rng.uniform(-bound, bound);
        }
    }
    return p;
}

Eigen::VectorXd forward(const ParameterSet& params, const NetworkSpec& spec, std::span<const double> x) {
    if (static_cast<int>(x.size()) != spec.input_width) {
        throw ShapeError("input has " + std::to_string(x.size()) + " entries, network expects " +
                         std::to_string(spec.input_width));
    }
    Eigen::VectorXd a = Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        Eigen::VectorXd z = params.layers[l].weight * a + params.layers[l].bias;
        if (l + 1 < params.layers.size()) {
            a = activate(spec.activation, z.array(), 0).value.matrix();
        } else {
            a = std::move(z);
        }
    }
    return a;
}

InputDerivatives input_derivatives(const ParameterSet& params, const NetworkSpec& spec,
                                   std::span<const double> x) {
    JetLayout layout;
    for (int d = 0; d < spec.input_width; ++d) {
        layout.first.push_back(d);
        layout.second.push_back(d);
    }
    Eigen::MatrixXd in = Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
    JetBatch batch(params, spec, in, layout);
    InputDerivatives out;
    out.jacobian.resize(spec.output_width, spec.input_width);
    out.hessian_diag.resize(spec.output_width, spec.input_width);
    for (int d = 0; d < spec.input_width; ++d) {
        out.jacobian.col(d) = batch.first(d);
        out.hessian_diag.col(d) = batch.second(d);
    }
    return out;
}

JetBatch::JetBatch(const ParameterSet& params, const NetworkSpec& spec, const Eigen::MatrixXd& inputs,
                   JetLayout layout)
    : params_(params), spec_(spec), layout_(std::move(layout)) {
    spec_.validate();
    if (inputs.rows() != spec_.input_width) {
        throw ShapeError("batch inputs have " + std::to_string(inputs.rows()) +
                         " rows, network expects " + std::to_string(spec_.input_width));
    }
    if (params_.layers.size() != static_cast<std::size_t>(spec_.layer_count())) {
        throw ShapeError("parameter set does not match network spec");
    }
    if (!layout_.second.empty() && !is_twice_differentiable(spec_.activation)) {
        throw UnsupportedActivationError(std::string(to_string(spec_.activation)) +
                                         " has no second derivative");
    }
    for (int d : layout_.first) {
        if (d < 0 || d >= spec_.input_width) throw ContractError("jet direction out of range");
    }
    for (int d : layout_.second) {
        int src = -1;
        for (std::size_t k = 0; k < layout_.first.size(); ++k) {
            if (layout_.first[k] == d) src = static_cast<int>(k);
        }
        if (src < 0) throw ContractError("second-derivative direction missing from first-derivative list");
        second_source_.push_back(src);
    }

    points_ = static_cast<int>(inputs.cols());
    const int n = points_;
    const int blocks = layout_.blocks();
    const int nfirst = static_cast<int>(layout_.first.size());

    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(spec_.input_width, Eigen::Index(blocks) * n);
    a.leftCols(n) = inputs;
    for (int k = 0; k < nfirst; ++k) {
        a.block(layout_.first[k], Eigen::Index(layout_.first_block(k)) * n, 1, n).setOnes();
    }

    const int hidden = spec_.hidden_layers;
    inputs_.reserve(hidden + 1);
    preact_.reserve(hidden);
    for (int l = 0; l < hidden; ++l) {
        const auto& layer = params_.layers[l];
        Eigen::MatrixXd z = layer.weight * a;
        z.leftCols(n).colwise() += layer.bias;
        const auto act = activate(spec_.activation, z.leftCols(n).array(), layout_.second.empty() ? 1 : 2);
        Eigen::MatrixXd h(z.rows(), z.cols());
        h.leftCols(n) = act.value.matrix();
        for (int k = 0; k < nfirst; ++k) {
            const auto cols = Eigen::Index(layout_.first_block(k)) * n;
            h.middleCols(cols, n) = (act.d1 * z.middleCols(cols, n).array()).matrix();
        }
        for (std::size_t k = 0; k < layout_.second.size(); ++k) {
            const auto cols = Eigen::Index(layout_.second_block(static_cast<int>(k))) * n;
            const auto src = Eigen::Index(layout_.first_block(second_source_[k])) * n;
            const auto zd = z.middleCols(src, n).array();
            h.middleCols(cols, n) = (act.d2 * zd.square() + act.d1 * z.middleCols(cols, n).array()).matrix();
        }
        inputs_.push_back(std::move(a));
        preact_.push_back(std::move(z));
        a = std::move(h);
    }
    const auto& last = params_.layers[hidden];
    output_ = last.weight * a;
    output_.leftCols(n).colwise() += last.bias;
    inputs_.push_back(std::move(a));
}

void JetBatch::backward(const Eigen::MatrixXd& output_grad, ParameterSet& grad) const {
    const int n = points_;
    if (output_grad.rows() != output_.rows() || output_grad.cols() != output_.cols()) {
        throw ShapeError("output gradient shape does not match batch output");
    }
    if (grad.layers.size() != params_.layers.size()) throw ShapeError("gradient accumulator shape mismatch");
    const int hidden = spec_.hidden_layers;
    const int nfirst = static_cast<int>(layout_.first.size());
    const bool second_order = !layout_.second.empty();

    grad.layers[hidden].weight.noalias() += output_grad * inputs_[hidden].transpose();
    grad.layers[hidden].bias += output_grad.leftCols(n).rowwise().sum();
    Eigen::MatrixXd g = params_.layers[hidden].weight.transpose() * output_grad;

    for (int l = hidden - 1; l >= 0; --l) {
        const Eigen::MatrixXd& z = preact_[l];
        const auto act = activate(spec_.activation, z.leftCols(n).array(), second_order ? 3 : 2);
        Eigen::MatrixXd gz(z.rows(), z.cols());
        Eigen::ArrayXXd g0 = g.leftCols(n).array() * act.d1;
        for (int k = 0; k < nfirst; ++k) {
            const auto cols = Eigen::Index(layout_.first_block(k)) * n;
            const auto gd = g.middleCols(cols, n).array();
            const auto zd = z.middleCols(cols, n).array();
            g0 += gd * act.d2 * zd;
            gz.middleCols(cols, n) = (gd * act.d1).matrix();
        }
        for (std::size_t k = 0; k < layout_.second.size(); ++k) {
            const auto cols = Eigen::Index(layout_.second_block(static_cast<int>(k))) * n;
            const auto src = Eigen::Index(layout_.first_block(second_source_[k])) * n;
            const auto gdd = g.middleCols(cols, n).array();
            const auto zd = z.middleCols(src, n).array();
            const auto zdd = z.middleCols(cols, n).array();
            g0 += gdd * (act.d3 * zd.square() + act.d2 * zdd);
            gz.middleCols(src, n).array() += 2.0 * gdd * act.d2 * zd;
            gz.middleCols(cols, n) = (gdd * act.d1).matrix();
        }
        gz.leftCols(n) = g0.matrix();

        grad.layers[l].weight.noalias() += gz * inputs_[l].transpose();
        grad.layers[l].bias += gz.leftCols(n).rowwise().sum();
        if (l > 0) g.noalias() = params_.layers[l].weight.transpose() * gz;
    }
}

}  // namespace roughflow::ad
