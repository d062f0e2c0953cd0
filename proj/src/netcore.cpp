#include "cdadp/netcore.hpp"

#include "cdadp/errors.hpp"

#include <cmath>

namespace cdadp {

namespace {

double activate(Activation a, double z) {
  switch (a) {
    case Activation::Elu:
      return z > 0.0 ? z : std::expm1(z);
    case Activation::Tanh:
      return std::tanh(z);
    case Activation::Linear:
      return z;
  }
  return z;
}

double activate_grad(Activation a, double z) {
  switch (a) {
    case Activation::Elu:
      return z > 0.0 ? 1.0 : std::exp(z);
    case Activation::Tanh: {
      const double t = std::tanh(z);
      return 1.0 - t * t;
    }
    case Activation::Linear:
      return 1.0;
  }
  return 1.0;
}

Eigen::VectorXd activate(Activation a, const Eigen::VectorXd& z) {
  Eigen::VectorXd out(z.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) out[i] = activate(a, z[i]);
  return out;
}

Eigen::VectorXd activate_grad(Activation a, const Eigen::VectorXd& z) {
  Eigen::VectorXd out(z.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) out[i] = activate_grad(a, z[i]);
  return out;
}

void check_input(const NetworkSpec& spec, const ParamVector& params, const Eigen::VectorXd& x) {
  if (static_cast<std::size_t>(x.size()) != spec.input_dim) {
    throw StructuralError("network input has length " + std::to_string(x.size()) + ", expected " +
                          std::to_string(spec.input_dim));
  }
  if (params.size() != spec.param_count() || params.layout().layers.size() != spec.layer_count()) {
    throw StructuralError("parameter vector does not match the network layout");
  }
}

void check_upstream(const NetworkSpec& spec, const Eigen::VectorXd& upstream) {
  if (static_cast<std::size_t>(upstream.size()) != spec.output_dim) {
    throw StructuralError("upstream gradient has length " + std::to_string(upstream.size()) +
                          ", expected " + std::to_string(spec.output_dim));
  }
}

Eigen::Map<const Eigen::VectorXd> scale_of(const NetworkSpec& spec) {
  return {spec.output_scale.data(), static_cast<Eigen::Index>(spec.output_scale.size())};
}

}  // namespace

std::string to_string(Activation a) {
  switch (a) {
    case Activation::Elu:
      return "elu";
    case Activation::Tanh:
      return "tanh";
    case Activation::Linear:
      return "linear";
  }
  return "linear";
}

Activation activation_from_string(const std::string& name) {
  if (name == "elu") return Activation::Elu;
  if (name == "tanh") return Activation::Tanh;
  if (name == "linear") return Activation::Linear;
  throw std::invalid_argument("unknown activation '" + name + "'");
}

NetworkSpec NetworkSpec::mlp(std::size_t input_dim, std::size_t hidden_layers, std::size_t hidden_width,
                             std::size_t output_dim, Activation hidden, Activation output,
                             std::vector<double> output_scale) {
  NetworkSpec spec;
  spec.input_dim = input_dim;
  spec.hidden_layers = hidden_layers;
  spec.hidden_width = hidden_width;
  spec.output_dim = output_dim;
  spec.activations.assign(hidden_layers, hidden);
  spec.activations.push_back(output);
  spec.output_scale = output_scale.empty() ? std::vector<double>(output_dim, 1.0) : std::move(output_scale);
  spec.validate();
  return spec;
}

void NetworkSpec::validate() const {
  if (input_dim == 0 || output_dim == 0) throw StructuralError("network dimensions must be positive");
  if (hidden_layers > 0 && hidden_width == 0) throw StructuralError("hidden width must be at least 1");
  if (activations.size() != hidden_layers + 1) {
    throw StructuralError("expected " + std::to_string(hidden_layers + 1) + " activations, got " +
                          std::to_string(activations.size()));
  }
  if (output_scale.size() != output_dim) throw StructuralError("output_scale length must equal output_dim");
}

ParamLayout NetworkSpec::layout() const {
  ParamLayout layout;
  std::size_t fan_in = input_dim;
  std::size_t offset = 0;
  for (std::size_t l = 0; l < layer_count(); ++l) {
    const std::size_t fan_out = (l + 1 == layer_count()) ? output_dim : hidden_width;
    LayerShape shape{fan_out, fan_in, offset};
    offset += shape.param_count();
    layout.layers.push_back(shape);
    fan_in = fan_out;
  }
  layout.total = offset;
  return layout;
}

std::size_t NetworkSpec::param_count() const {
  std::size_t total = 0;
  std::size_t fan_in = input_dim;
  for (std::size_t l = 0; l < layer_count(); ++l) {
    const std::size_t fan_out = (l + 1 == layer_count()) ? output_dim : hidden_width;
    total += fan_out * fan_in + fan_out;
    fan_in = fan_out;
  }
  return total;
}

ParamVector::ParamVector(std::shared_ptr<const ParamLayout> layout)
    : layout_(std::move(layout)), values_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(layout_->total))) {}

ParamVector::ParamVector(std::shared_ptr<const ParamLayout> layout, Eigen::VectorXd values)
    : layout_(std::move(layout)), values_(std::move(values)) {
  if (static_cast<std::size_t>(values_.size()) != layout_->total) {
    throw StructuralError("parameter values do not match layout size");
  }
}

ParamVector ParamVector::zeros(const NetworkSpec& spec) {
  spec.validate();
  return ParamVector(std::make_shared<const ParamLayout>(spec.layout()));
}

ParamVector ParamVector::zeros_like(const ParamVector& other) { return ParamVector(other.layout_); }

ParamVector ParamVector::with_values(Eigen::VectorXd values) const { return {layout_, std::move(values)}; }

bool ParamVector::same_layout(const ParamVector& other) const {
  if (layout_ == other.layout_) return true;
  if (!layout_ || !other.layout_) return false;
  return *layout_ == *other.layout_;
}

Eigen::Map<const ParamVector::RowMatrix> ParamVector::weights(std::size_t layer) const {
  const auto& s = layout_->layers.at(layer);
  return {values_.data() + s.offset, static_cast<Eigen::Index>(s.rows), static_cast<Eigen::Index>(s.cols)};
}

Eigen::Map<ParamVector::RowMatrix> ParamVector::weights(std::size_t layer) {
  const auto& s = layout_->layers.at(layer);
  return {values_.data() + s.offset, static_cast<Eigen::Index>(s.rows), static_cast<Eigen::Index>(s.cols)};
}

Eigen::Map<const Eigen::VectorXd> ParamVector::bias(std::size_t layer) const {
  const auto& s = layout_->layers.at(layer);
  return {values_.data() + s.offset + s.weight_count(), static_cast<Eigen::Index>(s.rows)};
}

Eigen::Map<Eigen::VectorXd> ParamVector::bias(std::size_t layer) {
  const auto& s = layout_->layers.at(layer);
  return {values_.data() + s.offset + s.weight_count(), static_cast<Eigen::Index>(s.rows)};
}

ParamVector init_params(const NetworkSpec& spec, std::mt19937_64& rng) {
  ParamVector params = ParamVector::zeros(spec);
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    const auto& shape = params.layout().layers[l];
    const double limit = 1.0 / std::sqrt(static_cast<double>(shape.cols));
    std::uniform_real_distribution<double> dist(-limit, limit);
    auto block = params.values().segment(static_cast<Eigen::Index>(shape.offset),
                                         static_cast<Eigen::Index>(shape.param_count()));
    for (Eigen::Index i = 0; i < block.size(); ++i) block[i] = dist(rng);
  }
  return params;
}

ForwardTape forward_tape(const NetworkSpec& spec, const ParamVector& params, const Eigen::VectorXd& x) {
  check_input(spec, params, x);
  ForwardTape tape;
  tape.inputs.reserve(spec.layer_count());
  tape.pre.reserve(spec.layer_count());
  Eigen::VectorXd a = x;
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    Eigen::VectorXd z = params.weights(l) * a + params.bias(l);
    tape.inputs.push_back(std::move(a));
    a = activate(spec.activations[l], z);
    tape.pre.push_back(std::move(z));
  }
  tape.output = scale_of(spec).cwiseProduct(a);
  return tape;
}

Eigen::VectorXd forward(const NetworkSpec& spec, const ParamVector& params, const Eigen::VectorXd& x) {
  check_input(spec, params, x);
  Eigen::VectorXd a = x;
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    Eigen::VectorXd z = params.weights(l) * a + params.bias(l);
    a = activate(spec.activations[l], z);
  }
  return scale_of(spec).cwiseProduct(a);
}

void backward(const NetworkSpec& spec, const ParamVector& params, const ForwardTape& tape,
              const Eigen::VectorXd& upstream, Eigen::Ref<Eigen::VectorXd> param_grad,
              Eigen::VectorXd* input_grad) {
  check_upstream(spec, upstream);
  if (static_cast<std::size_t>(param_grad.size()) != params.size()) {
    throw StructuralError("gradient buffer does not match parameter count");
  }
  Eigen::VectorXd delta = scale_of(spec).cwiseProduct(upstream);
  for (std::size_t l = spec.layer_count(); l-- > 0;) {
    const auto& shape = params.layout().layers[l];
    delta = delta.cwiseProduct(activate_grad(spec.activations[l], tape.pre[l]));
    Eigen::Map<ParamVector::RowMatrix> gw(param_grad.data() + shape.offset, static_cast<Eigen::Index>(shape.rows),
                                          static_cast<Eigen::Index>(shape.cols));
    gw.noalias() += delta * tape.inputs[l].transpose();
    param_grad.segment(static_cast<Eigen::Index>(shape.offset + shape.weight_count()),
                       static_cast<Eigen::Index>(shape.rows)) += delta;
    if (l > 0 || input_grad != nullptr) {
      Eigen::VectorXd next = params.weights(l).transpose() * delta;
      delta = std::move(next);
    }
  }
  if (input_grad != nullptr) *input_grad = std::move(delta);
}

ParamVector grad_params(const NetworkSpec& spec, const ParamVector& params, const Eigen::VectorXd& x,
                        const Eigen::VectorXd& upstream) {
  const ForwardTape tape = forward_tape(spec, params, x);
  ParamVector grad = ParamVector::zeros_like(params);
  backward(spec, params, tape, upstream, grad.values(), nullptr);
  return grad;
}

Eigen::VectorXd grad_input(const NetworkSpec& spec, const ParamVector& params, const Eigen::VectorXd& x,
                           const Eigen::VectorXd& upstream) {
  const ForwardTape tape = forward_tape(spec, params, x);
  Eigen::VectorXd scratch = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(params.size()));
  Eigen::VectorXd gx;
  backward(spec, params, tape, upstream, scratch, &gx);
  return gx;
}

Eigen::VectorXd jvp_params(const NetworkSpec& spec, const ParamVector& params, const Eigen::VectorXd& x,
                           const ParamVector& v) {
  check_input(spec, params, x);
  if (!v.same_layout(params)) throw StructuralError("direction layout does not match parameters");
  Eigen::VectorXd a = x;
  Eigen::VectorXd da = Eigen::VectorXd::Zero(x.size());
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    Eigen::VectorXd z = params.weights(l) * a + params.bias(l);
    Eigen::VectorXd dz = v.weights(l) * a + v.bias(l);
    if (l > 0) dz.noalias() += params.weights(l) * da;
    da = activate_grad(spec.activations[l], z).cwiseProduct(dz);
    a = activate(spec.activations[l], z);
  }
  return scale_of(spec).cwiseProduct(da);
}

Eigen::MatrixXd output_jacobian(const NetworkSpec& spec, const ParamVector& params, const Eigen::VectorXd& x) {
  const ForwardTape tape = forward_tape(spec, params, x);
  const auto m = static_cast<Eigen::Index>(spec.output_dim);
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(m, static_cast<Eigen::Index>(params.size()));
  Eigen::VectorXd row(static_cast<Eigen::Index>(params.size()));
  for (Eigen::Index k = 0; k < m; ++k) {
    row.setZero();
    backward(spec, params, tape, Eigen::VectorXd::Unit(m, k), row, nullptr);
    jac.row(k) = row.transpose();
  }
  return jac;
}

ParamVector gn_metric_vp(const NetworkSpec& spec, const ParamVector& params,
                         std::span<const Eigen::VectorXd> states, const ParamVector& v, double damping) {
  if (states.empty()) throw std::invalid_argument("metric-vector product needs at least one state");
  if (damping < 0.0) throw std::invalid_argument("damping must be non-negative");
  if (!v.same_layout(params)) throw StructuralError("direction layout does not match parameters");
  ParamVector out = ParamVector::zeros_like(params);
  for (const auto& x : states) {
    const Eigen::VectorXd jv = jvp_params(spec, params, x, v);
    const ForwardTape tape = forward_tape(spec, params, x);
    backward(spec, params, tape, jv, out.values(), nullptr);
  }
  out.values() *= 2.0 / static_cast<double>(states.size());
  out.values() += damping * v.values();
  return out;
}

AdamState AdamState::for_params(const ParamVector& params, double lr) {
  AdamState s;
  s.first_moment = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(params.size()));
  s.second_moment = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(params.size()));
  s.lr = lr;
  return s;
}

void adam_step(AdamState& state, ParamVector& params, const ParamVector& grad) {
  if (grad.size() != params.size() || static_cast<std::size_t>(state.first_moment.size()) != params.size() ||
      static_cast<std::size_t>(state.second_moment.size()) != params.size()) {
    throw StructuralError("Adam state, parameters and gradient must have the same length");
  }
  const auto& g = grad.values();
  state.step_count += 1;
  state.first_moment = state.beta1 * state.first_moment + (1.0 - state.beta1) * g;
  state.second_moment = state.beta2 * state.second_moment + (1.0 - state.beta2) * g.cwiseProduct(g);
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  params.values().array() -=
      state.lr * (state.first_moment.array() / c1) / ((state.second_moment.array() / c2).sqrt() + state.eps);
}

AdamResult adam_update(const AdamState& state, const ParamVector& params, const ParamVector& grad) {
  AdamResult result{state, params};
  adam_step(result.state, result.params, grad);
  return result;
}

}  // namespace cdadp
