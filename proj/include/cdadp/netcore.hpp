#pragma once

// Dense feedforward networks with hand-written differentiation.
//
// Parameters of a network live in one flat vector. Layer l owns a row-major
// (out x in) weight block followed by its bias, in layer order. All routines
// take the network description and the parameters separately so the same
// parameters can be shared read-only across threads.

#include <Eigen/Dense>

#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace cdadp {

enum class Activation { Elu, Tanh, Linear };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& name);

struct LayerShape {
  std::size_t rows = 0;    // fan-out
  std::size_t cols = 0;    // fan-in
  std::size_t offset = 0;  // index of the first weight in the flat vector

  std::size_t weight_count() const { return rows * cols; }
  std::size_t param_count() const { return rows * cols + rows; }
  bool operator==(const LayerShape&) const = default;
};

struct ParamLayout {
  std::vector<LayerShape> layers;
  std::size_t total = 0;

  bool operator==(const ParamLayout&) const = default;
};

struct NetworkSpec {
  std::size_t input_dim = 0;
  std::size_t hidden_layers = 0;
  std::size_t hidden_width = 0;
  std::size_t output_dim = 0;
  // One entry per affine layer: hidden_layers hidden activations, then the output activation.
  std::vector<Activation> activations;
  std::vector<double> output_scale;

  static NetworkSpec mlp(std::size_t input_dim, std::size_t hidden_layers, std::size_t hidden_width,
                         std::size_t output_dim, Activation hidden, Activation output,
                         std::vector<double> output_scale = {});

  void validate() const;
  std::size_t layer_count() const { return hidden_layers + 1; }
  std::size_t param_count() const;
  ParamLayout layout() const;

  bool operator==(const NetworkSpec&) const = default;
};

class ParamVector {
 public:
  ParamVector() = default;
  explicit ParamVector(std::shared_ptr<const ParamLayout> layout);
  ParamVector(std::shared_ptr<const ParamLayout> layout, Eigen::VectorXd values);

  static ParamVector zeros(const NetworkSpec& spec);
  static ParamVector zeros_like(const ParamVector& other);
  ParamVector with_values(Eigen::VectorXd values) const;

  std::size_t size() const { return static_cast<std::size_t>(values_.size()); }
  const Eigen::VectorXd& values() const { return values_; }
  Eigen::VectorXd& values() { return values_; }
  const ParamLayout& layout() const { return *layout_; }
  const std::shared_ptr<const ParamLayout>& layout_ptr() const { return layout_; }
  bool same_layout(const ParamVector& other) const;

  using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const RowMatrix> weights(std::size_t layer) const;
  Eigen::Map<RowMatrix> weights(std::size_t layer);
  Eigen::Map<const Eigen::VectorXd> bias(std::size_t layer) const;
  Eigen::Map<Eigen::VectorXd> bias(std::size_t layer);

 private:
  std::shared_ptr<const ParamLayout> layout_;
  Eigen::VectorXd values_;
};

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and bias of a layer.
ParamVector init_params(const NetworkSpec& spec, std::mt19937_64& rng);

struct Network {
  NetworkSpec spec;
  ParamVector params;
};

// Intermediate values of one forward pass, kept for reverse-mode sweeps.
struct ForwardTape {
  std::vector<Eigen::VectorXd> inputs;  // input to layer l
  std::vector<Eigen::VectorXd> pre;     // pre-activation of layer l
  Eigen::VectorXd output;               // scaled network output
};

Eigen::VectorXd forward(const NetworkSpec& spec, const ParamVector& params, const Eigen::VectorXd& x);
ForwardTape forward_tape(const NetworkSpec& spec, const ParamVector& params, const Eigen::VectorXd& x);

// Reverse sweep over a recorded tape. Adds J_params^T * upstream into
// `param_grad` and, when `input_grad` is non-null, writes J_x^T * upstream.
void backward(const NetworkSpec& spec, const ParamVector& params, const ForwardTape& tape,
              const Eigen::VectorXd& upstream, Eigen::Ref<Eigen::VectorXd> param_grad,
              Eigen::VectorXd* input_grad);

ParamVector grad_params(const NetworkSpec& spec, const ParamVector& params, const Eigen::VectorXd& x,
                        const Eigen::VectorXd& upstream);
Eigen::VectorXd grad_input(const NetworkSpec& spec, const ParamVector& params, const Eigen::VectorXd& x,
                           const Eigen::VectorXd& upstream);

// Directional derivative of the output along a parameter direction.
Eigen::VectorXd jvp_params(const NetworkSpec& spec, const ParamVector& params, const Eigen::VectorXd& x,
                           const ParamVector& v);

// Dense output_dim x param_count Jacobian, one reverse sweep per output.
Eigen::MatrixXd output_jacobian(const NetworkSpec& spec, const ParamVector& params, const Eigen::VectorXd& x);

// (2/|states|) * sum_x J(x)^T J(x) v + damping * v. This is the Hessian of the
// mean squared output difference to a frozen copy, evaluated at the copy.
ParamVector gn_metric_vp(const NetworkSpec& spec, const ParamVector& params,
                         std::span<const Eigen::VectorXd> states, const ParamVector& v, double damping);

struct AdamState {
  Eigen::VectorXd first_moment;
  Eigen::VectorXd second_moment;
  std::uint64_t step_count = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState for_params(const ParamVector& params, double lr);
};

struct AdamResult {
  AdamState state;
  ParamVector params;
};

AdamResult adam_update(const AdamState& state, const ParamVector& params, const ParamVector& grad);
// In-place variant used by the training loop.
void adam_step(AdamState& state, ParamVector& params, const ParamVector& grad);

}  // namespace cdadp
