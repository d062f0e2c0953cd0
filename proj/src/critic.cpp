#include "cdadp/critic.hpp"

#include "cdadp/errors.hpp"

#include <cmath>

namespace cdadp {

void CriticBatch::validate() const {
  if (states.empty()) throw StructuralError("critic batch is empty");
  if (states.size() != targets.size()) throw StructuralError("critic batch states and targets differ in length");
  for (double g : targets) {
    if (!std::isfinite(g)) throw DomainError("critic target is not finite");
  }
}

double critic_loss(const CriticBatch& batch, const Network& value) {
  batch.validate();
  double acc = 0.0;
  for (std::size_t i = 0; i < batch.states.size(); ++i) {
    const double e = batch.targets[i] - forward(value.spec, value.params, batch.states[i])[0];
    acc += 0.5 * e * e;
  }
  return acc / static_cast<double>(batch.states.size());
}

ParamVector critic_gradient(const CriticBatch& batch, const Network& value) {
  batch.validate();
  ParamVector grad = ParamVector::zeros_like(value.params);
  const double inv_n = 1.0 / static_cast<double>(batch.states.size());
  Eigen::VectorXd up(1);
  for (std::size_t i = 0; i < batch.states.size(); ++i) {
    const ForwardTape tape = forward_tape(value.spec, value.params, batch.states[i]);
    up[0] = -(batch.targets[i] - tape.output[0]) * inv_n;
    backward(value.spec, value.params, tape, up, grad.values(), nullptr);
  }
  return grad;
}

double critic_update(const CriticBatch& batch, Network& value, AdamState& adam, int epochs) {
  if (epochs < 1) throw std::invalid_argument("critic epochs must be at least 1");
  const double before = critic_loss(batch, value);
  for (int e = 0; e < epochs; ++e) adam_step(adam, value.params, critic_gradient(batch, value));
  return before;
}

}  // namespace cdadp
