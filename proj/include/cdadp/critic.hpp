#pragma once

// Value network fitting against fixed return targets (semi-gradient TD).

#include "cdadp/netcore.hpp"

#include <vector>

namespace cdadp {

struct CriticBatch {
  std::vector<Eigen::VectorXd> states;
  std::vector<double> targets;  // constants during the update

  void validate() const;
};

// mean over the batch of 0.5 * (G - V(x))^2
double critic_loss(const CriticBatch& batch, const Network& value);

// Exact gradient of critic_loss: mean of -(G - V(x)) dV/dw.
ParamVector critic_gradient(const CriticBatch& batch, const Network& value);

// `epochs` Adam steps on the same batch; returns the loss before the first step.
double critic_update(const CriticBatch& batch, Network& value, AdamState& adam, int epochs = 1);

}  // namespace cdadp
