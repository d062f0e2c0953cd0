#pragma once

// Closed-loop model rollouts under a policy network and the parameter
// gradients that flow back through them.
//
// The sensitivities phi_i = dx_i/dtheta and psi_i = du_i/dtheta obey
//   phi_0 = 0, psi_i = dpi/dx phi_i + dpi/dtheta, phi_{i+1} = A_i phi_i + B_i psi_i.
// They are never formed densely: every gradient here is the adjoint of that
// recursion, accumulated backwards along the recorded trajectory.

#include "cdadp/dynamics.hpp"
#include "cdadp/netcore.hpp"

#include <vector>

namespace cdadp {

enum class TerminalDiscount {
  PowerN,         // gamma^N on V(x_{N+1}), as the return is usually written
  PowerNPlusOne,  // gamma^(N+1), the exact tail of the discounted sum
};

struct ReturnOptions {
  double gamma = 0.98;
  TerminalDiscount terminal = TerminalDiscount::PowerN;

  double terminal_weight(std::size_t horizon) const;
};

struct StepRecord {
  Eigen::MatrixXd A;  // d x_{i+1} / d x_i
  Eigen::MatrixXd B;  // d x_{i+1} / d u_i
  Eigen::VectorXd dl_dx;
  Eigen::VectorXd dl_du;
  ForwardTape policy_tape;
  std::vector<ConstraintEval> constraints;  // on x_{i+1}, using u_i
};

// N+2 states x_0..x_{N+1}, N+1 controls and utilities, one record per step.
struct Trajectory {
  std::vector<Eigen::VectorXd> states;
  std::vector<Eigen::VectorXd> controls;
  std::vector<double> utilities;
  std::vector<StepRecord> steps;

  std::size_t horizon() const { return controls.empty() ? 0 : controls.size() - 1; }
};

Trajectory rollout(const SystemModel& model, const Network& policy, const Eigen::VectorXd& x0, std::size_t N);

double return_target(const Trajectory& traj, const Network& value, const ReturnOptions& opts);

// d/dtheta of sum_i gamma^i l(x_i, u_i) + w_N V(x_{N+1}).
ParamVector actor_gradient(const Trajectory& traj, const Network& policy, const Network& value,
                           const ReturnOptions& opts);

// Same, accumulated into an existing buffer (scaled by `weight`).
void accumulate_actor_gradient(const Trajectory& traj, const Network& policy, const Network& value,
                               const ReturnOptions& opts, double weight, Eigen::Ref<Eigen::VectorXd> out);

struct ConstraintRecord {
  std::size_t step = 0;        // i: the constraint acts on x_{i+1}
  std::size_t constraint = 0;  // tau
  double value = 0.0;
  double bound = 0.0;
  ParamVector gradient;
};

// Gradient of constraint `tau` on x_{i+1} with respect to the policy parameters.
ParamVector constraint_gradient(const Trajectory& traj, const Network& policy, std::size_t step, std::size_t tau);

// All (N+1) * constraint_count records of a trajectory.
std::vector<ConstraintRecord> constraint_gradients(const Trajectory& traj, const Network& policy);

}  // namespace cdadp
