#include "cdadp/rollout.hpp"

#include "cdadp/errors.hpp"

#include <cmath>
#include <stdexcept>

namespace cdadp {

namespace {

void check_complete(const Trajectory& traj) {
  if (traj.controls.empty() || traj.states.size() != traj.controls.size() + 1 ||
      traj.utilities.size() != traj.controls.size() || traj.steps.size() != traj.controls.size()) {
    throw StructuralError("trajectory is incomplete");
  }
}

// Propagates an adjoint lambda = dJ/dx_{last+1} back through steps last..0.
// `extra_du` is a direct dependence of J on u_last. Stage utilities are
// added with weight * gamma^i when `stage` is given.
void reverse_sweep(const Trajectory& traj, const Network& policy, std::size_t last, Eigen::VectorXd lambda,
                   const Eigen::VectorXd& extra_du, const ReturnOptions* stage, double weight,
                   Eigen::Ref<Eigen::VectorXd> out) {
  Eigen::VectorXd input_grad;
  for (std::size_t i = last + 1; i-- > 0;) {
    const StepRecord& rec = traj.steps[i];
    Eigen::VectorXd g_u = rec.B.transpose() * lambda;
    Eigen::VectorXd g_x = rec.A.transpose() * lambda;
    if (i == last && extra_du.size() > 0) g_u += weight * extra_du;
    if (stage != nullptr) {
      const double w = weight * std::pow(stage->gamma, static_cast<double>(i));
      g_u += w * rec.dl_du;
      g_x += w * rec.dl_dx;
    }
    // x_0 is fixed, so no input gradient is needed at the first step
    backward(policy.spec, policy.params, rec.policy_tape, g_u, out, i > 0 ? &input_grad : nullptr);
    if (i == 0) break;
    lambda = g_x + input_grad;
  }
}

}  // namespace

double ReturnOptions::terminal_weight(std::size_t horizon) const {
  const double e = static_cast<double>(terminal == TerminalDiscount::PowerN ? horizon : horizon + 1);
  return std::pow(gamma, e);
}

Trajectory rollout(const SystemModel& model, const Network& policy, const Eigen::VectorXd& x0, std::size_t N) {
  if (static_cast<std::size_t>(x0.size()) != model.state_dim()) throw StructuralError("initial state size mismatch");
  if (!model.in_domain(x0)) throw TrajectoryInvalid(0, "initial state outside the model domain");
  Trajectory traj;
  traj.states.reserve(N + 2);
  traj.controls.reserve(N + 1);
  traj.utilities.reserve(N + 1);
  traj.steps.reserve(N + 1);
  traj.states.push_back(x0);
  for (std::size_t i = 0; i <= N; ++i) {
    const Eigen::VectorXd& x = traj.states.back();
    StepRecord rec;
    rec.policy_tape = forward_tape(policy.spec, policy.params, x);
    const Eigen::VectorXd u = rec.policy_tape.output;
    Linearization lin;
    try {
      lin = model.step_jacobians(x, u);
      UtilityEval l = model.utility(x, u);
      rec.dl_dx = std::move(l.dx);
      rec.dl_du = std::move(l.du);
      traj.utilities.push_back(l.value);
      rec.constraints = model.constraints(lin.next, u);
    } catch (const TrajectoryInvalid& e) {
      throw TrajectoryInvalid(i, e.what());
    } catch (const DomainError& e) {
      throw TrajectoryInvalid(i, e.what());
    }
    rec.A = std::move(lin.A);
    rec.B = std::move(lin.B);
    traj.controls.push_back(u);
    traj.steps.push_back(std::move(rec));
    traj.states.push_back(std::move(lin.next));
  }
  return traj;
}

double return_target(const Trajectory& traj, const Network& value, const ReturnOptions& opts) {
  check_complete(traj);
  double G = 0.0;
  double w = 1.0;
  for (double l : traj.utilities) {
    G += w * l;
    w *= opts.gamma;
  }
  const double v_end = forward(value.spec, value.params, traj.states.back())[0];
  return G + opts.terminal_weight(traj.horizon()) * v_end;
}

void accumulate_actor_gradient(const Trajectory& traj, const Network& policy, const Network& value,
                               const ReturnOptions& opts, double weight, Eigen::Ref<Eigen::VectorXd> out) {
  check_complete(traj);
  const std::size_t N = traj.horizon();
  const Eigen::VectorXd dV = grad_input(value.spec, value.params, traj.states.back(), Eigen::VectorXd::Ones(1));
  reverse_sweep(traj, policy, N, weight * opts.terminal_weight(N) * dV, Eigen::VectorXd(), &opts, weight, out);
}

ParamVector actor_gradient(const Trajectory& traj, const Network& policy, const Network& value,
                           const ReturnOptions& opts) {
  ParamVector grad = ParamVector::zeros_like(policy.params);
  accumulate_actor_gradient(traj, policy, value, opts, 1.0, grad.values());
  return grad;
}

ParamVector constraint_gradient(const Trajectory& traj, const Network& policy, std::size_t step, std::size_t tau) {
  check_complete(traj);
  if (step > traj.horizon()) throw std::out_of_range("constraint step beyond the horizon");
  const auto& cons = traj.steps[step].constraints;
  if (tau >= cons.size()) throw std::out_of_range("constraint index out of range");
  ParamVector grad = ParamVector::zeros_like(policy.params);
  reverse_sweep(traj, policy, step, cons[tau].dx, cons[tau].du, nullptr, 1.0, grad.values());
  return grad;
}

std::vector<ConstraintRecord> constraint_gradients(const Trajectory& traj, const Network& policy) {
  check_complete(traj);
  std::vector<ConstraintRecord> records;
  for (std::size_t i = 0; i <= traj.horizon(); ++i) {
    const auto& cons = traj.steps[i].constraints;
    for (std::size_t tau = 0; tau < cons.size(); ++tau) {
      records.push_back({i, tau, cons[tau].value, cons[tau].bound, constraint_gradient(traj, policy, i, tau)});
    }
  }
  return records;
}

}  // namespace cdadp
