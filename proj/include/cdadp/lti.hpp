#pragma once

// Linear time-invariant model with quadratic utility x'Qx + u'Ru. Serves as
// an exactly solvable reference for the training path.

#include "cdadp/dynamics.hpp"

#include <optional>

namespace cdadp {

// Box constraint on one state coordinate: sign * x[index] <= bound.
struct StateBound {
  std::size_t index = 0;
  double sign = 1.0;
  double bound = 0.0;
};

class LtiModel final : public SystemModel {
 public:
  LtiModel(Eigen::MatrixXd A, Eigen::MatrixXd B, Eigen::MatrixXd Q, Eigen::MatrixXd R,
           std::vector<StateBound> bounds = {});

  const Eigen::MatrixXd& A() const { return A_; }
  const Eigen::MatrixXd& B() const { return B_; }
  const Eigen::MatrixXd& Q() const { return Q_; }
  const Eigen::MatrixXd& R() const { return R_; }

  std::size_t state_dim() const override { return static_cast<std::size_t>(A_.rows()); }
  std::size_t control_dim() const override { return static_cast<std::size_t>(B_.cols()); }
  std::size_t constraint_count() const override { return bounds_.size(); }
  std::vector<std::string> state_names() const override;
  std::vector<std::string> control_names() const override;
  std::vector<std::string> constraint_names() const override;

  Eigen::VectorXd step(const Eigen::VectorXd& x, const Eigen::VectorXd& u) const override;
  Linearization step_jacobians(const Eigen::VectorXd& x, const Eigen::VectorXd& u) const override;
  UtilityEval utility(const Eigen::VectorXd& x, const Eigen::VectorXd& u) const override;
  std::vector<ConstraintEval> constraints(const Eigen::VectorXd& x_next,
                                          const Eigen::VectorXd& u_applied) const override;
  bool in_domain(const Eigen::VectorXd& x) const override;

 private:
  void check(const Eigen::VectorXd& x, const Eigen::VectorXd& u) const;

  Eigen::MatrixXd A_, B_, Q_, R_;
  std::vector<StateBound> bounds_;
};

LtiModel lti_model(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, const Eigen::MatrixXd& Q,
                   const Eigen::MatrixXd& R, std::vector<StateBound> bounds = {});

// Double integrator with dt = 0.1, Q = I, R = 1.
LtiModel double_integrator();

struct RiccatiSolution {
  Eigen::MatrixXd P;  // value x'Px of the optimal policy
  Eigen::MatrixXd K;  // optimal control u = -Kx
  int iterations = 0;
};

// Discounted discrete algebraic Riccati equation by fixed-point recursion:
// P = Q + g A'PA - g^2 A'PB (R + g B'PB)^-1 B'PA.
RiccatiSolution solve_discounted_riccati(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                                         const Eigen::MatrixXd& Q, const Eigen::MatrixXd& R, double gamma,
                                         double tol = 1e-13, int max_iters = 100000);

}  // namespace cdadp
