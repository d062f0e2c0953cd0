#include "cdadp/lti.hpp"

#include "cdadp/errors.hpp"

#include <string>

namespace cdadp {

LtiModel::LtiModel(Eigen::MatrixXd A, Eigen::MatrixXd B, Eigen::MatrixXd Q, Eigen::MatrixXd R,
                   std::vector<StateBound> bounds)
    : A_(std::move(A)), B_(std::move(B)), Q_(std::move(Q)), R_(std::move(R)), bounds_(std::move(bounds)) {
  const auto n = A_.rows();
  if (A_.cols() != n || B_.rows() != n || Q_.rows() != n || Q_.cols() != n || R_.rows() != B_.cols() ||
      R_.cols() != B_.cols() || n == 0 || B_.cols() == 0) {
    throw StructuralError("LTI matrices have inconsistent dimensions");
  }
  for (const auto& b : bounds_) {
    if (b.index >= static_cast<std::size_t>(n)) throw StructuralError("state bound index out of range");
  }
}

std::vector<std::string> LtiModel::state_names() const {
  std::vector<std::string> names;
  for (Eigen::Index i = 0; i < A_.rows(); ++i) names.push_back("x" + std::to_string(i));
  return names;
}

std::vector<std::string> LtiModel::control_names() const {
  std::vector<std::string> names;
  for (Eigen::Index i = 0; i < B_.cols(); ++i) names.push_back("u" + std::to_string(i));
  return names;
}

std::vector<std::string> LtiModel::constraint_names() const {
  std::vector<std::string> names;
  for (const auto& b : bounds_) names.push_back((b.sign < 0 ? "min_x" : "max_x") + std::to_string(b.index));
  return names;
}

void LtiModel::check(const Eigen::VectorXd& x, const Eigen::VectorXd& u) const {
  if (x.size() != A_.rows() || u.size() != B_.cols()) throw StructuralError("LTI state/control size mismatch");
}

Eigen::VectorXd LtiModel::step(const Eigen::VectorXd& x, const Eigen::VectorXd& u) const {
  check(x, u);
  return A_ * x + B_ * u;
}

Linearization LtiModel::step_jacobians(const Eigen::VectorXd& x, const Eigen::VectorXd& u) const {
  return {step(x, u), A_, B_};
}

UtilityEval LtiModel::utility(const Eigen::VectorXd& x, const Eigen::VectorXd& u) const {
  check(x, u);
  UtilityEval e;
  e.value = x.dot(Q_ * x) + u.dot(R_ * u);
  e.dx = (Q_ + Q_.transpose()) * x;
  e.du = (R_ + R_.transpose()) * u;
  return e;
}

std::vector<ConstraintEval> LtiModel::constraints(const Eigen::VectorXd& x_next,
                                                  const Eigen::VectorXd& u_applied) const {
  check(x_next, u_applied);
  std::vector<ConstraintEval> out;
  out.reserve(bounds_.size());
  for (const auto& b : bounds_) {
    ConstraintEval c;
    c.value = b.sign * x_next[static_cast<Eigen::Index>(b.index)];
    c.bound = b.bound;
    c.dx = Eigen::VectorXd::Zero(A_.rows());
    c.dx[static_cast<Eigen::Index>(b.index)] = b.sign;
    c.du = Eigen::VectorXd::Zero(B_.cols());
    out.push_back(std::move(c));
  }
  return out;
}

bool LtiModel::in_domain(const Eigen::VectorXd& x) const { return x.size() == A_.rows() && x.allFinite(); }

LtiModel lti_model(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, const Eigen::MatrixXd& Q,
                   const Eigen::MatrixXd& R, std::vector<StateBound> bounds) {
  return {A, B, Q, R, std::move(bounds)};
}

LtiModel double_integrator() {
  Eigen::MatrixXd A(2, 2);
  A << 1.0, 0.1, 0.0, 1.0;
  Eigen::MatrixXd B(2, 1);
  B << 0.0, 0.1;
  return {A, B, Eigen::MatrixXd::Identity(2, 2), Eigen::MatrixXd::Identity(1, 1)};
}

RiccatiSolution solve_discounted_riccati(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                                         const Eigen::MatrixXd& Q, const Eigen::MatrixXd& R, double gamma,
                                         double tol, int max_iters) {
  RiccatiSolution sol;
  sol.P = Q;
  for (int it = 1; it <= max_iters; ++it) {
    const Eigen::MatrixXd G = R + gamma * B.transpose() * sol.P * B;
    const Eigen::MatrixXd K = gamma * G.ldlt().solve(B.transpose() * sol.P * A);
    Eigen::MatrixXd next = Q + gamma * A.transpose() * sol.P * A - gamma * A.transpose() * sol.P * B * K;
    next = 0.5 * (next + next.transpose()).eval();
    const double change = (next - sol.P).cwiseAbs().maxCoeff();
    sol.P = std::move(next);
    sol.K = K;
    sol.iterations = it;
    if (change <= tol * (1.0 + sol.P.cwiseAbs().maxCoeff())) {
      const Eigen::MatrixXd Gf = R + gamma * B.transpose() * sol.P * B;
      sol.K = gamma * Gf.ldlt().solve(B.transpose() * sol.P * A);
      return sol;
    }
  }
  throw SolverError("Riccati recursion did not converge", 0.0, max_iters);
}

}  // namespace cdadp
