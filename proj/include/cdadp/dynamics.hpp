#pragma once

// Differentiable discrete-time system models.

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace cdadp {

struct Linearization {
  Eigen::VectorXd next;
  Eigen::MatrixXd A;  // d next / d x
  Eigen::MatrixXd B;  // d next / d u
};

struct UtilityEval {
  double value = 0.0;
  Eigen::VectorXd dx;
  Eigen::VectorXd du;
};

// One state constraint `value <= bound`, evaluated at a successor state. `du`
// is the dependence on the control that produced that state.
struct ConstraintEval {
  double value = 0.0;
  double bound = 0.0;
  Eigen::VectorXd dx;
  Eigen::VectorXd du;

  double excess() const { return value - bound; }
};

class SystemModel {
 public:
  virtual ~SystemModel() = default;

  virtual std::size_t state_dim() const = 0;
  virtual std::size_t control_dim() const = 0;
  virtual std::size_t constraint_count() const = 0;

  virtual std::vector<std::string> state_names() const = 0;
  virtual std::vector<std::string> control_names() const = 0;
  virtual std::vector<std::string> constraint_names() const = 0;

  // Throws TrajectoryInvalid (step 0) when the transition leaves the model domain.
  virtual Eigen::VectorXd step(const Eigen::VectorXd& x, const Eigen::VectorXd& u) const = 0;
  virtual Linearization step_jacobians(const Eigen::VectorXd& x, const Eigen::VectorXd& u) const = 0;
  virtual UtilityEval utility(const Eigen::VectorXd& x, const Eigen::VectorXd& u) const = 0;
  virtual std::vector<ConstraintEval> constraints(const Eigen::VectorXd& x_next,
                                                  const Eigen::VectorXd& u_applied) const = 0;
  virtual bool in_domain(const Eigen::VectorXd& x) const = 0;
};

}  // namespace cdadp
