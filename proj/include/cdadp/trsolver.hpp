#pragma once

// Constrained policy step: the linearized problem
//
//   min_d  g'd   s.t.  z + C'd <= 0,  0.5 d'Hd <= delta
//
// solved through its dual in (lambda, nu), with a feasibility test that finds
// the smallest usable delta and a penalty step when even delta_b is too small.
// Vectors live in flat parameter space.

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace cdadp {

// Symmetric positive definite H with products and inverse products.
class MetricOperator {
 public:
  virtual ~MetricOperator() = default;
  virtual Eigen::Index dim() const = 0;
  virtual Eigen::VectorXd apply(const Eigen::VectorXd& v) const = 0;
  virtual Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const = 0;
  // Inner iterations spent by solve() since construction (0 for direct solvers).
  int solve_iterations() const { return solve_iterations_; }

 protected:
  mutable int solve_iterations_ = 0;
};

struct CgOptions {
  double tol = 1e-10;
  int max_iters = 250;
};

struct CgResult {
  Eigen::VectorXd x;
  int iterations = 0;
  double residual = 0.0;  // relative
};

// Throws SolverError when the relative residual stays above tol.
CgResult cg_solve(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& op, const Eigen::VectorXd& rhs,
                  const CgOptions& opts = {});

class DenseMetric final : public MetricOperator {
 public:
  explicit DenseMetric(Eigen::MatrixXd H);
  Eigen::Index dim() const override { return H_.rows(); }
  Eigen::VectorXd apply(const Eigen::VectorXd& v) const override { return H_ * v; }
  Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const override;
  const Eigen::MatrixXd& matrix() const { return H_; }

 private:
  Eigen::MatrixXd H_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
};

// Products from a callback, inverse products by conjugate gradients.
class CgMetric final : public MetricOperator {
 public:
  CgMetric(Eigen::Index dim, std::function<Eigen::VectorXd(const Eigen::VectorXd&)> op, CgOptions opts = {});
  Eigen::Index dim() const override { return dim_; }
  Eigen::VectorXd apply(const Eigen::VectorXd& v) const override { return op_(v); }
  Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const override;

 private:
  Eigen::Index dim_;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> op_;
  CgOptions opts_;
};

enum class MetricSolve { LowRank, Cg };

// H = damping * I + scale * J'J for a stacked output Jacobian J (rows x P).
// LowRank inverts through the rows x rows system
// H^-1 = (I - J'(damping/scale I + JJ')^-1 J) / damping; Cg iterates on H.
class GaussNewtonMetric final : public MetricOperator {
 public:
  GaussNewtonMetric(Eigen::MatrixXd J, double scale, double damping, MetricSolve mode = MetricSolve::LowRank,
                    CgOptions cg = {});
  Eigen::Index dim() const override { return J_.cols(); }
  Eigen::VectorXd apply(const Eigen::VectorXd& v) const override;
  Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const override;

 private:
  Eigen::MatrixXd J_;
  double scale_;
  double damping_;
  MetricSolve mode_;
  CgOptions cg_;
  Eigen::LLT<Eigen::MatrixXd> inner_;
};

inline constexpr double kNormEpsilon = 1e-10;

struct RawConstraint {
  double value = 0.0;
  double bound = 0.0;
  Eigen::VectorXd gradient;
};

struct NormalizedProblem {
  Eigen::VectorXd g;                  // unit objective gradient
  Eigen::MatrixXd C;                  // P x M', unit columns
  Eigen::VectorXd z;                  // M' normalized slacks
  std::vector<std::size_t> kept;      // input index of each column of C
  std::vector<std::size_t> degenerate;  // dropped for a vanishing gradient
  double objective_norm = 0.0;
};

// Throws DegenerateError when the objective gradient itself vanishes.
NormalizedProblem normalize(const Eigen::VectorXd& raw_dJ, const std::vector<RawConstraint>& constraints,
                            double eps = kNormEpsilon);

struct LinearizedStep {
  Eigen::VectorXd g;
  Eigen::MatrixXd C;
  Eigen::VectorXd z;
  const MetricOperator* metric = nullptr;
  double delta_a = 0.0;
  double delta_b = 0.0;

  Eigen::Index constraint_count() const { return C.cols(); }
  void validate() const;
};

struct DualCoefficients {
  double mu = 0.0;       // g'H^-1 g
  Eigen::MatrixXd S;     // C'H^-1 C, symmetrized
  Eigen::VectorXd r;     // C'H^-1 g
  Eigen::VectorXd hinv_g;
  Eigen::MatrixXd hinv_C;
};

DualCoefficients assemble_dual_coefficients(const LinearizedStep& step);

struct DualOptions {
  double tol = 1e-9;     // projected-gradient infinity norm
  int max_iters = 10000;
  double unbounded_norm = 1e12;
};

struct FeasibilityResult {
  double delta_min = 0.0;  // +inf when the linearized constraints are inconsistent
  Eigen::VectorXd nu;
  int iterations = 0;
  double kkt_residual = 0.0;
};

// max_{nu >= 0} -0.5 nu'S nu + z'nu, whose value is the smallest trust region
// admitting a step that satisfies all linearized constraints.
FeasibilityResult solve_feasibility_dual(const Eigen::MatrixXd& S, const Eigen::VectorXd& z,
                                         const DualOptions& opts = {});

struct MainDualResult {
  double lambda = 0.0;
  Eigen::VectorXd nu;
  double value = 0.0;  // dual objective at the optimum
  int iterations = 0;
  double kkt_residual = 0.0;
};

// max_{lambda > 0, nu >= 0} -(mu + nu'S nu + 2 nu'r) / (2 lambda) - lambda delta + nu'z
// with lambda eliminated in closed form. Throws InfeasibleError when delta < delta_min.
MainDualResult solve_main_dual(const DualCoefficients& coeffs, const Eigen::VectorXd& z, double delta,
                               const DualOptions& opts = {});

// -(H^-1 (g + C nu)) / lambda
Eigen::VectorXd primal_step(const DualCoefficients& coeffs, const MainDualResult& dual);

// alpha_t = p_t exp(z_t) / sum_j p_j exp(z_j), p = 5 for violated constraints, else 1.
Eigen::VectorXd recovery_weights(const Eigen::VectorXd& z);

// Step of length sqrt(2 delta_b / mu_p) along -H^-1 g_p with g_p = (1 - eta) g + eta C alpha.
Eigen::VectorXd penalty_recovery_step(const LinearizedStep& step, const DualCoefficients& coeffs,
                                      const Eigen::VectorXd& alpha, double eta);

enum class StepBranch { Feasible, NearFeasible, PenaltyRecovery };
std::string to_string(StepBranch b);

struct StepOutcome {
  StepBranch branch = StepBranch::Feasible;
  Eigen::VectorXd delta_theta;
  double lambda = 0.0;
  Eigen::VectorXd nu;
  double delta_min = 0.0;
  double active_delta = 0.0;
  double metric_half_norm = 0.0;  // 0.5 d'Hd of the returned step
  int dual_iterations = 0;
  int metric_iterations = 0;
};

StepBranch select_branch(double delta_min, double delta_a, double delta_b);

// Branches on delta_min against delta_a and delta_b with strict comparisons.
StepOutcome policy_step(const LinearizedStep& step, double eta, const DualOptions& opts = {});

// One JSON object per step: delta_min, branch, lambda, nu_norm, cg_iterations, metric_half_norm.
std::string diagnostic_json(const StepOutcome& outcome);

}  // namespace cdadp
