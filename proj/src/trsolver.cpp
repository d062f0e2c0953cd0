#include "cdadp/trsolver.hpp"

#include "cdadp/errors.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <limits>

namespace cdadp {

namespace {

struct Eval {
  double f = 0.0;
  Eigen::VectorXd grad;
  Eigen::MatrixXd hess;
};

using Objective = std::function<Eval(const Eigen::VectorXd&)>;

struct BoxResult {
  Eigen::VectorXd x;
  Eval at;
  int iterations = 0;
  double pg = 0.0;
  bool unbounded = false;
};

double projected_gradient_norm(const Eigen::VectorXd& x, const Eigen::VectorXd& g) {
  return (x - (x - g).cwiseMax(0.0)).lpNorm<Eigen::Infinity>();
}

// Projected Newton on {x >= 0}: Newton steps on the free variables, scaled
// gradient steps on the epsilon-active ones, Armijo backtracking along the
// projection arc.
BoxResult minimize_nonneg(const Objective& obj, Eigen::VectorXd x, const DualOptions& opts) {
  BoxResult res;
  x = x.cwiseMax(0.0);
  Eval e = obj(x);
  const Eigen::Index n = x.size();
  int it = 0;
  for (; it < opts.max_iters; ++it) {
    res.pg = projected_gradient_norm(x, e.grad);
    if (res.pg <= opts.tol) break;
    if (!std::isfinite(e.f) || x.norm() > opts.unbounded_norm) {
      res.unbounded = true;
      break;
    }
    const double eps = std::min(1e-6, res.pg);
    std::vector<Eigen::Index> free;
    Eigen::VectorXd d = Eigen::VectorXd::Zero(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (x[i] <= eps && e.grad[i] > 0.0) {
        d[i] = -e.grad[i] / std::max(e.hess(i, i), 1e-12);
      } else {
        free.push_back(i);
      }
    }
    if (!free.empty()) {
      const auto k = static_cast<Eigen::Index>(free.size());
      Eigen::MatrixXd Hf(k, k);
      Eigen::VectorXd gf(k);
      for (Eigen::Index a = 0; a < k; ++a) {
        gf[a] = e.grad[free[a]];
        for (Eigen::Index b = 0; b < k; ++b) Hf(a, b) = e.hess(free[a], free[b]);
      }
      const double ridge = 1e-14 * std::max(1.0, Hf.diagonal().cwiseAbs().maxCoeff());
      Hf.diagonal().array() += ridge;
      Eigen::VectorXd df = -Hf.ldlt().solve(gf);
      if (!df.allFinite() || gf.dot(df) >= 0.0) df = -gf;
      for (Eigen::Index a = 0; a < k; ++a) d[free[a]] = df[a];
    }

    bool accepted = false;
    Eigen::VectorXd xn;
    Eval en;
    for (double t = 1.0; t > 1e-30; t *= 0.5) {
      xn = (x + t * d).cwiseMax(0.0);
      en = obj(xn);
      const double predicted = e.grad.dot(xn - x);
      if (std::isfinite(en.f) && en.f <= e.f + 1e-4 * predicted && predicted < 0.0) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      // Newton direction failed; fall back to a projected gradient arc.
      d = -e.grad;
      for (double t = 1.0; t > 1e-30; t *= 0.5) {
        xn = (x + t * d).cwiseMax(0.0);
        en = obj(xn);
        const double predicted = e.grad.dot(xn - x);
        if (std::isfinite(en.f) && en.f <= e.f + 1e-4 * predicted && predicted < 0.0) {
          accepted = true;
          break;
        }
      }
    }
    if (!accepted) break;  // no representable decrease left
    x = std::move(xn);
    e = std::move(en);
  }
  res.pg = projected_gradient_norm(x, e.grad);
  if (!res.unbounded && (x.norm() > opts.unbounded_norm || !std::isfinite(e.f))) res.unbounded = true;
  res.x = std::move(x);
  res.at = std::move(e);
  res.iterations = it;
  return res;
}

void check_converged(const BoxResult& r, const DualOptions& opts, const char* what) {
  // Round-off can stall the line search a little above tol; anything far above is a failure.
  const double scale = 1.0 + r.at.grad.lpNorm<Eigen::Infinity>();
  if (r.pg > std::max(opts.tol, 1e-7 * scale)) throw SolverError(what, r.pg, r.iterations);
}

}  // namespace

CgResult cg_solve(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& op, const Eigen::VectorXd& rhs,
                  const CgOptions& opts) {
  CgResult res;
  res.x = Eigen::VectorXd::Zero(rhs.size());
  const double bnorm = rhs.norm();
  if (bnorm == 0.0) return res;
  Eigen::VectorXd r = rhs;
  Eigen::VectorXd p = r;
  double rr = r.squaredNorm();
  for (int it = 1; it <= opts.max_iters; ++it) {
    const Eigen::VectorXd Ap = op(p);
    const double pAp = p.dot(Ap);
    if (!(pAp > 0.0)) throw SolverError("conjugate gradient met a non-positive curvature", std::sqrt(rr) / bnorm, it);
    const double alpha = rr / pAp;
    res.x += alpha * p;
    r -= alpha * Ap;
    const double rr_new = r.squaredNorm();
    res.iterations = it;
    res.residual = std::sqrt(rr_new) / bnorm;
    if (res.residual <= opts.tol) return res;
    p = r + (rr_new / rr) * p;
    rr = rr_new;
  }
  throw SolverError("conjugate gradient did not converge", res.residual, res.iterations);
}

DenseMetric::DenseMetric(Eigen::MatrixXd H) : H_(std::move(H)), llt_(H_) {
  if (H_.rows() != H_.cols()) throw StructuralError("metric matrix must be square");
  if (llt_.info() != Eigen::Success) throw DomainError("metric matrix is not positive definite");
}

Eigen::VectorXd DenseMetric::solve(const Eigen::VectorXd& rhs) const { return llt_.solve(rhs); }

CgMetric::CgMetric(Eigen::Index dim, std::function<Eigen::VectorXd(const Eigen::VectorXd&)> op, CgOptions opts)
    : dim_(dim), op_(std::move(op)), opts_(opts) {}

Eigen::VectorXd CgMetric::solve(const Eigen::VectorXd& rhs) const {
  CgResult r = cg_solve(op_, rhs, opts_);
  solve_iterations_ += r.iterations;
  return std::move(r.x);
}

GaussNewtonMetric::GaussNewtonMetric(Eigen::MatrixXd J, double scale, double damping, MetricSolve mode, CgOptions cg)
    : J_(std::move(J)), scale_(scale), damping_(damping), mode_(mode), cg_(cg) {
  if (!(damping_ > 0.0)) throw std::invalid_argument("metric damping must be positive");
  if (!(scale_ >= 0.0)) throw std::invalid_argument("metric scale must be non-negative");
  if (mode_ == MetricSolve::LowRank) {
    Eigen::MatrixXd K = J_ * J_.transpose();
    K.diagonal().array() += damping_ / std::max(scale_, std::numeric_limits<double>::min());
    inner_.compute(K);
    if (inner_.info() != Eigen::Success) throw SolverError("low-rank metric factorization failed", 0.0, 0);
  }
}

Eigen::VectorXd GaussNewtonMetric::apply(const Eigen::VectorXd& v) const {
  return damping_ * v + scale_ * (J_.transpose() * (J_ * v));
}

Eigen::VectorXd GaussNewtonMetric::solve(const Eigen::VectorXd& rhs) const {
  if (mode_ == MetricSolve::LowRank) {
    if (scale_ == 0.0) return rhs / damping_;
    return (rhs - J_.transpose() * inner_.solve(J_ * rhs)) / damping_;
  }
  CgResult r = cg_solve([this](const Eigen::VectorXd& v) { return apply(v); }, rhs, cg_);
  solve_iterations_ += r.iterations;
  return std::move(r.x);
}

NormalizedProblem normalize(const Eigen::VectorXd& raw_dJ, const std::vector<RawConstraint>& constraints,
                            double eps) {
  NormalizedProblem out;
  out.objective_norm = raw_dJ.norm();
  if (!(out.objective_norm >= eps)) throw DegenerateError("objective gradient vanished");
  out.g = raw_dJ / out.objective_norm;
  std::vector<Eigen::VectorXd> cols;
  std::vector<double> zs;
  for (std::size_t i = 0; i < constraints.size(); ++i) {
    const auto& c = constraints[i];
    if (c.gradient.size() != raw_dJ.size()) throw StructuralError("constraint gradient size mismatch");
    const double n = c.gradient.norm();
    if (!(n >= eps)) {
      out.degenerate.push_back(i);
      continue;
    }
    cols.push_back(c.gradient / n);
    zs.push_back((c.value - c.bound) / n);
    out.kept.push_back(i);
  }
  out.C.resize(raw_dJ.size(), static_cast<Eigen::Index>(cols.size()));
  out.z.resize(static_cast<Eigen::Index>(zs.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) {
    out.C.col(static_cast<Eigen::Index>(j)) = cols[j];
    out.z[static_cast<Eigen::Index>(j)] = zs[j];
  }
  return out;
}

void LinearizedStep::validate() const {
  if (metric == nullptr) throw StructuralError("linearized step has no metric");
  if (metric->dim() != g.size() || C.rows() != g.size() || C.cols() != z.size()) {
    throw StructuralError("linearized step dimensions disagree");
  }
  if (!(delta_a > 0.0) || !(delta_b > delta_a)) throw std::invalid_argument("need 0 < delta_a < delta_b");
  if (!g.allFinite() || !C.allFinite() || !z.allFinite()) throw DomainError("linearized step is not finite");
}

DualCoefficients assemble_dual_coefficients(const LinearizedStep& step) {
  step.validate();
  DualCoefficients d;
  d.hinv_g = step.metric->solve(step.g);
  d.mu = step.g.dot(d.hinv_g);
  const Eigen::Index M = step.C.cols();
  d.hinv_C.resize(step.g.size(), M);
  for (Eigen::Index j = 0; j < M; ++j) d.hinv_C.col(j) = step.metric->solve(step.C.col(j));
  const Eigen::MatrixXd S = step.C.transpose() * d.hinv_C;
  d.S = 0.5 * (S + S.transpose());
  d.r = step.C.transpose() * d.hinv_g;
  if (!(d.mu > 0.0)) throw DomainError("g'H^-1 g must be positive");
  return d;
}

FeasibilityResult solve_feasibility_dual(const Eigen::MatrixXd& S, const Eigen::VectorXd& z, const DualOptions& opts) {
  if (S.rows() != z.size() || S.cols() != z.size()) throw StructuralError("feasibility dual dimensions disagree");
  FeasibilityResult out;
  out.nu = Eigen::VectorXd::Zero(z.size());
  if (z.size() == 0) return out;
  Objective q = [&](const Eigen::VectorXd& nu) {
    Eval e;
    const Eigen::VectorXd Snu = S * nu;
    e.f = 0.5 * nu.dot(Snu) - z.dot(nu);
    e.grad = Snu - z;
    e.hess = S;
    return e;
  };
  const BoxResult r = minimize_nonneg(q, Eigen::VectorXd::Zero(z.size()), opts);
  out.iterations = r.iterations;
  out.kkt_residual = r.pg;
  if (r.unbounded) {
    out.delta_min = std::numeric_limits<double>::infinity();
    out.nu = r.x;
    return out;
  }
  check_converged(r, opts, "feasibility dual did not converge");
  out.nu = r.x;
  out.delta_min = std::max(0.0, -r.at.f);
  return out;
}

MainDualResult solve_main_dual(const DualCoefficients& coeffs, const Eigen::VectorXd& z, double delta,
                               const DualOptions& opts) {
  if (!(delta > 0.0)) throw std::invalid_argument("trust region radius must be positive");
  const Eigen::Index M = z.size();
  if (coeffs.S.rows() != M || coeffs.r.size() != M) throw StructuralError("main dual dimensions disagree");
  MainDualResult out;
  if (M == 0) {
    out.lambda = std::sqrt(coeffs.mu / (2.0 * delta));
    out.nu = Eigen::VectorXd();
    out.value = -std::sqrt(2.0 * delta * coeffs.mu);
    return out;
  }
  const double root2d = std::sqrt(2.0 * delta);
  const double a_floor = 1e-300;
  Objective f = [&](const Eigen::VectorXd& nu) {
    Eval e;
    const Eigen::VectorXd w = coeffs.S * nu + coeffs.r;
    const double a = std::max(coeffs.mu + nu.dot(coeffs.S * nu) + 2.0 * nu.dot(coeffs.r), a_floor);
    const double sa = std::sqrt(a);
    e.f = root2d * sa - z.dot(nu);
    e.grad = root2d * w / sa - z;
    e.hess = root2d * (coeffs.S / sa - w * w.transpose() / (a * sa));
    return e;
  };
  const BoxResult r = minimize_nonneg(f, Eigen::VectorXd::Zero(M), opts);
  if (r.unbounded) throw InfeasibleError("linearized constraints cannot be met inside the trust region");
  check_converged(r, opts, "main dual did not converge");
  out.nu = r.x;
  const double a = std::max(coeffs.mu + out.nu.dot(coeffs.S * out.nu) + 2.0 * out.nu.dot(coeffs.r), a_floor);
  out.lambda = std::sqrt(a / (2.0 * delta));
  out.value = -r.at.f;
  out.iterations = r.iterations;
  out.kkt_residual = r.pg;
  return out;
}

Eigen::VectorXd primal_step(const DualCoefficients& coeffs, const MainDualResult& dual) {
  Eigen::VectorXd v = coeffs.hinv_g;
  if (dual.nu.size() > 0) v += coeffs.hinv_C * dual.nu;
  return -v / dual.lambda;
}

Eigen::VectorXd recovery_weights(const Eigen::VectorXd& z) {
  if (z.size() == 0) throw StructuralError("recovery weights need at least one constraint");
  const double zmax = z.maxCoeff();
  Eigen::VectorXd w(z.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) w[i] = (z[i] > 0.0 ? 5.0 : 1.0) * std::exp(z[i] - zmax);
  return w / w.sum();
}

Eigen::VectorXd penalty_recovery_step(const LinearizedStep& step, const DualCoefficients& coeffs,
                                      const Eigen::VectorXd& alpha, double eta) {
  if (!(eta >= 0.0 && eta <= 1.0)) throw std::invalid_argument("eta must lie in [0, 1]");
  if (alpha.size() != step.C.cols()) throw StructuralError("recovery weights size mismatch");
  Eigen::VectorXd gp = (1.0 - eta) * step.g;
  Eigen::VectorXd hinv_gp = (1.0 - eta) * coeffs.hinv_g;
  if (alpha.size() > 0) {
    gp += eta * (step.C * alpha);
    hinv_gp += eta * (coeffs.hinv_C * alpha);
  }
  const double mu_p = gp.dot(hinv_gp);
  if (!(gp.norm() >= kNormEpsilon) || !(mu_p > 0.0)) throw DegenerateError("penalty gradient vanished");
  return -std::sqrt(2.0 * step.delta_b / mu_p) * hinv_gp;
}

std::string to_string(StepBranch b) {
  switch (b) {
    case StepBranch::Feasible: return "feasible";
    case StepBranch::NearFeasible: return "near_feasible";
    case StepBranch::PenaltyRecovery: return "recovery";
  }
  return "unknown";
}

StepBranch select_branch(double delta_min, double delta_a, double delta_b) {
  if (delta_min < delta_a) return StepBranch::Feasible;
  if (delta_min < delta_b) return StepBranch::NearFeasible;
  return StepBranch::PenaltyRecovery;
}

StepOutcome policy_step(const LinearizedStep& step, double eta, const DualOptions& opts) {
  const int iters_before = step.metric != nullptr ? step.metric->solve_iterations() : 0;
  const DualCoefficients coeffs = assemble_dual_coefficients(step);
  StepOutcome out;
  const FeasibilityResult feas = solve_feasibility_dual(coeffs.S, step.z, opts);
  out.delta_min = feas.delta_min;
  out.dual_iterations = feas.iterations;
  out.branch = select_branch(out.delta_min, step.delta_a, step.delta_b);
  while (out.branch != StepBranch::PenaltyRecovery) {
    out.active_delta = out.branch == StepBranch::Feasible ? step.delta_a : step.delta_b;
    try {
      const MainDualResult dual = solve_main_dual(coeffs, step.z, out.active_delta, opts);
      out.lambda = dual.lambda;
      out.nu = dual.nu;
      out.dual_iterations += dual.iterations;
      out.delta_theta = primal_step(coeffs, dual);
      break;
    } catch (const InfeasibleError&) {
      // delta_min sat within round-off of the radius; fall through to the next branch
      out.branch = out.branch == StepBranch::Feasible ? StepBranch::NearFeasible : StepBranch::PenaltyRecovery;
    }
  }
  if (out.branch == StepBranch::PenaltyRecovery) {
    out.active_delta = step.delta_b;
    out.nu = Eigen::VectorXd::Zero(step.z.size());
    out.delta_theta = penalty_recovery_step(step, coeffs, recovery_weights(step.z), eta);
  }
  out.metric_half_norm = 0.5 * out.delta_theta.dot(step.metric->apply(out.delta_theta));
  out.metric_iterations = step.metric->solve_iterations() - iters_before;
  return out;
}

std::string diagnostic_json(const StepOutcome& o) {
  nlohmann::json j;
  j["delta_min"] = std::isfinite(o.delta_min) ? nlohmann::json(o.delta_min) : nlohmann::json("inf");
  j["branch"] = to_string(o.branch);
  j["lambda"] = o.lambda;
  j["nu_norm"] = o.nu.size() > 0 ? o.nu.norm() : 0.0;
  j["cg_iterations"] = o.metric_iterations;
  j["metric_half_norm"] = o.metric_half_norm;
  j["active_delta"] = o.active_delta;
  return j.dump();
}

}  // namespace cdadp
