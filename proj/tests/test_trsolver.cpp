#include "cdadp/errors.hpp"
#include "cdadp/trsolver.hpp"
#include "doctest.h"
#include "qcqp_oracle.hpp"
#include "test_support.hpp"

#include <nlohmann/json.hpp>

using namespace cdadp;
using namespace testing_support;

namespace {

struct Instance {
  Eigen::MatrixXd H;
  Eigen::VectorXd g;
  Eigen::MatrixXd C;
  Eigen::VectorXd z;
};

Instance random_instance(std::mt19937_64& rng, Eigen::Index P, Eigen::Index M, double z_lo = -0.3,
                         double z_hi = 0.6) {
  Instance in;
  in.H = random_spd(rng, P, 0.05);
  in.g = random_vector(rng, P).normalized();
  in.C = random_matrix(rng, P, M);
  for (Eigen::Index j = 0; j < M; ++j) in.C.col(j).normalize();
  in.z = random_vector(rng, M, z_lo, z_hi);
  return in;
}

LinearizedStep make_step(const Instance& in, const MetricOperator& metric, double da, double db) {
  return {in.g, in.C, in.z, &metric, da, db};
}

// Grid search over a box followed by exact coordinate descent.
double feasibility_grid_oracle(const Eigen::MatrixXd& S, const Eigen::VectorXd& z, double box) {
  auto q = [&](const Eigen::VectorXd& nu) { return 0.5 * nu.dot(S * nu) - z.dot(nu); };
  const int n = 41;
  Eigen::VectorXd best = Eigen::VectorXd::Zero(3), nu(3);
  double fbest = q(best);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k) {
        nu << box * i / (n - 1), box * j / (n - 1), box * k / (n - 1);
        const double f = q(nu);
        if (f < fbest) {
          fbest = f;
          best = nu;
        }
      }
  for (int sweep = 0; sweep < 200000; ++sweep) {
    const Eigen::VectorXd prev = best;
    for (int i = 0; i < 3; ++i) {
      const double rest = S.row(i).dot(best) - S(i, i) * best[i];
      best[i] = std::max(0.0, (z[i] - rest) / S(i, i));
    }
    if ((best - prev).lpNorm<Eigen::Infinity>() < 1e-15) break;
  }
  return -q(best);
}

}  // namespace

TEST_CASE("conjugate gradients") {
  std::mt19937_64 rng(1);
  auto ident = [](const Eigen::VectorXd& v) { Eigen::VectorXd r = 0.5 * v; return r; };
  const Eigen::VectorXd b = random_vector(rng, 7);
  CHECK((cg_solve(ident, b).x - 2.0 * b).norm() <= 1e-12);
  CHECK(cg_solve(ident, Eigen::VectorXd::Zero(7)).x.norm() == 0.0);
  CHECK(cg_solve(ident, Eigen::VectorXd::Zero(7)).iterations == 0);

  const Eigen::MatrixXd A = random_spd(rng, 5);
  const Eigen::VectorXd rhs = random_vector(rng, 5);
  const auto r = cg_solve([&](const Eigen::VectorXd& v) { return Eigen::VectorXd(A * v); }, rhs);
  CHECK((r.x - A.partialPivLu().solve(rhs)).norm() <= 1e-8);
  CHECK(r.iterations <= 6);

  Eigen::VectorXd diag(40);
  for (int i = 0; i < 40; ++i) diag[i] = std::pow(10.0, i / 6.0);
  auto bad = [&](const Eigen::VectorXd& v) { return Eigen::VectorXd(diag.cwiseProduct(v)); };
  CHECK_THROWS_AS(cg_solve(bad, Eigen::VectorXd::Ones(40), {1e-12, 3}), SolverError);
}

TEST_CASE("Gauss-Newton metric solves agree") {
  std::mt19937_64 rng(2);
  const Eigen::MatrixXd J = random_matrix(rng, 12, 40);
  const double scale = 2.0 / 6.0, damping = 0.01;
  const Eigen::MatrixXd H = damping * Eigen::MatrixXd::Identity(40, 40) + scale * J.transpose() * J;
  const GaussNewtonMetric low(J, scale, damping, MetricSolve::LowRank);
  const GaussNewtonMetric cg(J, scale, damping, MetricSolve::Cg, {1e-12, 1000});
  const DenseMetric dense(H);
  const Eigen::VectorXd v = random_vector(rng, 40);
  CHECK((low.apply(v) - H * v).norm() <= 1e-12 * (H * v).norm());
  const Eigen::VectorXd x = dense.solve(v);
  CHECK(rel_err(low.solve(v), x) <= 1e-10);
  CHECK(rel_err(cg.solve(v), x) <= 1e-8);
  CHECK(cg.solve_iterations() > 0);
  CHECK(low.solve_iterations() == 0);
  const GaussNewtonMetric flat(J, 0.0, 0.5);
  CHECK((flat.solve(v) - 2.0 * v).norm() <= 1e-14);
  CHECK_THROWS_AS(GaussNewtonMetric(J, scale, 0.0), std::invalid_argument);
}

TEST_CASE("normalization") {
  std::mt19937_64 rng(3);
  const Eigen::VectorXd v = random_vector(rng, 6);
  const auto a = normalize(2.0 * v, {});
  CHECK((a.g - v.normalized()).norm() <= 1e-15);
  CHECK(a.objective_norm == doctest::Approx(2.0 * v.norm()));

  Eigen::VectorXd grad = Eigen::VectorXd::Zero(6);
  grad[0] = 2.0;
  const auto b = normalize(v, {{1.0, 1.5, grad}, {3.0, 1.0, grad}, {1.0, 0.0, Eigen::VectorXd::Zero(6)}});
  CHECK(b.z.size() == 2);
  CHECK(b.z[0] == doctest::Approx(-0.25));
  CHECK(b.z[1] > 0.0);
  CHECK(b.C.col(0).norm() == doctest::Approx(1.0));
  CHECK(b.degenerate == std::vector<std::size_t>{2});
  CHECK(b.kept == std::vector<std::size_t>{0, 1});
  CHECK_THROWS_AS(normalize(Eigen::VectorXd::Zero(6), {}), DegenerateError);
  CHECK_THROWS_AS(normalize(v, {{0.0, 1.0, Eigen::VectorXd::Ones(3)}}), StructuralError);
}

TEST_CASE("dual coefficients") {
  std::mt19937_64 rng(4);
  const Instance in = random_instance(rng, 64, 4);
  const DenseMetric metric(in.H);
  const Eigen::MatrixXd Hinv = in.H.inverse();

  const auto none = assemble_dual_coefficients({in.g, Eigen::MatrixXd(64, 0), Eigen::VectorXd(0), &metric, 0.1, 0.2});
  CHECK(none.S.size() == 0);
  CHECK(none.mu == doctest::Approx(in.g.dot(Hinv * in.g)).epsilon(1e-10));

  Eigen::MatrixXd Cg = in.C;
  Cg.col(0) = in.g;
  const auto same = assemble_dual_coefficients({in.g, Cg, in.z, &metric, 0.1, 0.2});
  CHECK(same.S(0, 0) == doctest::Approx(same.mu).epsilon(1e-12));
  CHECK(same.r[0] == doctest::Approx(same.mu).epsilon(1e-12));

  const auto d = assemble_dual_coefficients(make_step(in, metric, 0.1, 0.2));
  CHECK((d.S - in.C.transpose() * Hinv * in.C).norm() <= 1e-6);
  CHECK((d.r - in.C.transpose() * Hinv * in.g).norm() <= 1e-6);
  CHECK(std::abs(d.mu - in.g.dot(Hinv * in.g)) <= 1e-6);
  CHECK((d.S - d.S.transpose()).norm() == 0.0);
}

TEST_CASE("feasibility dual") {
  SUBCASE("satisfied constraints need no trust region") {
    const Eigen::MatrixXd S = Eigen::Matrix3d::Identity();
    const auto r = solve_feasibility_dual(S, Eigen::Vector3d(-0.1, -0.5, -2.0));
    CHECK(r.delta_min == 0.0);
    CHECK(r.nu.norm() == 0.0);
  }
  SUBCASE("single constraint closed form") {
    const Eigen::MatrixXd S = Eigen::MatrixXd::Constant(1, 1, 0.7);
    const auto r = solve_feasibility_dual(S, Eigen::VectorXd::Constant(1, 0.3));
    CHECK(r.nu[0] == doctest::Approx(0.3 / 0.7).epsilon(1e-12));
    CHECK(r.delta_min == doctest::Approx(0.09 / 1.4).epsilon(1e-12));
  }
  SUBCASE("inconsistent constraints") {
    Eigen::MatrixXd S(2, 2);
    S << 1, -1, -1, 1;  // c2 = -c1
    const auto r = solve_feasibility_dual(S, Eigen::Vector2d(0.3, 0.2));
    CHECK(std::isinf(r.delta_min));
  }
  SUBCASE("random instances against grid search and the primal oracle") {
    std::mt19937_64 rng(5);
    for (int k = 0; k < 20; ++k) {
      const Instance in = random_instance(rng, 16, 3);
      const DenseMetric metric(in.H);
      const auto d = assemble_dual_coefficients(make_step(in, metric, 0.1, 0.2));
      const auto r = solve_feasibility_dual(d.S, in.z);
      const double box = 1.0 + 2.0 * r.nu.lpNorm<Eigen::Infinity>();
      CHECK(std::abs(r.delta_min - feasibility_grid_oracle(d.S, in.z, box)) <= 1e-6);
      const auto p = oracle::feasibility(in.H, in.C, in.z);
      REQUIRE(p.found);
      CHECK(std::abs(r.delta_min - p.objective) <= 1e-6);
      CHECK(r.nu.minCoeff() >= 0.0);
    }
  }
}

TEST_CASE("main dual") {
  std::mt19937_64 rng(6);
  SUBCASE("no constraints is the closed form") {
    const Instance in = random_instance(rng, 20, 0);
    const DenseMetric metric(in.H);
    const auto d = assemble_dual_coefficients(make_step(in, metric, 0.01, 0.02));
    const auto dual = solve_main_dual(d, in.z, 0.01);
    CHECK(dual.lambda == doctest::Approx(std::sqrt(d.mu / 0.02)).epsilon(1e-14));
    const Eigen::VectorXd expect = -std::sqrt(0.02 / d.mu) * in.H.ldlt().solve(in.g);
    CHECK(rel_err(primal_step(d, dual), expect) <= 1e-8);
  }
  SUBCASE("slack constraints leave the closed-form step") {
    const Instance in = random_instance(rng, 20, 3, -5.0, -4.0);
    const DenseMetric metric(in.H);
    const auto d = assemble_dual_coefficients(make_step(in, metric, 0.01, 0.02));
    const auto dual = solve_main_dual(d, in.z, 0.01);
    CHECK(dual.nu.norm() == 0.0);
    const Eigen::VectorXd step = primal_step(d, dual);
    CHECK(rel_err(step, -std::sqrt(0.02 / d.mu) * in.H.ldlt().solve(in.g)) <= 1e-12);
    CHECK((in.z + in.C.transpose() * step).maxCoeff() < 0.0);
  }
  SUBCASE("random feasible instances against the primal oracle") {
    for (int k = 0; k < 40; ++k) {
      const auto M = static_cast<Eigen::Index>(1 + k % 5);
      const Instance in = random_instance(rng, 64, M);
      const DenseMetric metric(in.H);
      const auto d = assemble_dual_coefficients(make_step(in, metric, 0.1, 0.2));
      const auto feas = solve_feasibility_dual(d.S, in.z);
      const double delta = feas.delta_min * 1.05 + 0.02 * random_vector(rng, 1, 0.0, 1.0)[0] + 1e-3;
      const auto dual = solve_main_dual(d, in.z, delta);
      const Eigen::VectorXd step = primal_step(d, dual);
      const auto p = oracle::trust_region(in.H, in.g, in.C, in.z, delta);
      REQUIRE(p.found);
      CHECK(std::abs(in.g.dot(step) - p.objective) <= 1e-5);
      CHECK((in.z + in.C.transpose() * step).maxCoeff() <= 1e-6);
      CHECK(0.5 * step.dot(in.H * step) <= delta * (1 + 1e-6));
      CHECK(dual.lambda > 0.0);
      CHECK(dual.nu.minCoeff() >= -1e-12);
      CHECK(dual.value <= p.objective + 1e-6);
    }
  }
  SUBCASE("too small a trust region is reported") {
    const Instance in = random_instance(rng, 16, 2, 0.5, 0.9);
    const DenseMetric metric(in.H);
    const auto d = assemble_dual_coefficients(make_step(in, metric, 0.1, 0.2));
    const auto feas = solve_feasibility_dual(d.S, in.z);
    CHECK_THROWS_AS(solve_main_dual(d, in.z, 0.5 * feas.delta_min), InfeasibleError);
  }
}

TEST_CASE("recovery weights") {
  const Eigen::VectorXd even = recovery_weights(Eigen::Vector4d::Constant(-0.3));
  CHECK((even.array() - 0.25).abs().maxCoeff() <= 1e-15);
  const Eigen::VectorXd two = recovery_weights(Eigen::Vector2d(1.0, -1.0));
  CHECK(two[0] == doctest::Approx(5 * std::exp(1.0) / (5 * std::exp(1.0) + std::exp(-1.0))).epsilon(1e-14));
  CHECK(two[0] == doctest::Approx(0.9736).epsilon(1e-4));
  const Eigen::VectorXd big = recovery_weights(Eigen::Vector3d(800.0, 0.0, -1.0));
  CHECK(big.allFinite());
  CHECK(big[0] == doctest::Approx(1.0));
  CHECK(big.sum() == doctest::Approx(1.0));
  CHECK_THROWS_AS(recovery_weights(Eigen::VectorXd(0)), StructuralError);
}

TEST_CASE("penalty recovery step") {
  std::mt19937_64 rng(7);
  const Instance in = random_instance(rng, 30, 3);
  const DenseMetric metric(in.H);
  const LinearizedStep step = make_step(in, metric, 0.01, 0.04);
  const auto d = assemble_dual_coefficients(step);
  const Eigen::VectorXd alpha = recovery_weights(in.z);
  const Eigen::VectorXd s0 = penalty_recovery_step(step, d, alpha, 0.0);
  CHECK(rel_err(s0, -std::sqrt(0.08 / d.mu) * in.H.ldlt().solve(in.g)) <= 1e-12);

  const Instance one = random_instance(rng, 30, 1);
  const DenseMetric m1(one.H);
  const LinearizedStep s1b{one.g, one.C, one.z, &m1, 0.01, 0.04};
  const auto d1 = assemble_dual_coefficients(s1b);
  const Eigen::VectorXd e1 = penalty_recovery_step(s1b, d1, recovery_weights(one.z), 1.0);
  const Eigen::VectorXd dir = one.H.ldlt().solve(one.C.col(0));
  CHECK(std::abs(e1.normalized().dot(-dir.normalized()) - 1.0) <= 1e-12);

  for (int k = 0; k < 20; ++k) {
    const Instance r = random_instance(rng, 30, 4);
    const DenseMetric m(r.H);
    const LinearizedStep st{r.g, r.C, r.z, &m, 0.01, 0.04};
    const auto dr = assemble_dual_coefficients(st);
    const double eta = random_vector(rng, 1, 0.0, 1.0)[0];
    const Eigen::VectorXd s = penalty_recovery_step(st, dr, recovery_weights(r.z), eta);
    CHECK(0.5 * s.dot(r.H * s) == doctest::Approx(0.04).epsilon(1e-8));
  }
  CHECK_THROWS_AS(penalty_recovery_step(step, d, alpha, 1.5), std::invalid_argument);

  // g_p cancels when the only constraint gradient opposes g.
  Eigen::MatrixXd opp(30, 1);
  opp.col(0) = -in.g;
  const LinearizedStep cancel{in.g, opp, Eigen::VectorXd::Constant(1, 1.0), &metric, 0.01, 0.04};
  const auto dc = assemble_dual_coefficients(cancel);
  CHECK_THROWS_AS(penalty_recovery_step(cancel, dc, Eigen::VectorXd::Ones(1), 0.5), DegenerateError);
}

TEST_CASE("branch selection") {
  CHECK(select_branch(0.0, 0.1, 0.2) == StepBranch::Feasible);
  CHECK(select_branch(0.1, 0.1, 0.2) == StepBranch::NearFeasible);
  CHECK(select_branch(0.15, 0.1, 0.2) == StepBranch::NearFeasible);
  CHECK(select_branch(0.2, 0.1, 0.2) == StepBranch::PenaltyRecovery);
  CHECK(select_branch(std::numeric_limits<double>::infinity(), 0.1, 0.2) == StepBranch::PenaltyRecovery);
}

TEST_CASE("policy step") {
  std::mt19937_64 rng(8);
  SUBCASE("satisfied constraints") {
    const Instance in = random_instance(rng, 40, 5, -3.0, -1.0);
    const DenseMetric metric(in.H);
    const auto out = policy_step(make_step(in, metric, 0.01, 0.02), 0.8);
    CHECK(out.branch == StepBranch::Feasible);
    CHECK(out.nu.norm() == 0.0);
    CHECK(out.metric_half_norm == doctest::Approx(0.01).epsilon(1e-10));
  }
  SUBCASE("severe violation goes to recovery") {
    Instance in = random_instance(rng, 40, 1);
    in.H = Eigen::MatrixXd::Identity(40, 40);
    in.z[0] = 10.0;  // S = 1, so delta_min = 50
    const DenseMetric metric(in.H);
    const auto out = policy_step(make_step(in, metric, 0.01, 0.02), 0.8);
    CHECK(out.delta_min == doctest::Approx(50.0).epsilon(1e-10));
    CHECK(out.branch == StepBranch::PenaltyRecovery);
    CHECK(out.metric_half_norm == doctest::Approx(0.02).epsilon(1e-10));
  }
  SUBCASE("invariants over random instances") {
    int counts[3] = {0, 0, 0};
    for (int k = 0; k < 200; ++k) {
      const auto M = static_cast<Eigen::Index>(k % 6);
      const Instance in = random_instance(rng, 24, M, -0.2, 0.2);
      const DenseMetric metric(in.H);
      const double da = std::pow(10.0, random_vector(rng, 1, -4, -1)[0]);
      const LinearizedStep st = make_step(in, metric, da, 4.0 * da);
      const auto out = policy_step(st, 0.8);
      counts[static_cast<int>(out.branch)]++;
      CHECK(out.metric_half_norm <= out.active_delta * (1 + 1e-6));
      CHECK(out.delta_theta.allFinite());
      if (out.branch != StepBranch::PenaltyRecovery) {
        CHECK(out.lambda > 0.0);
        if (M > 0) CHECK(out.nu.minCoeff() >= -1e-12);
      }
      if (out.branch == StepBranch::Feasible && M > 0) {
        CHECK((in.z + in.C.transpose() * out.delta_theta).maxCoeff() <= 1e-6);
      }
      // Raising delta_a never turns a feasible outcome into a recovery.
      if (out.branch == StepBranch::Feasible) {
        const auto wider = policy_step(make_step(in, metric, 2.0 * da, 8.0 * da), 0.8);
        CHECK(wider.branch == StepBranch::Feasible);
      }
    }
    CHECK(counts[0] > 0);
    CHECK(counts[1] + counts[2] > 0);
  }
  SUBCASE("diagnostic record") {
    const Instance in = random_instance(rng, 10, 2);
    const DenseMetric metric(in.H);
    const auto out = policy_step(make_step(in, metric, 0.01, 0.02), 0.8);
    const auto j = nlohmann::json::parse(diagnostic_json(out));
    CHECK(j.contains("delta_min"));
    CHECK(j["branch"].get<std::string>() == to_string(out.branch));
    CHECK(j.contains("cg_iterations"));
    CHECK(j["metric_half_norm"].get<double>() == doctest::Approx(out.metric_half_norm));
  }
}
