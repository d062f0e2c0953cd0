#include "cdadp/errors.hpp"
#include "cdadp/lti.hpp"
#include "cdadp/vehicle.hpp"
#include "doctest.h"
#include "test_support.hpp"

#include <cmath>

using namespace cdadp;
using namespace cdadp::vehicle;
using namespace testing_support;

namespace {

const VehicleParams kParams{};

VehicleState random_state(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> vy(-1, 1), r(-0.5, 0.5), vx(5, 20), phi(-0.3, 0.3), y(-2, 2);
  return {vy(rng), r(rng), vx(rng), phi(rng), y(rng)};
}

VehicleControl random_control(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(-kMaxSteer, kMaxSteer), a(-kMaxAccel, kMaxAccel);
  return {d(rng), a(rng)};
}

}  // namespace

TEST_CASE("slip angles") {
  CHECK(slip_angles(kParams, {0, 0, 7, 0, 0}, {0, 0}).front == 0.0);
  CHECK(slip_angles(kParams, {0, 0, 7, 0, 0}, {0, 0}).rear == 0.0);
  const auto s = slip_angles(kParams, {1, 0, 10, 0, 0}, {0, 0});
  CHECK(s.front == doctest::Approx(0.0996686525).epsilon(1e-9));
  CHECK(s.rear == doctest::Approx(0.0996686525).epsilon(1e-9));
  const auto t = slip_angles(kParams, {1, 0, 10, 0, 0}, {0.1, 0});
  CHECK(t.front == doctest::Approx(s.front - 0.1).epsilon(1e-15));
  CHECK(t.rear == s.rear);
  CHECK_THROWS_AS(slip_angles(kParams, {0, 0, 0, 0, 0}, {0, 0}), DomainError);
}

TEST_CASE("tire loads and friction") {
  const double mg = kParams.m * kParams.g;
  const auto t0 = tire_loads_and_friction(kParams, {0, 0});
  CHECK(t0.F_zf == doctest::Approx(1.40 / 2.54 * mg).epsilon(1e-14));
  CHECK(t0.F_zf == doctest::Approx(8110.63).epsilon(1e-6));
  CHECK(t0.F_zr == doctest::Approx(6604.37).epsilon(1e-6));
  CHECK(std::abs(t0.F_zf + t0.F_zr - mg) <= 1e-12 * mg);
  CHECK(t0.mu_f == 1.0);
  CHECK(t0.mu_r == 1.0);

  const auto t1 = tire_loads_and_friction(kParams, {0, 2.5});
  CHECK(t1.F_xf == 0.0);
  CHECK(t1.F_xr == doctest::Approx(3750.0));
  CHECK(t1.mu_r == doctest::Approx(std::sqrt(t0.F_zr * t0.F_zr - 3750.0 * 3750.0) / t0.F_zr).epsilon(1e-14));
  CHECK(t1.mu_f == 1.0);

  const auto t2 = tire_loads_and_friction(kParams, {0, -2.0});
  CHECK(t2.F_xf == doctest::Approx(-1500.0));
  CHECK(t2.F_xr == doctest::Approx(-1500.0));

  VehicleParams slick = kParams;
  slick.mu = 0.3;
  CHECK_THROWS_AS(tire_loads_and_friction(slick, {0, 2.5}), DomainError);

  for (double ax = -kMaxAccel; ax <= kMaxAccel; ax += 0.05) {
    const auto c = constraint_values(kParams, {0.1, 0.1, 10, 0, 0}, {0.0, ax});
    for (const auto& e : c) CHECK(e.bound > 0.0);
    const auto t = tire_loads_and_friction(kParams, {0, ax});
    CHECK(t.mu_f > 0.0);
    CHECK(t.mu_r > 0.0);
  }
}

TEST_CASE("Fiala lateral force") {
  const double C = kParams.C_f, F = 8110.63, mu = 0.9;
  const double alpha_max = std::atan(3.0 * mu * F / C);
  CHECK(fiala_lateral_force(0.0, C, mu, F) == 0.0);
  // Relative to the linear law the cubic falls short by u - u^2/3, u = C tan(a) / (3 mu F).
  for (double a = 0.0; a <= 0.1 * alpha_max; a += 0.002 * alpha_max) {
    const double f = fiala_lateral_force(a, C, mu, F);
    CHECK(f == doctest::Approx(-fiala_lateral_force(-a, C, mu, F)).epsilon(1e-15));
    if (a == 0.0) continue;
    const double t = std::tan(a), u = C * t / (3.0 * mu * F);
    CHECK(1.0 - f / (-C * t) == doctest::Approx(u - u * u / 3.0).epsilon(1e-9));
    if (a <= 0.01 * alpha_max) CHECK(std::abs(f - (-C * a)) <= 0.01 * C * a);
  }
  CHECK(std::abs(fiala_lateral_force(alpha_max, C, mu, F)) == doctest::Approx(mu * F).epsilon(1e-13));
  CHECK(fiala_lateral_force(alpha_max + 0.1, C, mu, F) == -mu * F);
  CHECK(fiala_lateral_force(-alpha_max - 0.1, C, mu, F) == mu * F);
  // continuity at the switch
  const double eps = 1e-12;
  const double jump = std::abs(fiala_lateral_force(alpha_max + eps, C, mu, F) - fiala_lateral_force(alpha_max - eps, C, mu, F));
  CHECK(jump <= 1e-9);
  std::mt19937_64 rng(3);
  for (int k = 0; k < 200; ++k) {
    const double a = random_vector(rng, 1, -0.6, 0.6)[0];
    const auto pf = fiala_lateral_force_partials(a, C, mu, F);
    auto fa = [&](const Eigen::VectorXd& v) { return fiala_lateral_force(v[0], C, mu, F); };
    auto fm = [&](const Eigen::VectorXd& v) { return fiala_lateral_force(a, C, v[0], F); };
    CHECK(std::abs(pf.d_alpha - directional_fd(fa, Eigen::VectorXd::Constant(1, a), Eigen::VectorXd::Ones(1), 1e-7)) <=
          1e-4 * C);
    CHECK(std::abs(pf.d_mu - directional_fd(fm, Eigen::VectorXd::Constant(1, mu), Eigen::VectorXd::Ones(1), 1e-7)) <=
          1e-5 * F);
  }
}

TEST_CASE("vehicle derivative") {
  const Eigen::VectorXd d = vehicle_derivative(kParams, {0, 0, 10, 0, 0}, {0, 0});
  Eigen::VectorXd expect(5);
  expect << 0, 0, 0, -0.2, 0;
  CHECK((d - expect).cwiseAbs().maxCoeff() <= 1e-15);
  CHECK(vehicle_derivative(kParams, {0, 0.3, 10, 0.1, 1}, {0.05, 1.7})[2] == doctest::Approx(1.7));
  CHECK(vehicle_derivative(kParams, {0, 0, 5, M_PI / 2, 0}, {0, 0})[4] == doctest::Approx(5.0).epsilon(1e-15));
  CHECK_THROWS_AS(vehicle_derivative(kParams, {0, 0, 10, 0, 50}, {0, 0}), DomainError);
}

TEST_CASE("vehicle step") {
  const auto x = step(kParams, {0, 0, 10, 0, 0}, {0, 1});
  CHECK(x.v_x == doctest::Approx(10.025).epsilon(1e-14));
  CHECK(x.v_y == 0.0);
  CHECK(x.r == 0.0);

  VehicleParams flat = kParams;
  flat.R = 1e12;
  const auto still = step(flat, {0, 0, 10, 0, 0}, {0, 0});
  CHECK(still.v_x == 10.0);
  CHECK(std::abs(still.y) <= 1e-12);

  CHECK_THROWS_AS(step(kParams, {0, 0, 0.01, 0, 0}, {0, -2.5}), TrajectoryInvalid);
  CHECK_THROWS_AS(step(kParams, {0, 0, 10, 1.5, 49.9}, {0, 0}), TrajectoryInvalid);
}

TEST_CASE("Euler substepping converges at first order") {
  // One control step with one substep vs five substeps differs by O(dt^2);
  // halving the control period quarters the gap.
  const VehicleState x{0.3, 0.1, 12, 0.05, 0.5};
  const VehicleControl u{0.05, 0.5};
  auto gap = [&](double f) {
    VehicleParams coarse = kParams, fine = kParams;
    coarse.f_sample = f;
    coarse.f_sim = f;
    fine.f_sample = f;
    fine.f_sim = 5 * f;
    return (step(coarse, x, u).to_vector() - step(fine, x, u).to_vector()).norm();
  };
  const double ratio = gap(40.0) / gap(80.0);
  CHECK(ratio == doctest::Approx(4.0).epsilon(0.1));
}

TEST_CASE("step Jacobians match finite differences") {
  std::mt19937_64 rng(1234);
  double worst = 0.0;
  for (int k = 0; k < 1000; ++k) {
    const VehicleState x = random_state(rng);
    const VehicleControl u = random_control(rng);
    const Linearization lin = step_jacobians(kParams, x, u);
    CHECK((lin.next - step(kParams, x, u).to_vector()).norm() == 0.0);
    auto fx = [&](const Eigen::VectorXd& s) { return step(kParams, VehicleState::from_vector(s), u).to_vector(); };
    auto fu = [&](const Eigen::VectorXd& c) { return step(kParams, x, VehicleControl::from_vector(c)).to_vector(); };
    const Eigen::MatrixXd Afd = fd_jacobian(fx, x.to_vector(), 1e-6);
    const Eigen::MatrixXd Bfd = fd_jacobian(fu, u.to_vector(), 1e-6);
    worst = std::max(worst, (lin.A - Afd).norm() / Afd.norm());
    worst = std::max(worst, (lin.B - Bfd).norm() / Bfd.norm());
  }
  CHECK(worst <= 1e-5);
}

TEST_CASE("structural Jacobian entries") {
  const auto lin = step_jacobians(kParams, {0, 0, 10, 0, 0}, {0, 1});
  CHECK(lin.B(2, 1) == doctest::Approx(1.0 / 40.0).epsilon(1e-14));
  VehicleParams one = kParams;
  one.f_sim = one.f_sample;
  const auto single = step_jacobians(one, {0.2, 0.1, 10, 0.1, 0.3}, {0.1, 0.4});
  CHECK(single.B(2, 0) == 0.0);
  CHECK(single.B(4, 0) == 0.0);
}

TEST_CASE("utility") {
  const auto l = utility({0, 0, 10, 0, 0}, {0, 0});
  CHECK(l.value == doctest::Approx(-0.15).epsilon(1e-15));
  CHECK(utility({0, 0, 10, 0, 2}, {0, 0}).dx[4] == doctest::Approx(0.16));
  CHECK(utility({0, 0, 10, 0, 0}, {0.35, 0}).du[0] == doctest::Approx(0.07));
  std::mt19937_64 rng(8);
  for (int k = 0; k < 20; ++k) {
    const VehicleState x = random_state(rng);
    const VehicleControl u = random_control(rng);
    const auto e = utility(x, u);
    auto fx = [&](const Eigen::VectorXd& s) { return utility(VehicleState::from_vector(s), u).value; };
    auto fu = [&](const Eigen::VectorXd& c) { return utility(x, VehicleControl::from_vector(c)).value; };
    CHECK(rel_err(e.dx, fd_jacobian([&](const Eigen::VectorXd& s) { return Eigen::VectorXd::Constant(1, fx(s)); },
                                    x.to_vector(), 1e-6).row(0).transpose()) <= 1e-8);
    CHECK(rel_err(e.du, fd_jacobian([&](const Eigen::VectorXd& c) { return Eigen::VectorXd::Constant(1, fu(c)); },
                                    u.to_vector(), 1e-6).row(0).transpose()) <= 1e-8);
  }
}

TEST_CASE("stability constraints") {
  const auto zero = constraint_values(kParams, {0, 0, 10, 0, 0}, {0, 0});
  for (const auto& c : zero) {
    CHECK(c.value == 0.0);
    CHECK(c.excess() < 0.0);
  }
  const auto yaw = constraint_values(kParams, {0, 0.15, 10, 0, 0}, {0, 0});
  CHECK(yaw[0].value == doctest::Approx(1.5));
  CHECK(yaw[0].bound == doctest::Approx(9.81));
  CHECK(yaw[0].excess() < 0.0);
  const auto slip = constraint_values(kParams, {0, 0, 10, 0, 0}, {-0.3, 0});
  CHECK(slip[1].value == doctest::Approx(0.3));
  CHECK(slip[1].bound == doctest::Approx(0.27650).epsilon(1e-4));
  CHECK(slip[1].excess() > 0.0);
  CHECK_THROWS_AS(constraint_values(kParams, {0, 0, 0, 0, 0}, {0, 0}), DomainError);

  std::mt19937_64 rng(99);
  for (int k = 0; k < 200; ++k) {
    const VehicleState x = random_state(rng);
    const VehicleControl u = random_control(rng);
    const auto cs = constraint_values(kParams, x, u);
    for (std::size_t tau = 0; tau < 3; ++tau) {
      auto fx = [&](const Eigen::VectorXd& s) {
        return Eigen::VectorXd::Constant(1, constraint_values(kParams, VehicleState::from_vector(s), u)[tau].value);
      };
      auto fu = [&](const Eigen::VectorXd& c) {
        return Eigen::VectorXd::Constant(1, constraint_values(kParams, x, VehicleControl::from_vector(c))[tau].value);
      };
      const Eigen::VectorXd gx = fd_jacobian(fx, x.to_vector(), 1e-7).row(0).transpose();
      const Eigen::VectorXd gu = fd_jacobian(fu, u.to_vector(), 1e-5).row(0).transpose();
      CHECK(rel_err(cs[tau].dx, gx, 1e-8) <= 1e-6);
      CHECK(rel_err(cs[tau].du, gu, 1e-3) <= 1e-6);
    }
  }
}

TEST_CASE("braking straight ahead slows the vehicle") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> ax(-2.5, -0.01), vx(2, 20), phi(-0.2, 0.2), y(-3, 3);
  for (int k = 0; k < 200; ++k) {
    const VehicleState x{0, 0, vx(rng), phi(rng), y(rng)};
    CHECK(step(kParams, x, {0, ax(rng)}).v_x < x.v_x);
  }
}

TEST_CASE("vehicle model interface") {
  const VehicleModel model;
  CHECK(model.state_dim() == 5);
  CHECK(model.control_dim() == 2);
  CHECK(model.constraint_names().size() == 3);
  CHECK(model.in_domain(VehicleState{0, 0, 10, 0, 0}.to_vector()));
  CHECK_FALSE(model.in_domain(VehicleState{0, 0, -1, 0, 0}.to_vector()));
  VehicleParams bad = kParams;
  bad.f_sim = 130;
  CHECK_THROWS_AS(VehicleModel{bad}, std::invalid_argument);
}

TEST_CASE("LTI model and discounted Riccati") {
  const LtiModel di = double_integrator();
  const Eigen::Vector2d x(1.0, -0.5);
  const Eigen::VectorXd u = Eigen::VectorXd::Constant(1, 0.3);
  CHECK((di.step(x, u) - (di.A() * x + di.B() * u)).norm() == 0.0);
  CHECK(di.utility(x, u).value == doctest::Approx(1.25 + 0.09));
  CHECK_THROWS_AS(di.step(Eigen::Vector3d::Zero(), u), StructuralError);

  const double gamma = 0.98;
  const auto sol = solve_discounted_riccati(di.A(), di.B(), di.Q(), di.R(), gamma);
  // Policy evaluation of u = -Kx by the Kronecker form of the discounted Lyapunov equation.
  const Eigen::MatrixXd Acl = di.A() - di.B() * sol.K;
  const Eigen::MatrixXd M = di.Q() + sol.K.transpose() * di.R() * sol.K;
  Eigen::MatrixXd kron(4, 4);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) kron.block(2 * i, 2 * j, 2, 2) = Acl(j, i) * Acl.transpose();
  const Eigen::VectorXd vecP = (Eigen::MatrixXd::Identity(4, 4) - gamma * kron)
                                   .fullPivLu()
                                   .solve(Eigen::Map<const Eigen::VectorXd>(M.data(), 4));
  const Eigen::MatrixXd Pk = Eigen::Map<const Eigen::MatrixXd>(vecP.data(), 2, 2);
  CHECK((Pk - sol.P).norm() <= 1e-9 * sol.P.norm());
  // Perturbed gains cost more.
  std::mt19937_64 rng(2);
  for (int k = 0; k < 20; ++k) {
    const Eigen::MatrixXd K2 = sol.K + 0.05 * random_matrix(rng, 1, 2);
    Eigen::Vector2d s = x;
    double cost = 0.0, w = 1.0;
    for (int t = 0; t < 3000; ++t) {
      const Eigen::VectorXd a = -K2 * s;
      cost += w * (s.dot(s) + a.squaredNorm());
      s = di.A() * s + di.B() * a;
      w *= gamma;
    }
    CHECK(cost >= x.dot(sol.P * x) - 1e-9);
  }
  const auto trivial = solve_discounted_riccati(Eigen::MatrixXd::Zero(2, 2), di.B(), di.Q(), di.R(), gamma);
  CHECK((trivial.P - di.Q()).norm() <= 1e-14);
  CHECK(trivial.K.norm() <= 1e-14);

  const LtiModel boxed(di.A(), di.B(), di.Q(), di.R(), {{0, 1.0, 2.0}, {1, -1.0, 0.5}});
  const auto cs = boxed.constraints(Eigen::Vector2d(1.5, -0.7), u);
  CHECK(cs[0].value == 1.5);
  CHECK(cs[0].excess() < 0);
  CHECK(cs[1].value == doctest::Approx(0.7));
  CHECK(cs[1].excess() > 0);
}
