#include "cdadp/vehicle.hpp"

#include "cdadp/errors.hpp"

#include <cmath>
#include <string>

namespace cdadp::vehicle {

namespace {

double sign_of(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// Longitudinal force split and its derivative w.r.t. a_x.
struct AxleForces {
  double F_xf, F_xr, dF_xf, dF_xr;
};

AxleForces longitudinal_split(const VehicleParams& p, double a_x) {
  if (a_x >= 0.0) return {0.0, p.m * a_x, 0.0, p.m};
  return {0.5 * p.m * a_x, 0.5 * p.m * a_x, 0.5 * p.m, 0.5 * p.m};
}

// Lateral friction of one axle and d mu_axle / d a_x.
struct AxleFriction {
  double mu, d_ax;
};

AxleFriction axle_friction(double mu, double F_z, double F_x, double dF_x, const char* axle) {
  const double cap = mu * F_z;
  const double slack = cap * cap - F_x * F_x;
  if (slack < 0.0) {
    throw DomainError(std::string("friction circle exceeded on ") + axle + " axle");
  }
  const double mu_axle = std::sqrt(slack) / F_z;
  const double d_ax = mu_axle > 0.0 ? -F_x * dF_x / (F_z * F_z * mu_axle) : 0.0;
  return {mu_axle, d_ax};
}

void check_state(const VehicleParams& p, const VehicleState& x) {
  if (!(x.v_x > 0.0)) throw DomainError("longitudinal speed must be positive, got v_x = " + std::to_string(x.v_x));
  if (!(x.y < p.R)) throw DomainError("lateral offset reached the path radius, y = " + std::to_string(x.y));
}

}  // namespace

void VehicleParams::validate() const {
  for (double v : {C_f, C_r, a, b, m, I_z, mu, f_sample, f_sim, R, g}) {
    if (!(v > 0.0)) throw std::invalid_argument("vehicle parameters must all be positive");
  }
  const double ratio = f_sim / f_sample;
  if (std::abs(ratio - std::round(ratio)) > 1e-9 || ratio < 1.0) {
    throw std::invalid_argument("f_sim must be an integer multiple of f_sample");
  }
}

int VehicleParams::substeps() const { return static_cast<int>(std::lround(f_sim / f_sample)); }

Eigen::VectorXd VehicleState::to_vector() const {
  Eigen::VectorXd x(5);
  x << v_y, r, v_x, phi, y;
  return x;
}

VehicleState VehicleState::from_vector(const Eigen::VectorXd& x) {
  if (x.size() != 5) throw StructuralError("vehicle state has 5 components");
  return {x[0], x[1], x[2], x[3], x[4]};
}

Eigen::VectorXd VehicleControl::to_vector() const {
  Eigen::VectorXd u(2);
  u << delta, a_x;
  return u;
}

VehicleControl VehicleControl::from_vector(const Eigen::VectorXd& u) {
  if (u.size() != 2) throw StructuralError("vehicle control has 2 components");
  return {u[0], u[1]};
}

SlipAngles slip_angles(const VehicleParams& p, const VehicleState& x, const VehicleControl& u) {
  if (!(x.v_x > 0.0)) throw DomainError("slip angles need v_x > 0");
  return {std::atan((x.v_y + p.a * x.r) / x.v_x) - u.delta, std::atan((x.v_y - p.b * x.r) / x.v_x)};
}

TireLoads tire_loads_and_friction(const VehicleParams& p, const VehicleControl& u) {
  TireLoads t;
  t.F_zf = p.b / (p.a + p.b) * p.m * p.g;
  t.F_zr = p.m * p.g - t.F_zf;
  const AxleForces fx = longitudinal_split(p, u.a_x);
  t.F_xf = fx.F_xf;
  t.F_xr = fx.F_xr;
  t.mu_f = axle_friction(p.mu, t.F_zf, fx.F_xf, fx.dF_xf, "front").mu;
  t.mu_r = axle_friction(p.mu, t.F_zr, fx.F_xr, fx.dF_xr, "rear").mu;
  return t;
}

LateralForce fiala_lateral_force_partials(double alpha, double C, double mu_eff, double F_z) {
  const double t = std::tan(alpha);
  const double sigma = sign_of(t);
  const double cap = mu_eff * F_z;
  if (cap <= 0.0) return {0.0, 0.0, -sigma * F_z};
  const double u = C * std::abs(t) / (3.0 * cap);
  if (u <= 1.0) {
    const double w = u - 1.0;
    LateralForce f;
    f.force = -sigma * cap * (w * w * w + 1.0);
    f.d_alpha = -C * w * w * (1.0 + t * t);
    f.d_mu = -sigma * F_z * (w * w * w + 1.0 - 3.0 * u * w * w);
    return f;
  }
  return {-sigma * cap, 0.0, -sigma * F_z};
}

double fiala_lateral_force(double alpha, double C, double mu_eff, double F_z) {
  return fiala_lateral_force_partials(alpha, C, mu_eff, F_z).force;
}

DerivativePartials vehicle_derivative_partials(const VehicleParams& p, const VehicleState& x,
                                               const VehicleControl& u) {
  check_state(p, x);
  const double vy = x.v_y, r = x.r, vx = x.v_x, phi = x.phi, y = x.y;
  const double delta = u.delta, ax = u.a_x;

  const double F_zf = p.b / (p.a + p.b) * p.m * p.g;
  const double F_zr = p.m * p.g - F_zf;
  const AxleForces fx = longitudinal_split(p, ax);
  const AxleFriction muf = axle_friction(p.mu, F_zf, fx.F_xf, fx.dF_xf, "front");
  const AxleFriction mur = axle_friction(p.mu, F_zr, fx.F_xr, fx.dF_xr, "rear");

  const double nf = vy + p.a * r;
  const double nr = vy - p.b * r;
  const double Df = vx * vx + nf * nf;
  const double Dr = vx * vx + nr * nr;
  const double alpha_f = std::atan(nf / vx) - delta;
  const double alpha_r = std::atan(nr / vx);
  // d alpha / d (v_y, r, v_x)
  const Eigen::Vector3d daf(vx / Df, p.a * vx / Df, -nf / Df);
  const Eigen::Vector3d dar(vx / Dr, -p.b * vx / Dr, -nr / Dr);

  const LateralForce Ff = fiala_lateral_force_partials(alpha_f, p.C_f, muf.mu, F_zf);
  const LateralForce Fr = fiala_lateral_force_partials(alpha_r, p.C_r, mur.mu, F_zr);

  const double cd = std::cos(delta), sd = std::sin(delta);
  const double cp = std::cos(phi), sp = std::sin(phi);
  const double q = p.R - y;
  const double w = vx * cp - vy * sp;

  DerivativePartials d;
  d.value.resize(5);
  d.value << (Ff.force * cd + Fr.force) / p.m - vx * r, (p.a * Ff.force * cd - p.b * Fr.force) / p.I_z,
      ax + vy * r, r - w / q, vx * sp + vy * cp;

  d.dx = Eigen::MatrixXd::Zero(5, 5);
  d.du = Eigen::MatrixXd::Zero(5, 2);

  // Tire force partials over (v_y, r, v_x) and (delta, a_x).
  const Eigen::Vector3d dFf_x = Ff.d_alpha * daf;
  const Eigen::Vector3d dFr_x = Fr.d_alpha * dar;
  const double dFf_delta = -Ff.d_alpha;
  const double dFf_ax = Ff.d_mu * muf.d_ax;
  const double dFr_ax = Fr.d_mu * mur.d_ax;

  for (int k = 0; k < 3; ++k) {
    d.dx(0, k) = (cd * dFf_x[k] + dFr_x[k]) / p.m;
    d.dx(1, k) = (p.a * cd * dFf_x[k] - p.b * dFr_x[k]) / p.I_z;
  }
  d.dx(0, 1) -= vx;
  d.dx(0, 2) -= r;
  d.du(0, 0) = (cd * dFf_delta - Ff.force * sd) / p.m;
  d.du(0, 1) = (cd * dFf_ax + dFr_ax) / p.m;
  d.du(1, 0) = p.a * (cd * dFf_delta - Ff.force * sd) / p.I_z;
  d.du(1, 1) = (p.a * cd * dFf_ax - p.b * dFr_ax) / p.I_z;

  d.dx(2, 0) = r;
  d.dx(2, 1) = vy;
  d.du(2, 1) = 1.0;

  d.dx(3, 0) = sp / q;
  d.dx(3, 1) = 1.0;
  d.dx(3, 2) = -cp / q;
  d.dx(3, 3) = (vx * sp + vy * cp) / q;
  d.dx(3, 4) = -w / (q * q);

  d.dx(4, 0) = cp;
  d.dx(4, 2) = sp;
  d.dx(4, 3) = w;
  return d;
}

Eigen::VectorXd vehicle_derivative(const VehicleParams& p, const VehicleState& x, const VehicleControl& u) {
  return vehicle_derivative_partials(p, x, u).value;
}

VehicleState step(const VehicleParams& p, const VehicleState& x, const VehicleControl& u) {
  const int n = p.substeps();
  const double dt = 1.0 / p.f_sim;
  Eigen::VectorXd s = x.to_vector();
  for (int k = 0; k < n; ++k) {
    const VehicleState cur = VehicleState::from_vector(s);
    if (!(cur.v_x > 0.0) || !(cur.y < p.R)) throw TrajectoryInvalid(0, "left the vehicle model domain");
    s += dt * vehicle_derivative(p, cur, u);
  }
  const VehicleState next = VehicleState::from_vector(s);
  if (!(next.v_x > 0.0) || !(next.y < p.R) || !s.allFinite()) {
    throw TrajectoryInvalid(0, "left the vehicle model domain");
  }
  return next;
}

Linearization step_jacobians(const VehicleParams& p, const VehicleState& x, const VehicleControl& u) {
  const int n = p.substeps();
  const double dt = 1.0 / p.f_sim;
  Eigen::VectorXd s = x.to_vector();
  Eigen::MatrixXd A = Eigen::MatrixXd::Identity(5, 5);
  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(5, 2);
  for (int k = 0; k < n; ++k) {
    const VehicleState cur = VehicleState::from_vector(s);
    if (!(cur.v_x > 0.0) || !(cur.y < p.R)) throw TrajectoryInvalid(0, "left the vehicle model domain");
    const DerivativePartials d = vehicle_derivative_partials(p, cur, u);
    const Eigen::MatrixXd T = Eigen::MatrixXd::Identity(5, 5) + dt * d.dx;
    B = T * B + dt * d.du;
    A = T * A;
    s += dt * d.value;
  }
  const VehicleState next = VehicleState::from_vector(s);
  if (!(next.v_x > 0.0) || !(next.y < p.R) || !s.allFinite()) {
    throw TrajectoryInvalid(0, "left the vehicle model domain");
  }
  return {s, A, B};
}

UtilityEval utility(const VehicleState& x, const VehicleControl& u) {
  UtilityEval e;
  e.value = -0.015 * x.v_x + 0.04 * x.y * x.y + 0.1 * u.delta * u.delta + 0.00012 * u.a_x * u.a_x;
  e.dx = Eigen::VectorXd::Zero(5);
  e.dx[2] = -0.015;
  e.dx[4] = 0.08 * x.y;
  e.du = Eigen::VectorXd::Zero(2);
  e.du[0] = 0.2 * u.delta;
  e.du[1] = 0.00024 * u.a_x;
  return e;
}

std::array<ConstraintEval, kConstraintCount> constraint_values(const VehicleParams& p, const VehicleState& x,
                                                               const VehicleControl& u_prev) {
  if (!(x.v_x > 0.0)) throw DomainError("constraints need v_x > 0");
  const double F_zf = p.b / (p.a + p.b) * p.m * p.g;
  const double F_zr = p.m * p.g - F_zf;
  const AxleForces fx = longitudinal_split(p, u_prev.a_x);
  const AxleFriction muf = axle_friction(p.mu, F_zf, fx.F_xf, fx.dF_xf, "front");
  const AxleFriction mur = axle_friction(p.mu, F_zr, fx.F_xr, fx.dF_xr, "rear");
  if (!(muf.mu > 0.0) || !(mur.mu > 0.0)) throw DomainError("lateral friction vanished");

  const double vy = x.v_y, r = x.r, vx = x.v_x;
  const double nf = vy + p.a * r;
  const double nr = vy - p.b * r;
  const double Df = vx * vx + nf * nf;
  const double Dr = vx * vx + nr * nr;
  const double alpha_f = std::atan(nf / vx) - u_prev.delta;
  const double alpha_r = std::atan(nr / vx);

  std::array<ConstraintEval, kConstraintCount> out;
  for (auto& c : out) {
    c.dx = Eigen::VectorXd::Zero(5);
    c.du = Eigen::VectorXd::Zero(2);
  }

  {
    auto& c = out[static_cast<std::size_t>(ConstraintId::YawRate)];
    const double q = r * vx / mur.mu;
    const double s = sign_of(q);
    c.value = std::abs(q);
    c.bound = p.g;
    c.dx[1] = s * vx / mur.mu;
    c.dx[2] = s * r / mur.mu;
    c.du[1] = -s * q / mur.mu * mur.d_ax;
  }
  {
    auto& c = out[static_cast<std::size_t>(ConstraintId::FrontSlip)];
    const double q = alpha_f / muf.mu;
    const double s = sign_of(q);
    c.value = std::abs(q);
    c.bound = 3.0 * F_zf / p.C_f;
    c.dx[0] = s * vx / Df / muf.mu;
    c.dx[1] = s * p.a * vx / Df / muf.mu;
    c.dx[2] = -s * nf / Df / muf.mu;
    c.du[0] = -s / muf.mu;
    c.du[1] = -s * q / muf.mu * muf.d_ax;
  }
  {
    auto& c = out[static_cast<std::size_t>(ConstraintId::RearSlip)];
    const double q = alpha_r / mur.mu;
    const double s = sign_of(q);
    c.value = std::abs(q);
    c.bound = 3.0 * F_zr / p.C_r;
    c.dx[0] = s * vx / Dr / mur.mu;
    c.dx[1] = -s * p.b * vx / Dr / mur.mu;
    c.dx[2] = -s * nr / Dr / mur.mu;
    c.du[1] = -s * q / mur.mu * mur.d_ax;
  }
  return out;
}

VehicleModel::VehicleModel(VehicleParams params) : params_(params) { params_.validate(); }

std::vector<std::string> VehicleModel::state_names() const { return {"v_y", "r", "v_x", "phi", "y"}; }
std::vector<std::string> VehicleModel::control_names() const { return {"delta", "a_x"}; }
std::vector<std::string> VehicleModel::constraint_names() const { return {"yaw_rate", "front_slip", "rear_slip"}; }

Eigen::VectorXd VehicleModel::step(const Eigen::VectorXd& x, const Eigen::VectorXd& u) const {
  return vehicle::step(params_, VehicleState::from_vector(x), VehicleControl::from_vector(u)).to_vector();
}

Linearization VehicleModel::step_jacobians(const Eigen::VectorXd& x, const Eigen::VectorXd& u) const {
  return vehicle::step_jacobians(params_, VehicleState::from_vector(x), VehicleControl::from_vector(u));
}

UtilityEval VehicleModel::utility(const Eigen::VectorXd& x, const Eigen::VectorXd& u) const {
  return vehicle::utility(VehicleState::from_vector(x), VehicleControl::from_vector(u));
}

std::vector<ConstraintEval> VehicleModel::constraints(const Eigen::VectorXd& x_next,
                                                      const Eigen::VectorXd& u_applied) const {
  const auto arr = constraint_values(params_, VehicleState::from_vector(x_next), VehicleControl::from_vector(u_applied));
  return {arr.begin(), arr.end()};
}

bool VehicleModel::in_domain(const Eigen::VectorXd& x) const {
  return x.size() == 5 && x.allFinite() && x[2] > 0.0 && x[4] < params_.R;
}

}  // namespace cdadp::vehicle
