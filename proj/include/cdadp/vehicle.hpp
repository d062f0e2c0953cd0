#pragma once

// Single-track vehicle tracking a circular reference path, with Fiala
// lateral tire forces and friction reduced by longitudinal force.
//
// State (v_y, r, v_x, phi, y), control (delta, a_x). One control step holds
// the control for f_sim / f_sample explicit-Euler substeps.

#include "cdadp/dynamics.hpp"

#include <array>

namespace cdadp::vehicle {

inline constexpr double kMaxSteer = 0.35;
inline constexpr double kMaxAccel = 2.5;

struct VehicleParams {
  double C_f = 88000.0;  // N/rad
  double C_r = 94000.0;  // N/rad
  double a = 1.14;       // m, CG to front axle
  double b = 1.40;       // m, CG to rear axle
  double m = 1500.0;     // kg
  double I_z = 2420.0;   // kg m^2
  double mu = 1.0;
  double f_sample = 40.0;  // Hz
  double f_sim = 200.0;    // Hz
  double R = 50.0;         // m
  double g = 9.81;         // m/s^2

  void validate() const;
  int substeps() const;
};

struct VehicleState {
  double v_y = 0.0;
  double r = 0.0;
  double v_x = 0.0;
  double phi = 0.0;
  double y = 0.0;

  Eigen::VectorXd to_vector() const;
  static VehicleState from_vector(const Eigen::VectorXd& x);
};

struct VehicleControl {
  double delta = 0.0;
  double a_x = 0.0;

  Eigen::VectorXd to_vector() const;
  static VehicleControl from_vector(const Eigen::VectorXd& u);
};

enum class ConstraintId { YawRate = 0, FrontSlip = 1, RearSlip = 2 };
inline constexpr std::size_t kConstraintCount = 3;

struct SlipAngles {
  double front = 0.0;
  double rear = 0.0;
};

struct TireLoads {
  double F_zf = 0.0;
  double F_zr = 0.0;
  double mu_f = 0.0;
  double mu_r = 0.0;
  double F_xf = 0.0;
  double F_xr = 0.0;
};

struct LateralForce {
  double force = 0.0;
  double d_alpha = 0.0;
  double d_mu = 0.0;
};

SlipAngles slip_angles(const VehicleParams& p, const VehicleState& x, const VehicleControl& u);
TireLoads tire_loads_and_friction(const VehicleParams& p, const VehicleControl& u);

// Saturation sets in where |tan(alpha)| reaches 3 mu_eff F_z / C; the cubic
// branch meets the sliding force there with matching slope.
double fiala_lateral_force(double alpha, double C, double mu_eff, double F_z);
LateralForce fiala_lateral_force_partials(double alpha, double C, double mu_eff, double F_z);

Eigen::VectorXd vehicle_derivative(const VehicleParams& p, const VehicleState& x, const VehicleControl& u);

struct DerivativePartials {
  Eigen::VectorXd value;
  Eigen::MatrixXd dx;  // 5x5
  Eigen::MatrixXd du;  // 5x2
};
DerivativePartials vehicle_derivative_partials(const VehicleParams& p, const VehicleState& x,
                                               const VehicleControl& u);

VehicleState step(const VehicleParams& p, const VehicleState& x, const VehicleControl& u);
Linearization step_jacobians(const VehicleParams& p, const VehicleState& x, const VehicleControl& u);

UtilityEval utility(const VehicleState& x, const VehicleControl& u);

// |r v_x / mu_r| <= g, |alpha_f / mu_f| <= 3 F_zf / C_f, |alpha_r / mu_r| <= 3 F_zr / C_r,
// with friction and front slip taken from the control that produced `x`.
std::array<ConstraintEval, kConstraintCount> constraint_values(const VehicleParams& p, const VehicleState& x,
                                                               const VehicleControl& u_prev);

class VehicleModel final : public SystemModel {
 public:
  explicit VehicleModel(VehicleParams params = {});

  const VehicleParams& params() const { return params_; }

  std::size_t state_dim() const override { return 5; }
  std::size_t control_dim() const override { return 2; }
  std::size_t constraint_count() const override { return kConstraintCount; }
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
  VehicleParams params_;
};

}  // namespace cdadp::vehicle
