#pragma once

#include <nsbf/so3.hpp>

#include <string>
#include <vector>

namespace nsbf {

using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;

//! One vehicle: inertial position (NED, z down), body->inertial rotation,
//! body linear velocity (u, v, w) and body angular velocity (p, q, r).
struct VehicleState {
  Vec3 p = Vec3::Zero();
  Mat3 R = Mat3::Identity();
  Vec3 v = Vec3::Zero();
  Vec3 omega = Vec3::Zero();

  Vec6 nu() const {
    Vec6 n;
    n << v, omega;
    return n;
  }
  bool finite() const {
    return p.allFinite() && R.allFinite() && v.allFinite() && omega.allFinite();
  }
};

//! Constant irrotational ocean current, inertial frame.
struct OceanCurrent {
  Vec3 V_c = Vec3::Zero();
};

//! Coefficients of the affine sway/heave channels
//!   v_dot = X_v(u_r) r + Y_v(u_r) v_r + Z_v(p) w_r + current term
//!   w_dot = X_w(u_r) q + Y_w(u_r) w_r + Z_w(p) v_r + current term
//! with X_v(u_r) = X_v0 + X_v1 u_r and so on.
struct AffineCoeffs {
  double X_v0 = 0, X_v1 = 0, Y_v0 = 0, Y_v1 = 0, Z_v0 = 0, Z_v1 = 0;
  double X_w0 = 0, X_w1 = 0, Y_w0 = 0, Y_w1 = 0, Z_w0 = 0, Z_w1 = 0;
};

//! Rigid-body + added-mass model. M and D are restricted to the symmetric
//! vehicle structure (diagonal M; damping couples sway<->yaw and
//! heave<->pitch at most), which is what makes the sway/heave channels
//! reduce to the affine form above.
struct ModelParams {
  Mat6 M = Mat6::Identity();
  Mat6 D = Mat6::Zero();
  double weight = 0.0;     // W = B, neutrally buoyant [N]
  double cb_offset = 0.0;  // CB height above CG along body -z [m]
  double u_min = 0.1;      // minimum maneuvering surge [m/s]
  double u_max = 2.0;      // surge reference cap [m/s]
  AffineCoeffs affine;     // derived from M, D unless overridden
  bool affine_overridden = false;

  Mat3 M_lin() const { return M.topLeftCorner<3, 3>(); }
  Mat3 M_rot() const { return M.bottomRightCorner<3, 3>(); }
};

//! Acceleration-space actuation: M^{-1} B f = <f_u, 0, 0, t_p, t_q, t_r>.
struct GeneralizedForce {
  double f_u = 0.0;
  Vec3 torque = Vec3::Zero();

  Vec6 accel() const {
    Vec6 a;
    a << f_u, 0.0, 0.0, torque;
    return a;
  }
};

inline GeneralizedForce allocate(double f_u, double t_p, double t_q, double t_r) {
  return GeneralizedForce{f_u, Vec3(t_p, t_q, t_r)};
}

inline Vec3 body_current(const Mat3& R, const OceanCurrent& current) {
  return R.transpose() * current.V_c;
}

inline Vec3 current_body_derivative(const Vec3& v_c, const Vec3& omega) {
  return v_c.cross(omega);
}

//! Coriolis/centripetal matrix for a diagonal M, added mass included.
inline Mat6 coriolis(const ModelParams& params, const Vec6& nu_r) {
  const Vec3 v_r = nu_r.head<3>();
  const Vec3 omega = nu_r.tail<3>();
  const Mat3 s_lin = hat(params.M_lin() * v_r);
  Mat6 C = Mat6::Zero();
  C.topRightCorner<3, 3>() = -s_lin;
  C.bottomLeftCorner<3, 3>() = -s_lin;
  C.bottomRightCorner<3, 3>() = -hat(params.M_rot() * omega);
  return C;
}

//! Gravity/buoyancy vector for a neutrally buoyant vehicle with CB above CG:
//! no net force, a restoring moment only.
inline Vec6 restoring(const ModelParams& params, const Mat3& R) {
  const Vec3 e3(0, 0, 1);
  Vec6 g = Vec6::Zero();
  g.tail<3>() = -params.cb_offset * params.weight * e3.cross(R.transpose() * e3);
  return g;
}

struct StateDerivative {
  Vec3 p_dot = Vec3::Zero();
  Vec3 omega = Vec3::Zero();  // attitude generator: R_dot = R hat(omega)
  Vec6 nu_dot = Vec6::Zero();
};

inline StateDerivative dynamics_derivative(const VehicleState& state,
                                           const GeneralizedForce& force,
                                           const OceanCurrent& current,
                                           const ModelParams& params) {
  if (!state.finite())
    throw std::runtime_error("dynamics_derivative: non-finite state");
  const Vec3 v_c = body_current(state.R, current);
  Vec6 nu_r = state.nu();
  nu_r.head<3>() -= v_c;

  const Mat6 C = coriolis(params, nu_r);
  const Vec6 rhs = (C + params.D) * nu_r + restoring(params, state.R);
  Vec6 nu_r_dot = force.accel() - params.M.ldlt().solve(rhs);

  StateDerivative out;
  out.p_dot = state.R * state.v;
  out.omega = state.omega;
  out.nu_dot = nu_r_dot;
  out.nu_dot.head<3>() += current_body_derivative(v_c, state.omega);
  return out;
}

//! Sway/heave accelerations through the affine form (independent of the
//! generalized force by construction).
inline Eigen::Vector2d underactuated_derivative(const VehicleState& state,
                                                const OceanCurrent& current,
                                                const ModelParams& params) {
  const AffineCoeffs& a = params.affine;
  const Vec3 v_c = body_current(state.R, current);
  const double u_r = state.v.x() - v_c.x();
  const double v_r = state.v.y() - v_c.y();
  const double w_r = state.v.z() - v_c.z();
  const double p = state.omega.x();
  const double q = state.omega.y();
  const double r = state.omega.z();
  const Vec3 vc_dot = current_body_derivative(v_c, state.omega);

  const double v_dot = (a.X_v0 + a.X_v1 * u_r) * r + (a.Y_v0 + a.Y_v1 * u_r) * v_r +
                       (a.Z_v0 + a.Z_v1 * p) * w_r + vc_dot.y();
  const double w_dot = (a.X_w0 + a.X_w1 * u_r) * q + (a.Y_w0 + a.Y_w1 * u_r) * w_r +
                       (a.Z_w0 + a.Z_w1 * p) * v_r + vc_dot.z();
  return {v_dot, w_dot};
}

//! Eliminates the sway and heave rows of M nu_dot + (C+D) nu = tau into the
//! affine coefficient form. Requires the symmetric-vehicle structure.
inline AffineCoeffs derive_affine(const Mat6& M, const Mat6& D) {
  AffineCoeffs a;
  const double m11 = M(0, 0), m22 = M(1, 1), m33 = M(2, 2);
  a.X_v1 = -m11 / m22;
  a.Z_v1 = m33 / m22;
  a.Y_v0 = -D(1, 1) / m22;
  a.X_v0 = -D(1, 5) / m22;
  a.X_w1 = m11 / m33;
  a.Z_w1 = -m22 / m33;
  a.Y_w0 = -D(2, 2) / m33;
  a.X_w0 = -D(2, 4) / m33;
  return a;
}

//! Kinetic plus restoring potential energy; dissipates under pure damping.
inline double mechanical_energy(const VehicleState& state, const ModelParams& params) {
  const Vec6 nu = state.nu();
  const double kinetic = 0.5 * nu.dot(params.M * nu);
  const Vec3 e3(0, 0, 1);
  const double potential =
      params.cb_offset * params.weight * (1.0 - (state.R.transpose() * e3).z());
  return kinetic + potential;
}

inline void validate_model(const ModelParams& params, std::vector<std::string>& errors) {
  if ((params.M - params.M.transpose()).norm() > 1e-9 * params.M.norm())
    errors.push_back("model: mass matrix must be symmetric");
  Eigen::SelfAdjointEigenSolver<Mat6> eig(params.M);
  if (eig.eigenvalues().minCoeff() <= 0.0)
    errors.push_back("model: mass matrix must be positive definite");
  Mat6 offdiag = params.M;
  offdiag.diagonal().setZero();
  if (offdiag.norm() > 1e-9 * params.M.norm())
    errors.push_back("model: mass matrix must be diagonal (symmetric vehicle)");
  for (int r = 1; r <= 2; ++r)
    for (int c = 0; c < 6; ++c) {
      const bool allowed = (c == r) || (r == 1 && c == 5) || (r == 2 && c == 4);
      if (!allowed && params.D(r, c) != 0.0)
        errors.push_back("model: damping row " + std::to_string(r) +
                         " breaks the affine sway/heave structure");
    }
  if (params.D(1, 1) <= 0.0 || params.D(2, 2) <= 0.0)
    errors.push_back("model: sway/heave damping must be strictly positive");
  if (params.u_min <= 0.0) errors.push_back("model: u_min must be positive");
  if (params.u_max <= params.u_min) errors.push_back("model: u_max must exceed u_min");
  if (params.weight < 0.0 || params.cb_offset < 0.0)
    errors.push_back("model: weight and cb_offset must be non-negative");

  const AffineCoeffs derived = derive_affine(params.M, params.D);
  const AffineCoeffs& a = params.affine;
  const double mismatch =
      std::abs(a.X_v0 - derived.X_v0) + std::abs(a.X_v1 - derived.X_v1) +
      std::abs(a.Y_v0 - derived.Y_v0) + std::abs(a.Y_v1 - derived.Y_v1) +
      std::abs(a.Z_v0 - derived.Z_v0) + std::abs(a.Z_v1 - derived.Z_v1) +
      std::abs(a.X_w0 - derived.X_w0) + std::abs(a.X_w1 - derived.X_w1) +
      std::abs(a.Y_w0 - derived.Y_w0) + std::abs(a.Y_w1 - derived.Y_w1) +
      std::abs(a.Z_w0 - derived.Z_w0) + std::abs(a.Z_w1 - derived.Z_w1);
  if (mismatch > 1e-9)
    errors.push_back("model: affine coefficients inconsistent with M and D");
}

//! Default survey-vehicle parameter set used by the shipped scenarios.
//! Lateral added mass is deliberately generous so that the reference
//! algebraic loop stays well conditioned over the whole operating envelope.
inline ModelParams default_model() {
  ModelParams p;
  p.M = Vec6(19.0, 480.0, 480.0, 0.5, 8.0, 8.0).asDiagonal();
  p.D = Vec6(4.0, 576.0, 576.0, 0.3, 10.0, 10.0).asDiagonal();
  p.weight = 18.0 * 9.81;
  p.cb_offset = 0.02;
  p.u_min = 0.7;
  p.u_max = 2.8;
  p.affine = derive_affine(p.M, p.D);
  return p;
}

}  // namespace nsbf
