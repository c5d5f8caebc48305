#pragma once

#include <nsbf/reference.hpp>

namespace nsbf {

//! Surge/attitude tracking error: u - u_d, logm(R_d^T R), omega - R~^T omega_d.
struct TrackingError {
  double u_tilde = 0.0;
  Vec3 delta = Vec3::Zero();
  Vec3 omega_tilde = Vec3::Zero();
  bool near_pi = false;

  double norm() const {
    return std::sqrt(u_tilde * u_tilde + delta.squaredNorm() + omega_tilde.squaredNorm());
  }
};

struct ControlGains {
  double k_u = 2.0;
  double k_R = 5.0;
  double k_omega = 3.0;
};

inline TrackingError tracking_error(const VehicleState& state, const GuidanceCommand& cmd) {
  TrackingError err;
  err.u_tilde = state.v.x() - cmd.u_d;
  const Mat3 R_tilde = cmd.R_d.transpose() * state.R;
  const So3Log lg = logm_so3_status(R_tilde);
  err.delta = lg.delta;
  err.near_pi = lg.near_pi;
  err.omega_tilde = state.omega - R_tilde.transpose() * cmd.omega_d;
  return err;
}

//! Model-based tracking law: the surge channel cancels the known dynamics and
//! adds -k_u u~; the attitude channel is a geometric law -k_R delta - k_w w~
//! with the reference-rate feedforward. Produces no sway/heave acceleration
//! by construction of the allocation.
inline GeneralizedForce control(const VehicleState& state, const GuidanceCommand& cmd,
                                const OceanCurrent& current, const ModelParams& params,
                                const ControlGains& gains) {
  const Vec3 v_c = body_current(state.R, current);
  Vec6 nu_r = state.nu();
  nu_r.head<3>() -= v_c;
  const Vec6 h =
      params.M.ldlt().solve(coriolis(params, nu_r) * nu_r + params.D * nu_r +
                            restoring(params, state.R));

  const TrackingError err = tracking_error(state, cmd);
  const double f_u = h(0) - current_body_derivative(v_c, state.omega).x() +
                     cmd.u_d_dot - gains.k_u * err.u_tilde;

  const Mat3 R_tilde = cmd.R_d.transpose() * state.R;
  const Vec3 ff = -state.omega.cross(R_tilde.transpose() * cmd.omega_d) +
                  R_tilde.transpose() * cmd.omega_d_dot;
  const Vec3 torque =
      h.tail<3>() + ff - gains.k_R * err.delta - gains.k_omega * err.omega_tilde;
  return GeneralizedForce{f_u, torque};
}

//! Kinematic override realizing perfect tracking: surge, attitude and body
//! rates snap to the references; sway and heave are untouched.
inline void ideal_actuation(VehicleState& state, const GuidanceCommand& cmd) {
  state.v.x() = cmd.u_d;
  state.R = cmd.R_d;
  state.omega = cmd.omega_d;
}

}  // namespace nsbf
