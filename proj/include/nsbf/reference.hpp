#pragma once

#include <nsbf/tasks.hpp>
#include <nsbf/vehicle.hpp>

namespace nsbf {

//! Path-following speed law. Smooth in the sway/heave velocities; requires
//! k_nsb < 1 for the closed-loop surge condition to be satisfiable.
inline double u_los(const std::vector<Eigen::Vector2d>& sway_heave, double v2_max,
                    double u_min, double k_nsb) {
  if (k_nsb >= 1.0)
    throw std::runtime_error("u_los: k_nsb >= 1, speed law undefined");
  double sum = u_min * u_min;
  for (const auto& vw : sway_heave) sum += vw.squaredNorm();
  return (v2_max + std::sqrt(sum)) / (1.0 - k_nsb);
}

inline double u_los_rate(const std::vector<Eigen::Vector2d>& sway_heave,
                         const std::vector<Eigen::Vector2d>& sway_heave_dot,
                         double u_min, double k_nsb) {
  double sum = u_min * u_min;
  double dot = 0.0;
  for (size_t i = 0; i < sway_heave.size(); ++i) {
    sum += sway_heave[i].squaredNorm();
    dot += sway_heave[i].dot(sway_heave_dot[i]);
  }
  return dot / ((1.0 - k_nsb) * std::sqrt(sum));
}

struct SurgeReference {
  double u_d = 0.0;
  bool condition_met = false;
};

//! Surge reference realizing the commanded speed along the body x-axis,
//! with the minimum-speed fallback when the speed condition fails.
inline SurgeReference surge_reference(const Vec3& v_nsb_i, double v, double w,
                                      double u_min) {
  SurgeReference out;
  const double margin = v_nsb_i.squaredNorm() - v * v - w * w;
  if (margin >= u_min * u_min) {
    out.u_d = std::sqrt(margin);
    out.condition_met = true;
  } else {
    out.u_d = u_min;
  }
  return out;
}

//! Angular velocity of the normalized direction of x: (x cross x_dot)/||x||^2.
inline Vec3 pseudo_angular_velocity(const Vec3& x, const Vec3& x_dot) {
  const double n2 = x.squaredNorm();
  if (n2 < 1e-18)
    throw std::domain_error("pseudo_angular_velocity: degenerate direction");
  return x.cross(x_dot) / n2;
}

// ---------------------------------------------------------------------------
// Nominal guidance: stacked NSB velocity and its exact time derivative when
// only the formation and LOS tasks are active.
// ---------------------------------------------------------------------------

struct VehicleKinematics {
  Vec3 p = Vec3::Zero();      // inertial position
  Vec3 p_dot = Vec3::Zero();  // inertial velocity R v
  double v = 0.0, w = 0.0;    // sway, heave
  double v_dot = 0.0, w_dot = 0.0;
};

struct NominalParams {
  double delta0 = 5.0;
  double k_xi = 0.25;
  double lambda2 = 0.1;
  double v2_max = 0.5;
  double u_min = 0.5;
  double k_nsb = 0.0;
};

struct NominalGuidance {
  double U_los = 0.0, U_los_dot = 0.0;
  double Delta = 0.0, D = 0.0;
  double xi_dot = 0.0, xi_ddot = 0.0;
  Vec3 p_bp = Vec3::Zero(), p_bp_dot = Vec3::Zero();
  Vec3 v_los = Vec3::Zero(), v_los_dot = Vec3::Zero();
  VecX sigma_err, sigma_err_dot;          // 3(n-1)
  std::vector<Vec3> v_nsb, v_nsb_dot;     // per vehicle
  std::vector<Vec3> feedforward;          // Rp_dot f_i per vehicle
};

//! Assembles the nominal per-vehicle NSB velocities and their analytic time
//! derivatives by chain rule through the LOS law, the path parameter update,
//! and the saturated formation feedback.
inline NominalGuidance nominal_guidance(const std::vector<VehicleKinematics>& fleet,
                                        const FormationSpec& formation,
                                        const PathFrame& frame, const NominalParams& par) {
  const int n = static_cast<int>(fleet.size());
  NominalGuidance out;

  std::vector<Eigen::Vector2d> vw(n), vw_dot(n);
  Vec3 p_b = Vec3::Zero(), p_b_dot = Vec3::Zero();
  for (int i = 0; i < n; ++i) {
    vw[i] = {fleet[i].v, fleet[i].w};
    vw_dot[i] = {fleet[i].v_dot, fleet[i].w_dot};
    p_b += fleet[i].p;
    p_b_dot += fleet[i].p_dot;
  }
  p_b /= n;
  p_b_dot /= n;

  out.U_los = u_los(vw, par.v2_max, par.u_min, par.k_nsb);
  out.U_los_dot = u_los_rate(vw, vw_dot, par.u_min, par.k_nsb);

  out.p_bp = frame.R_p.transpose() * (p_b - frame.p);
  const double x = out.p_bp.x(), y = out.p_bp.y(), z = out.p_bp.z();
  out.Delta = std::sqrt(par.delta0 * par.delta0 + out.p_bp.squaredNorm());
  out.D = std::sqrt(out.Delta * out.Delta + y * y + z * z);

  const double s = frame.speed;
  const double sx = std::sqrt(1.0 + x * x);
  const double F = out.Delta / out.D + par.k_xi * x / sx;
  out.xi_dot = out.U_los / s * F;

  out.p_bp_dot = -out.xi_dot * frame.omega_p.cross(out.p_bp) +
                 frame.R_p.transpose() * p_b_dot - out.xi_dot * s * Vec3::UnitX();
  const double xd = out.p_bp_dot.x(), yd = out.p_bp_dot.y(), zd = out.p_bp_dot.z();
  const double Delta_dot = out.p_bp.dot(out.p_bp_dot) / out.Delta;
  const double D_dot = (out.Delta * Delta_dot + y * yd + z * zd) / out.D;

  const Vec3 g(out.Delta, -y, -z);
  const Vec3 g_dot(Delta_dot, -yd, -zd);
  out.v_los = (out.U_los / out.D) * (frame.R_p * g);
  out.v_los_dot =
      (out.U_los_dot / out.D - out.U_los * D_dot / (out.D * out.D)) * (frame.R_p * g) +
      (out.U_los / out.D) *
          (out.xi_dot * (frame.R_p * frame.omega_p.cross(g)) + frame.R_p * g_dot);

  const double F_dot = (Delta_dot * out.D - out.Delta * D_dot) / (out.D * out.D) +
                       par.k_xi * xd / (sx * sx * sx);
  out.xi_ddot = out.U_los_dot / s * F -
                out.U_los * frame.speed_prime * out.xi_dot / (s * s) * F +
                out.U_los / s * F_dot;

  // formation error and its rate
  out.sigma_err = VecX(3 * (n - 1));
  out.sigma_err_dot = VecX(3 * (n - 1));
  for (int i = 0; i + 1 < n; ++i) {
    out.sigma_err.segment<3>(3 * i) =
        (fleet[i].p - p_b) - frame.R_p * formation.offsets[i];
    out.sigma_err_dot.segment<3>(3 * i) =
        (fleet[i].p_dot - p_b_dot) -
        out.xi_dot * (frame.R_p * frame.omega_p.cross(formation.offsets[i]));
  }

  // saturated feedback and its derivative
  const VecX y2 = par.lambda2 * out.sigma_err;
  const VecX y2_dot = par.lambda2 * out.sigma_err_dot;
  const double r = y2.norm();
  const double phi = sat_gain(r);
  VecX dsat = phi * y2_dot;
  if (r > 1e-9) dsat += sat_gain_prime(r) * (y2.dot(y2_dot) / r) * y2;
  const MatX J2p = formation_jacobian_pinv(n);
  const VecX fb = -par.v2_max * (J2p * (phi * y2));
  const VecX fb_dot = -par.v2_max * (J2p * dsat);

  // feedforward through the rotating path frame
  const Mat3 W = hat(frame.omega_p);
  const Mat3 Wp = hat(frame.omega_p_prime);
  out.v_nsb.resize(n);
  out.v_nsb_dot.resize(n);
  out.feedforward.resize(n);
  for (int i = 0; i < n; ++i) {
    const Vec3 f = formation.offsets[i];
    out.feedforward[i] = out.xi_dot * (frame.R_p * (W * f));
    const Vec3 ff_dot =
        frame.R_p * (out.xi_dot * out.xi_dot * (W * (W * f)) +
                     out.xi_dot * out.xi_dot * (Wp * f) + out.xi_ddot * (W * f));
    out.v_nsb[i] = out.v_los + out.feedforward[i] + fb.segment<3>(3 * i);
    out.v_nsb_dot[i] = out.v_los_dot + ff_dot + fb_dot.segment<3>(3 * i);
  }
  return out;
}

//! Per-vehicle NSB velocity and derivative on the zero-error manifold,
//! assuming a stationary U_LOS (the form the closed-loop bounds use).
struct ManifoldGuidance {
  Vec3 v_nsb = Vec3::Zero();
  Vec3 v_nsb_dot = Vec3::Zero();
  Vec3 omega_v_nsb = Vec3::Zero();
  Vec3 e_p = Vec3::UnitX();
  Vec3 e_d = Vec3::Zero();
};

inline ManifoldGuidance manifold_guidance(const PathFrame& frame, const Vec3& offset,
                                          double U_los) {
  ManifoldGuidance out;
  out.e_p = Vec3::UnitX() + frame.kappa.cross(offset);
  out.e_d = frame.kappa.cross(out.e_p) + frame.iota.cross(offset) / frame.speed;
  out.v_nsb = U_los * (frame.R_p * out.e_p);
  out.v_nsb_dot = U_los * U_los * (frame.R_p * out.e_d);
  out.omega_v_nsb = pseudo_angular_velocity(out.v_nsb, out.v_nsb_dot);
  return out;
}

// ---------------------------------------------------------------------------
// Affine resolution of the algebraic loop in the orientation reference.
// ---------------------------------------------------------------------------

//! omega_v = A omega + omega0 where omega_v is the pseudo-angular velocity of
//! the body linear velocity under the underactuated dynamics.
struct AffineLoop {
  Mat3 A_hat = Mat3::Zero();
  Vec3 omega0_hat = Vec3::Zero();
  Mat3 A = Mat3::Zero();
  Vec3 omega0 = Vec3::Zero();
  double det = 1.0;  // det(I + A)
  Vec3 v_body = Vec3::UnitX();

  bool resolvable(double floor = 1e-3) const { return det > floor; }
  Vec3 omega_v(const Vec3& omega) const { return omega0 + A * omega; }
};

//! Builds the loop from the commanded surge, measured sway/heave, the body
//! current, and the NSB velocity with its derivative. v_dot = A_hat omega +
//! omega0_hat reproduces the underactuated dynamics rows exactly; the first
//! row is the chain rule of u = sqrt(||v_nsb||^2 - v^2 - w^2).
inline AffineLoop affine_loop(double u_cmd, double v, double w, const Vec3& v_c,
                              const AffineCoeffs& cf, const Vec3& v_nsb,
                              const Vec3& v_nsb_dot, double u_min) {
  if (u_cmd < u_min - 1e-12)
    throw std::domain_error("affine_loop: surge below u_min");
  const double u = u_cmd;
  const double u_c = v_c.x(), vc = v_c.y(), wc = v_c.z();
  const double u_r = u - u_c, v_r = v - vc, w_r = w - wc;

  AffineLoop out;
  const double Xv = cf.X_v0 + cf.X_v1 * u_r;
  const double Xw = cf.X_w0 + cf.X_w1 * u_r;
  const double cv = (cf.Y_v0 + cf.Y_v1 * u_r) * v_r + cf.Z_v0 * w_r;
  const double cw = (cf.Y_w0 + cf.Y_w1 * u_r) * w_r + cf.Z_w0 * v_r;

  out.A_hat(1, 0) = wc + cf.Z_v1 * w_r;
  out.A_hat(1, 2) = Xv - u_c;
  out.A_hat(2, 0) = cf.Z_w1 * v_r - vc;
  out.A_hat(2, 1) = Xw + u_c;
  out.A_hat(0, 0) = -(v * out.A_hat(1, 0) + w * out.A_hat(2, 0)) / u;
  out.A_hat(0, 1) = -w * out.A_hat(2, 1) / u;
  out.A_hat(0, 2) = -v * out.A_hat(1, 2) / u;

  out.omega0_hat = Vec3((v_nsb.dot(v_nsb_dot) - v * cv - w * cw) / u, cv, cw);

  out.v_body = Vec3(u, v, w);
  const double n2 = out.v_body.squaredNorm();
  out.A = hat(out.v_body) * out.A_hat / n2;
  out.omega0 = out.v_body.cross(out.omega0_hat) / n2;
  out.det = (Mat3::Identity() + out.A).determinant();
  return out;
}

//! Resolves the desired angular velocity through (I + A)^{-1}.
inline Vec3 desired_angular_velocity(const AffineLoop& loop, const Mat3& R_d,
                                     const Vec3& omega_v_nsb) {
  if (!loop.resolvable())
    throw std::runtime_error("desired_angular_velocity: algebraic loop unresolvable, det " +
                             std::to_string(loop.det));
  return (Mat3::Identity() + loop.A)
      .partialPivLu()
      .solve(R_d.transpose() * omega_v_nsb - loop.omega0);
}

//! Cross-product residual of the orientation-rate constraint.
inline double reference_residual(const AffineLoop& loop, const Mat3& R_d,
                                 const Vec3& omega_v_nsb, const Vec3& omega_d) {
  const Vec3 lhs = omega_d + loop.omega_v(omega_d) - R_d.transpose() * omega_v_nsb;
  return lhs.cross(loop.v_body.normalized()).norm();
}

inline Mat3 step_reference_orientation(const Mat3& R_d, const Vec3& omega_d, double dt) {
  return R_d * expm_so3(omega_d * dt);
}

//! Per-vehicle reference bundle handed to the tracking layer.
struct GuidanceCommand {
  double u_d = 0.0;
  Mat3 R_d = Mat3::Identity();
  Vec3 omega_d = Vec3::Zero();
  double u_d_dot = 0.0;           // feedforward, differenced per tick
  Vec3 omega_d_dot = Vec3::Zero();
  bool condition_met = true;      // surge speed condition
  bool loop_resolved = true;      // algebraic loop inverted (no fallback)
};

//! Minimal rotation mapping the normalized body velocity onto the normalized
//! NSB velocity. Antiparallel inputs rotate by pi about a canonical
//! transverse axis.
inline Mat3 initialize_reference(const Vec3& v_body, const Vec3& v_nsb) {
  const double nv = v_body.norm(), nn = v_nsb.norm();
  if (nv < 1e-12 || nn < 1e-12)
    throw std::domain_error("initialize_reference: zero-length direction");
  const Vec3 a = v_body / nv, b = v_nsb / nn;
  const Vec3 axis = a.cross(b);
  const double angle = angle_between(a, b);
  if (axis.norm() > 1e-12 && angle < M_PI - 1e-9)
    return expm_so3(angle * axis.normalized());
  if (angle < 1e-12) return Mat3::Identity();
  // antiparallel: pi turn about a transverse axis, the y direction if usable
  Vec3 t = Vec3::UnitY() - Vec3::UnitY().dot(a) * a;
  if (t.norm() < 1e-6) t = Vec3::UnitX() - Vec3::UnitX().dot(a) * a;
  return expm_so3(M_PI * t.normalized());
}

}  // namespace nsbf
