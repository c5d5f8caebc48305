#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

namespace nsbf {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

//! Skew-symmetric matrix such that hat(v) * w == v.cross(w).
inline Mat3 hat(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
      -v.y(), v.x(), 0.0;
  return m;
}

//! Inverse of hat() for skew-symmetric input (antisymmetric part is used).
inline Vec3 vee(const Mat3& m) {
  return Vec3(0.5 * (m(2, 1) - m(1, 2)),
              0.5 * (m(0, 2) - m(2, 0)),
              0.5 * (m(1, 0) - m(0, 1)));
}

//! Rodrigues coefficients sin(t)/t and (1-cos(t))/t^2 with series fallback
//! below t = 1e-4 (error under double rounding).
inline void rodrigues_coeffs(double theta, double& s, double& c) {
  if (theta < 1e-4) {
    const double t2 = theta * theta;
    s = 1.0 - t2 / 6.0;
    c = 0.5 - t2 / 24.0;
  } else {
    s = std::sin(theta) / theta;
    c = (1.0 - std::cos(theta)) / (theta * theta);
  }
}

//! Exponential map so(3) -> SO(3), R = I + s*hat(d) + c*hat(d)^2.
inline Mat3 expm_so3(const Vec3& delta) {
  const double theta = delta.norm();
  double s, c;
  rodrigues_coeffs(theta, s, c);
  const Mat3 d = hat(delta);
  return Mat3::Identity() + s * d + c * d * d;
}

struct So3Log {
  Vec3 delta;
  bool near_pi = false;  // angle within 1e-6 of pi
};

//! Matrix logarithm SO(3) -> so(3), canonical branch with norm <= pi.
//! Near pi the axis is recovered from the symmetric part (R+I)/2, which
//! stays well conditioned where the antisymmetric part vanishes.
inline So3Log logm_so3_status(const Mat3& R) {
  So3Log out;
  const double tr = R.trace();
  const double cos_theta = std::min(1.0, std::max(-1.0, 0.5 * (tr - 1.0)));
  const Vec3 w = vee(R);  // sin(theta) * axis

  if (cos_theta > -1.0 + 1e-8) {
    const double theta = std::acos(cos_theta);
    if (theta < M_PI - 5e-3) {
      double s, c;
      rodrigues_coeffs(theta, s, c);
      out.delta = w / s;  // w = s * delta
      return out;
    }
  }
  // Robust branch: sym(R) = cos(t) I + (1 - cos(t)) a a^T, so the outer
  // product is recovered exactly even where the antisymmetric part vanishes.
  const Mat3 B = (0.5 * (R + R.transpose()) - cos_theta * Mat3::Identity()) /
                 (1.0 - cos_theta);
  int k = 0;
  B.diagonal().maxCoeff(&k);
  Vec3 axis;
  const double ak = std::sqrt(std::max(B(k, k), 0.0));
  axis[k] = ak;
  axis[(k + 1) % 3] = B((k + 1) % 3, k) / ak;
  axis[(k + 2) % 3] = B((k + 2) % 3, k) / ak;
  axis.normalize();
  if (w.dot(axis) < 0.0) axis = -axis;  // outer product loses the sign
  // theta = pi - asin(sin(theta)); sin(theta) read off the antisymmetric part.
  const double sin_theta = std::max(0.0, w.dot(axis));
  const double theta = M_PI - std::asin(std::min(1.0, sin_theta));
  out.delta = theta * axis;
  out.near_pi = (M_PI - theta) <= 1e-6;
  return out;
}

inline Vec3 logm_so3(const Mat3& R) { return logm_so3_status(R).delta; }

//! Angle between two nonzero vectors, stable near 0 and pi.
inline double angle_between(const Vec3& a, const Vec3& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0)
    throw std::domain_error("angle_between: zero-length input");
  return std::atan2(a.cross(b).norm(), a.dot(b));
}

//! Frobenius distance from orthonormality.
inline double orthonormality_error(const Mat3& R) {
  return (R.transpose() * R - Mat3::Identity()).norm();
}

inline bool is_rotation(const Mat3& R, double tol = 1e-9) {
  return orthonormality_error(R) < tol && std::abs(R.determinant() - 1.0) < tol;
}

//! Inverse right-trivialized differential of the exponential map, truncated
//! at third order; exact enough for the small per-step increments of a
//! Lie-group Runge-Kutta integrator.
inline Vec3 dexpinv(const Vec3& theta, const Vec3& omega) {
  return omega - 0.5 * theta.cross(omega) +
         theta.cross(theta.cross(omega)) / 12.0;
}

//! Nearest rotation by Newton polar iteration; idempotent on valid input.
//! Throws if the input is not orientation preserving.
inline Mat3 renormalize(const Mat3& R) {
  if (R.determinant() <= 0.0)
    throw std::runtime_error("renormalize: determinant <= 0, integration failure");
  Mat3 X = R;
  for (int i = 0; i < 20; ++i) {
    if (orthonormality_error(X) < 1e-15) break;
    X = 0.5 * (X + X.inverse().transpose());
  }
  if (X.determinant() <= 0.0)
    throw std::runtime_error("renormalize: projection failed, determinant <= 0");
  return X;
}

}  // namespace nsbf
