#pragma once

#include <nsbf/so3.hpp>

#include <algorithm>
#include <stdexcept>
#include <vector>

namespace nsbf {

//! Evaluated path point with the path-tangential frame and its curvature
//! data. kappa = omega_p / ||dp/dxi||, iota = d kappa / d xi.
struct PathFrame {
  double xi = 0.0;
  Vec3 p = Vec3::Zero();
  double speed = 1.0;        // ||dp/dxi||
  double speed_prime = 0.0;  // d||dp/dxi||/dxi
  Mat3 R_p = Mat3::Identity();
  Vec3 omega_p = Vec3::Zero();        // frame rate per unit xi
  Vec3 omega_p_prime = Vec3::Zero();  // d omega_p / d xi
  Vec3 kappa = Vec3::Zero();
  Vec3 iota = Vec3::Zero();
  double k_nsb_local = 0.0;  // ||kappa||
};

//! Parametric path: straight line, spiral, or natural cubic spline through
//! waypoints. The frame convention is x^p along the tangent, y^p horizontal
//! (zero path roll), z^p completing the right-handed triad.
class PathSpec {
 public:
  enum class Kind { Line, Spiral, Spline };

  static PathSpec line(const Vec3& origin, const Vec3& direction) {
    PathSpec p;
    p.kind_ = Kind::Line;
    p.origin_ = origin;
    p.direction_ = direction;
    if (direction.norm() < 1e-9)
      throw std::invalid_argument("path: line direction must be nonzero");
    return p;
  }

  //! origin + <xi, a cos(freq xi), b sin(freq xi)>
  static PathSpec spiral(const Vec3& origin, double a, double b, double spatial_frequency) {
    PathSpec p;
    p.kind_ = Kind::Spiral;
    p.origin_ = origin;
    p.a_ = a;
    p.b_ = b;
    p.freq_ = spatial_frequency;
    return p;
  }

  //! Natural cubic spline through waypoints at uniform parameter spacing,
  //! extended linearly beyond both ends.
  static PathSpec spline(const std::vector<Vec3>& waypoints, double spacing) {
    if (waypoints.size() < 2) throw std::invalid_argument("path: spline needs >= 2 waypoints");
    if (spacing <= 0.0) throw std::invalid_argument("path: spline spacing must be positive");
    PathSpec p;
    p.kind_ = Kind::Spline;
    p.waypoints_ = waypoints;
    p.spacing_ = spacing;
    p.build_spline();
    return p;
  }

  Kind kind() const { return kind_; }

  Vec3 position(double xi) const {
    switch (kind_) {
      case Kind::Line:
        return origin_ + xi * direction_;
      case Kind::Spiral:
        return origin_ + Vec3(xi, a_ * std::cos(freq_ * xi), b_ * std::sin(freq_ * xi));
      case Kind::Spline:
        return spline_eval(xi, 0);
    }
    return Vec3::Zero();
  }

  Vec3 derivative(double xi) const {
    switch (kind_) {
      case Kind::Line:
        return direction_;
      case Kind::Spiral:
        return Vec3(1.0, -a_ * freq_ * std::sin(freq_ * xi), b_ * freq_ * std::cos(freq_ * xi));
      case Kind::Spline:
        return spline_eval(xi, 1);
    }
    return Vec3::Zero();
  }

  Vec3 second_derivative(double xi) const {
    switch (kind_) {
      case Kind::Line:
        return Vec3::Zero();
      case Kind::Spiral: {
        const double f2 = freq_ * freq_;
        return Vec3(0.0, -a_ * f2 * std::cos(freq_ * xi), -b_ * f2 * std::sin(freq_ * xi));
      }
      case Kind::Spline:
        return spline_eval(xi, 2);
    }
    return Vec3::Zero();
  }

  //! Full frame with curvature data. `prev_frame` resolves the horizontal
  //! axis when the tangent is within 1e-6 of vertical.
  PathFrame evaluate(double xi, const Mat3* prev_frame = nullptr) const {
    PathFrame f = frame_core(xi, prev_frame);
    // iota by central difference of the analytic kappa
    const double h = 1e-3;
    const PathFrame fp = frame_core(xi + h, &f.R_p);
    const PathFrame fm = frame_core(xi - h, &f.R_p);
    f.iota = (fp.kappa - fm.kappa) / (2.0 * h);
    f.omega_p_prime = f.speed_prime * f.kappa + f.speed * f.iota;
    return f;
  }

 private:
  PathFrame frame_core(double xi, const Mat3* prev_frame) const {
    PathFrame f;
    f.xi = xi;
    f.p = position(xi);
    const Vec3 d1 = derivative(xi);
    const Vec3 d2 = second_derivative(xi);
    const double s = d1.norm();
    if (s < 1e-9) throw std::runtime_error("path: degenerate tangent, path not regular");
    f.speed = s;
    f.speed_prime = d1.dot(d2) / s;

    const Vec3 T = d1 / s;
    Vec3 h(-T.y(), T.x(), 0.0);  // z x T
    const double hn = h.norm();
    Vec3 y_axis;
    bool analytic_rate = true;
    if (hn < 1e-6) {
      if (!prev_frame)
        throw std::runtime_error("path: vertical tangent needs a previous frame");
      const Vec3 prev_y = prev_frame->col(1);
      y_axis = (prev_y - prev_y.dot(T) * T).normalized();
      analytic_rate = false;
    } else {
      y_axis = h / hn;
    }
    f.R_p.col(0) = T;
    f.R_p.col(1) = y_axis;
    f.R_p.col(2) = T.cross(y_axis);

    // analytic frame rate from d/dxi of the columns
    const Vec3 T_dot = (d2 * s - d1 * f.speed_prime) / (s * s);
    Mat3 R_dot;
    if (analytic_rate) {
      const Vec3 h_dot(-T_dot.y(), T_dot.x(), 0.0);
      const Vec3 y_dot = h_dot / hn - h * (h.dot(h_dot)) / (hn * hn * hn);
      R_dot.col(0) = T_dot;
      R_dot.col(1) = y_dot;
      R_dot.col(2) = T_dot.cross(y_axis) + T.cross(y_dot);
      f.omega_p = vee(f.R_p.transpose() * R_dot);
    } else {
      // near-vertical fallback: difference the frame itself
      const double hh = 1e-5;
      const PathFrame a = frame_core_simple(xi - hh, f.R_p);
      const PathFrame b = frame_core_simple(xi + hh, f.R_p);
      f.omega_p = logm_so3(a.R_p.transpose() * b.R_p) / (2.0 * hh);
    }
    f.kappa = f.omega_p / s;
    f.k_nsb_local = f.kappa.norm();
    return f;
  }

  PathFrame frame_core_simple(double xi, const Mat3& hint) const {
    PathFrame f;
    f.xi = xi;
    f.p = position(xi);
    const Vec3 d1 = derivative(xi);
    const double s = d1.norm();
    if (s < 1e-9) throw std::runtime_error("path: degenerate tangent, path not regular");
    const Vec3 T = d1 / s;
    Vec3 h(-T.y(), T.x(), 0.0);
    Vec3 y_axis;
    if (h.norm() < 1e-6) {
      const Vec3 prev_y = hint.col(1);
      y_axis = (prev_y - prev_y.dot(T) * T).normalized();
    } else {
      y_axis = h.normalized();
    }
    f.R_p.col(0) = T;
    f.R_p.col(1) = y_axis;
    f.R_p.col(2) = T.cross(y_axis);
    return f;
  }

  void build_spline() {
    const int m = static_cast<int>(waypoints_.size());
    spline_m2_.assign(m, Vec3::Zero());
    if (m == 2) return;  // natural spline through two points is a line
    // tridiagonal solve for second derivatives, natural boundary conditions
    std::vector<double> diag(m, 0.0), rhs_f(m, 0.0);
    std::vector<Vec3> rhs(m, Vec3::Zero());
    for (int i = 1; i + 1 < m; ++i)
      rhs[i] = 6.0 * (waypoints_[i + 1] - 2.0 * waypoints_[i] + waypoints_[i - 1]) /
               (spacing_ * spacing_);
    std::vector<double> c(m, 0.0);
    std::vector<Vec3> d(m, Vec3::Zero());
    double b = 4.0;
    c[1] = 1.0 / b;
    d[1] = rhs[1] / b;
    for (int i = 2; i + 1 < m; ++i) {
      const double denom = 4.0 - c[i - 1];
      c[i] = 1.0 / denom;
      d[i] = (rhs[i] - d[i - 1]) / denom;
    }
    for (int i = m - 2; i >= 1; --i) spline_m2_[i] = d[i] - c[i] * spline_m2_[i + 1];
  }

  Vec3 spline_eval(double xi, int order) const {
    const int m = static_cast<int>(waypoints_.size());
    const double t_end = spacing_ * (m - 1);
    if (xi <= 0.0) {
      const Vec3 d1 = spline_tangent(0);
      if (order == 0) return waypoints_.front() + xi * d1;
      if (order == 1) return d1;
      return Vec3::Zero();
    }
    if (xi >= t_end) {
      const Vec3 d1 = spline_tangent(m - 1);
      if (order == 0) return waypoints_.back() + (xi - t_end) * d1;
      if (order == 1) return d1;
      return Vec3::Zero();
    }
    const int seg = std::min(static_cast<int>(xi / spacing_), m - 2);
    const double a = (spacing_ * (seg + 1) - xi) / spacing_;
    const double bb = (xi - spacing_ * seg) / spacing_;
    const Vec3& qa = waypoints_[seg];
    const Vec3& qb = waypoints_[seg + 1];
    const Vec3& ma = spline_m2_[seg];
    const Vec3& mb = spline_m2_[seg + 1];
    const double h = spacing_;
    if (order == 0)
      return a * qa + bb * qb +
             ((a * a * a - a) * ma + (bb * bb * bb - bb) * mb) * (h * h) / 6.0;
    if (order == 1)
      return (qb - qa) / h + ((3 * bb * bb - 1) * mb - (3 * a * a - 1) * ma) * h / 6.0;
    return a * ma + bb * mb;
  }

  Vec3 spline_tangent(int node) const {
    const int m = static_cast<int>(waypoints_.size());
    const double h = spacing_;
    if (node == 0)
      return (waypoints_[1] - waypoints_[0]) / h - h / 6.0 * (2.0 * spline_m2_[0] + spline_m2_[1]);
    return (waypoints_[m - 1] - waypoints_[m - 2]) / h +
           h / 6.0 * (spline_m2_[m - 2] + 2.0 * spline_m2_[m - 1]);
  }

  Kind kind_ = Kind::Line;
  Vec3 origin_ = Vec3::Zero();
  Vec3 direction_ = Vec3::UnitX();
  double a_ = 0.0, b_ = 0.0, freq_ = 0.0;
  std::vector<Vec3> waypoints_;
  double spacing_ = 1.0;
  std::vector<Vec3> spline_m2_;  // second derivatives at the knots
};

//! Barycenter position expressed in the path-tangential frame.
inline Vec3 path_error(const Vec3& p_b, const PathFrame& frame) {
  return frame.R_p.transpose() * (p_b - frame.p);
}

//! Path parameter update law. D >= Delta > 0 by construction of the caller.
inline double xi_rate(const PathFrame& frame, double x_bp, double U_los, double Delta,
                      double D, double k_xi) {
  return (U_los / frame.speed) *
         (Delta / D + k_xi * x_bp / std::sqrt(1.0 + x_bp * x_bp));
}

//! Grid supremum of ||kappa|| * max_i ||p_f_i|| * (1 + k_xi) over the xi
//! range; the U_LOS law needs this below one.
inline double k_nsb(const PathSpec& path, double max_formation_norm, double k_xi,
                    double xi_lo, double xi_hi, int grid_points = 10000) {
  double sup = 0.0;
  const Mat3* hint = nullptr;
  Mat3 prev;
  for (int i = 0; i <= grid_points; ++i) {
    const double xi = xi_lo + (xi_hi - xi_lo) * i / grid_points;
    const PathFrame f = path.evaluate(xi, hint);
    prev = f.R_p;
    hint = &prev;
    sup = std::max(sup, f.k_nsb_local);
  }
  return sup * max_formation_norm * (1.0 + k_xi);
}

}  // namespace nsbf
