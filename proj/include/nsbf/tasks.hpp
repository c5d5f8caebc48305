#pragma once

#include <nsbf/path.hpp>

#include <Eigen/SVD>
#include <optional>
#include <stdexcept>
#include <vector>

namespace nsbf {

using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

//! Vehicle positions only; the barycenter is always recomputed.
struct FleetState {
  std::vector<Vec3> p;

  int n() const { return static_cast<int>(p.size()); }
  Vec3 barycenter() const {
    Vec3 b = Vec3::Zero();
    for (const Vec3& pi : p) b += pi;
    return b / static_cast<double>(p.size());
  }
};

//! Desired displacements in the formation-centered frame; must sum to zero.
struct FormationSpec {
  std::vector<Vec3> offsets;

  int n() const { return static_cast<int>(offsets.size()); }
  double max_norm() const {
    double m = 0.0;
    for (const Vec3& f : offsets) m = std::max(m, f.norm());
    return m;
  }
  bool sums_to_zero(double tol = 1e-12) const {
    Vec3 s = Vec3::Zero();
    for (const Vec3& f : offsets) s += f;
    return s.norm() <= tol;
  }
};

struct TaskOutput {
  VecX velocity;  // stacked 3n
  MatX jacobian;  // rows x 3n, empty when inactive
  bool active = false;
};

struct Obstacle {
  Vec3 p = Vec3::Zero();
  Vec3 vel = Vec3::Zero();
  double radius = 1.0;
};

enum class TurnDirection { None, Clockwise, Counterclockwise };
enum class DepthMode { None, TooShallow, TooDeep };

//! Discrete switching state carried across guidance ticks: COLAV pair
//! hysteresis, the held obstacle-avoidance branch, and the depth mode.
struct AvoidanceMemory {
  std::vector<std::pair<int, int>> colav_pairs;
  std::vector<TurnDirection> oa_direction;  // per obstacle
  std::vector<int> oa_idle_ticks;           // ticks since oa was last required
  DepthMode depth = DepthMode::None;

  void reset(int n_obstacles) {
    colav_pairs.clear();
    oa_direction.assign(n_obstacles, TurnDirection::None);
    oa_idle_ticks.assign(n_obstacles, 0);
    depth = DepthMode::None;
  }
  bool colav_active() const { return !colav_pairs.empty(); }
  bool oa_active() const {
    for (TurnDirection d : oa_direction)
      if (d != TurnDirection::None) return true;
    return false;
  }
};

//! Smooth vector saturation x tanh(||x||)/||x||; returns 0 at 0.
inline double sat_gain(double r) {
  if (r < 1e-8) return 1.0 - r * r / 3.0;
  return std::tanh(r) / r;
}

//! d/dr of sat_gain, needed by the analytic velocity derivative.
inline double sat_gain_prime(double r) {
  if (r < 1e-6) return -2.0 * r / 3.0;
  const double t = std::tanh(r);
  return ((1.0 - t * t) * r - t) / (r * r);
}

inline VecX saturate(const VecX& x) { return sat_gain(x.norm()) * x; }

struct Pinv {
  MatX m;
  double min_sv = 0.0;
  double max_sv = 0.0;
};

//! Moore-Penrose pseudoinverse by SVD with relative cutoff 1e-8.
inline Pinv pinv(const MatX& J, double rel_cutoff = 1e-8) {
  Eigen::JacobiSVD<MatX> svd(J, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const VecX sv = svd.singularValues();
  Pinv out;
  out.max_sv = sv.size() ? sv(0) : 0.0;
  out.min_sv = sv.size() ? sv(sv.size() - 1) : 0.0;
  const double cutoff = rel_cutoff * out.max_sv;
  VecX inv = sv;
  for (int i = 0; i < sv.size(); ++i) inv(i) = sv(i) > cutoff ? 1.0 / sv(i) : 0.0;
  out.m = svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
  return out;
}

//! Hysteresis release factor: pairs engage below d_colav and drop above
//! 1.05 d_colav, which is also the CLIK setpoint (a setpoint at d_colav
//! itself would park the pair inside the band and never release).
inline constexpr double kColavReleaseFactor = 1.05;

//! Hysteresis update of the active COLAV pair set: a pair engages below
//! d_colav and releases above 1.05 d_colav.
inline void update_colav_pairs(const FleetState& fleet, double d_colav,
                               AvoidanceMemory& memory) {
  std::vector<std::pair<int, int>> next;
  for (int i = 0; i < fleet.n(); ++i)
    for (int j = i + 1; j < fleet.n(); ++j) {
      const double d = (fleet.p[i] - fleet.p[j]).norm();
      const bool was_active =
          std::find(memory.colav_pairs.begin(), memory.colav_pairs.end(),
                    std::make_pair(i, j)) != memory.colav_pairs.end();
      if (d < d_colav || (was_active && d <= kColavReleaseFactor * d_colav))
        next.emplace_back(i, j);
    }
  memory.colav_pairs = std::move(next);
}

//! Sliding-mode-like inter-vehicle collision avoidance over the active pairs.
inline TaskOutput colav_task(const FleetState& fleet,
                             const std::vector<std::pair<int, int>>& pairs,
                             double d_colav, double U_colav, double lambda1) {
  TaskOutput out;
  const int n = fleet.n();
  out.velocity = VecX::Zero(3 * n);
  if (pairs.empty()) return out;

  const int rows = static_cast<int>(pairs.size());
  MatX J = MatX::Zero(rows, 3 * n);
  VecX sigma_err(rows);
  for (int r = 0; r < rows; ++r) {
    const auto [i, j] = pairs[r];
    const Vec3 diff = fleet.p[i] - fleet.p[j];
    const double d = diff.norm();
    if (d < 1e-6) throw std::runtime_error("colav: coincident vehicles");
    const Vec3 dir = diff / d;
    J.block<1, 3>(r, 3 * i) = dir.transpose();
    J.block<1, 3>(r, 3 * j) = -dir.transpose();
    sigma_err(r) = d - kColavReleaseFactor * d_colav;
  }
  const Pinv Jp = pinv(J);
  const VecX clik = Jp.m * (-lambda1 * sigma_err);  // desired rate of sigma_d is zero
  const double nc = clik.norm();
  out.jacobian = J;
  out.active = true;
  out.velocity = nc > 1e-12 ? VecX(U_colav * clik / nc) : VecX::Zero(3 * n);
  return out;
}

//! Formation Jacobian sigma_2 = <p_i - p_b>_{i<n} differentiated in the
//! stacked positions: block(i, j) = (delta_ij - 1/n) I.
inline MatX formation_jacobian(int n) {
  MatX J = MatX::Zero(3 * (n - 1), 3 * n);
  for (int i = 0; i + 1 < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double c = (i == j ? 1.0 : 0.0) - 1.0 / n;
      J.block<3, 3>(3 * i, 3 * j) = c * Mat3::Identity();
    }
  return J;
}

//! Closed-form pseudoinverse of the formation Jacobian:
//! J2 J2^T = (I - 1 1^T / n) (x) I3 whose inverse is (I + 1 1^T) (x) I3.
inline MatX formation_jacobian_pinv(int n) {
  const MatX J = formation_jacobian(n);
  MatX gram_inv = MatX::Identity(3 * (n - 1), 3 * (n - 1));
  for (int i = 0; i + 1 < n; ++i)
    for (int j = 0; j + 1 < n; ++j) gram_inv.block<3, 3>(3 * i, 3 * j) += Mat3::Identity();
  return J.transpose() * gram_inv;
}

struct FormationTask {
  TaskOutput task;
  VecX sigma_err;     // stacked sigma_2 - sigma_d2
  VecX sigma_d_rate;  // stacked d/dt sigma_d2
};

inline FormationTask formation_task(const FleetState& fleet, const FormationSpec& formation,
                                    const PathFrame& frame, double xi_rate_value,
                                    double lambda2, double v2_max) {
  const int n = fleet.n();
  if (n < 2) throw std::invalid_argument("formation_task: needs at least two vehicles");
  FormationTask out;
  const Vec3 p_b = fleet.barycenter();
  const Mat3 Rp_dot_gen = hat(frame.omega_p) * xi_rate_value;  // R_p^T R_p_dot

  out.sigma_err = VecX(3 * (n - 1));
  out.sigma_d_rate = VecX(3 * (n - 1));
  for (int i = 0; i + 1 < n; ++i) {
    const Vec3 sigma = fleet.p[i] - p_b;
    const Vec3 sigma_d = frame.R_p * formation.offsets[i];
    out.sigma_err.segment<3>(3 * i) = sigma - sigma_d;
    out.sigma_d_rate.segment<3>(3 * i) = frame.R_p * (Rp_dot_gen * formation.offsets[i]);
  }
  const MatX J = formation_jacobian(n);
  const MatX Jp = formation_jacobian_pinv(n);
  out.task.jacobian = J;
  out.task.active = true;
  out.task.velocity =
      Jp * out.sigma_d_rate - v2_max * (Jp * saturate(lambda2 * out.sigma_err));
  return out;
}

struct LosTask {
  TaskOutput task;
  Vec3 v_los = Vec3::Zero();  // per-vehicle LOS velocity (common)
  double Delta = 0.0;
  double D = 0.0;
};

//! Line-of-sight task with error-dependent lookahead.
inline LosTask los_task(const Vec3& p_bp, const PathFrame& frame, double delta0,
                        double U_los, int n) {
  if (delta0 <= 0.0 || U_los <= 0.0)
    throw std::invalid_argument("los_task: delta0 and U_los must be positive");
  LosTask out;
  out.Delta = std::sqrt(delta0 * delta0 + p_bp.squaredNorm());
  out.D = std::sqrt(out.Delta * out.Delta + p_bp.y() * p_bp.y() + p_bp.z() * p_bp.z());
  out.v_los = frame.R_p * Vec3(out.Delta, -p_bp.y(), -p_bp.z()) * (U_los / out.D);
  out.task.velocity = VecX(3 * n);
  for (int i = 0; i < n; ++i) out.task.velocity.segment<3>(3 * i) = out.v_los;
  out.task.active = true;
  return out;
}

//! Hierarchic composition: v1 + (I - J1+ J1)(v2 + (I - J2+ J2) v3).
inline VecX compose(const TaskOutput& colav, const TaskOutput& formation, const VecX& v3) {
  VecX inner = formation.velocity;
  if (formation.jacobian.size() > 0) {
    const Pinv J2p = pinv(formation.jacobian);
    inner += v3 - J2p.m * (formation.jacobian * v3);
  } else {
    inner += v3;
  }
  if (!colav.active) return inner;
  const Pinv J1p = pinv(colav.jacobian);
  if (J1p.min_sv <= 1e-8 * J1p.max_sv)
    throw std::runtime_error("compose: ill-conditioned COLAV Jacobian, min sv " +
                             std::to_string(J1p.min_sv));
  return colav.velocity + inner - J1p.m * (colav.jacobian * inner);
}

struct ConeCheck {
  double alpha = 0.0;
  bool in_conflict = false;
  bool oa_required = false;
  bool separation_violated = false;
};

//! Collision-cone test in the horizontal plane.
inline ConeCheck collision_cone(const Eigen::Vector2d& p_rel, const Eigen::Vector2d& v_rel,
                                double r_o, double r_f, double alpha_min) {
  ConeCheck out;
  const double dist = p_rel.norm();
  const double r_sum = r_o + r_f;
  if (dist < r_sum) {
    out.alpha = M_PI / 2;
    out.in_conflict = true;
    out.separation_violated = true;
    out.oa_required = out.alpha >= alpha_min;
    return out;
  }
  out.alpha = std::asin(std::min(1.0, r_sum / dist));
  if (v_rel.norm() > 0.0) {
    const double angle =
        std::abs(std::atan2(p_rel.x() * v_rel.y() - p_rel.y() * v_rel.x(),
                            p_rel.dot(v_rel)));
    out.in_conflict = angle <= out.alpha;
  }
  out.oa_required = out.in_conflict && out.alpha >= alpha_min;
  return out;
}

//! Branch selection at conflict start: the bearing offset +alpha steers to a
//! compass heading beyond the obstacle bearing (clockwise); ties go clockwise.
inline TurnDirection choose_turn_direction(const Eigen::Vector2d& p_rel,
                                           const Eigen::Vector2d& v_rel, double alpha) {
  const double bearing = std::atan2(p_rel.y(), p_rel.x());
  const double heading = std::atan2(v_rel.y(), v_rel.x());
  auto wrap = [](double a) {
    while (a > M_PI) a -= 2 * M_PI;
    while (a < -M_PI) a += 2 * M_PI;
    return a;
  };
  const double to_cw = std::abs(wrap(bearing + alpha - heading));
  const double to_ccw = std::abs(wrap(bearing - alpha - heading));
  return to_ccw < to_cw ? TurnDirection::Counterclockwise : TurnDirection::Clockwise;
}

//! Constant-avoidance-angle velocity on the chosen side of the cone, with the
//! obstacle velocity feed-through.
inline Eigen::Vector2d obstacle_avoidance_velocity(const Eigen::Vector2d& p_b,
                                                   const Obstacle& obstacle,
                                                   const Eigen::Vector2d& v_rel,
                                                   double alpha, TurnDirection direction) {
  const double bearing =
      std::atan2(obstacle.p.y() - p_b.y(), obstacle.p.x() - p_b.x());
  const double psi =
      bearing + (direction == TurnDirection::Counterclockwise ? -alpha : alpha);
  return v_rel.norm() * Eigen::Vector2d(std::cos(psi), std::sin(psi)) +
         Eigen::Vector2d(obstacle.vel.x(), obstacle.vel.y());
}

//! Depth-limiting override of the vertical LOS velocity component.
inline double depth_limit(const std::vector<double>& z, double z_dot_los, double z_min,
                          double z_max, double v_z, DepthMode* mode = nullptr) {
  if (z_min >= z_max) throw std::invalid_argument("depth_limit: z_min must be below z_max");
  const double lo = *std::min_element(z.begin(), z.end());
  const double hi = *std::max_element(z.begin(), z.end());
  if (lo <= z_min && hi >= z_max)
    throw std::runtime_error("depth_limit: both limits violated, formation does not fit");
  if (mode) *mode = DepthMode::None;
  if (lo <= z_min) {
    if (mode) *mode = DepthMode::TooShallow;
    return v_z;
  }
  if (hi >= z_max) {
    if (mode) *mode = DepthMode::TooDeep;
    return -v_z;
  }
  return z_dot_los;
}

//! Largest horizontal distance from the barycenter to a vehicle.
inline double formation_radius(const FleetState& fleet) {
  const Vec3 b = fleet.barycenter();
  double r = 0.0;
  for (const Vec3& pi : fleet.p)
    r = std::max(r, std::hypot(b.x() - pi.x(), b.y() - pi.y()));
  return r;
}

}  // namespace nsbf
