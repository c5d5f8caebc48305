#pragma once

#include <nsbf/diagnostics.hpp>

namespace nsbf {

struct Episode {
  double t_start = 0.0;
  double t_end = 0.0;
};

struct RunSummary {
  int ticks = 0;
  bool aborted = false;
  std::string abort_reason;
  int abort_step = -1;
  double min_pair_distance = 1e9;
  double min_obstacle_clearance = 1e9;  // no obstacles: sentinel
  double max_sway_heave = 0.0;          // max over i, t of ||(v_i, w_i)||
  double max_orthonormality = 0.0;      // over vehicles and references
  double max_depth_excursion = 0.0;     // beyond [z_min, z_max]
  double max_reference_residual = 0.0;  // nominal ticks with the loop resolved
  double max_alignment_error = 0.0;     // nominal ticks, sin of the angle
  double min_surge = 1e9;
  long surge_fallback_ticks = 0;
  long loop_fallback_ticks = 0;
  Vec3 final_barycenter = Vec3::Zero();
  double final_sigma_norm = 0.0;
  std::vector<Episode> colav_episodes, oa_episodes, depth_episodes;
};

//! Flag intervals with short gaps merged (chatter counts as one episode).
inline std::vector<Episode> flag_episodes(const std::vector<TelemetryRecord>& telemetry,
                                          int TelemetryRecord::*flag, double merge_gap = 2.0) {
  std::vector<Episode> eps;
  for (const auto& r : telemetry) {
    if (r.*flag == 0) continue;
    if (!eps.empty() && r.t - eps.back().t_end <= merge_gap)
      eps.back().t_end = r.t;
    else
      eps.push_back({r.t, r.t});
  }
  return eps;
}

class Simulator {
 public:
  explicit Simulator(const PreparedScenario& sc)
      : sc_(sc), model_(sc.model), gains_(sc.config.gains), n_(sc.config.n()) {
    current_.V_c = sc.config.current;
    substeps_ = std::max(1, static_cast<int>(std::round(sc.config.guidance_period /
                                                        sc.config.dt)));
    initialize();
  }

  //! Runs to the configured duration; aborts set the summary fields.
  void run() {
    const int total = static_cast<int>(std::round(sc_.config.duration /
                                                  sc_.config.guidance_period));
    try {
      for (int k = 0; k < total; ++k) advance_tick();
      log_tick();  // closing record at t = duration
    } catch (const std::exception& e) {
      summary_.aborted = true;
      summary_.abort_reason = e.what();
      summary_.abort_step = tick_index_;
    }
  }

  //! One guidance tick: discrete switching update, telemetry, dynamics.
  void advance_tick() {
    update_discrete();
    log_tick();
    const double h = sc_.config.dt;
    for (int s = 0; s < substeps_; ++s) {
      rk4_substep(h, t_ + s * h);
      ++step_count_;
      if (sc_.config.renormalize_period > 0 &&
          step_count_ % sc_.config.renormalize_period == 0)
        for (int i = 0; i < n_; ++i) {
          R_[i] = renormalize(R_[i]);
          R_d_[i] = renormalize(R_d_[i]);
        }
    }
    t_ += sc_.config.guidance_period;
    ++tick_index_;
    check_invariants();
  }

  const std::vector<TelemetryRecord>& telemetry() const { return telemetry_; }

  RunSummary summary() const {
    RunSummary s = summary_;
    s.ticks = tick_index_;
    s.colav_episodes = flag_episodes(telemetry_, &TelemetryRecord::flag_colav);
    s.oa_episodes = flag_episodes(telemetry_, &TelemetryRecord::flag_oa);
    s.depth_episodes = flag_episodes(telemetry_, &TelemetryRecord::flag_depth);
    Vec3 b = Vec3::Zero();
    for (int i = 0; i < n_; ++i) b += p_[i];
    s.final_barycenter = b / n_;
    if (!telemetry_.empty()) s.final_sigma_norm = telemetry_.back().sigma_err.norm();
    return s;
  }

  double time() const { return t_; }

  //! Test access to the integrated state.
  const std::vector<Vec3>& positions() const { return p_; }
  const std::vector<Mat3>& attitudes() const { return R_; }
  const std::vector<Mat3>& references() const { return R_d_; }
  const std::vector<Vec3>& velocities() const { return v_; }

 private:
  struct TickDiscrete {
    bool avoidance = false;
    std::vector<std::pair<int, int>> colav_pairs;
    int governing_obstacle = -1;
    TurnDirection oa_dir = TurnDirection::None;
    bool oa_on = false;
    DepthMode depth = DepthMode::None;
    std::vector<Vec3> v_nsb_dot_frozen;
    std::vector<double> u_d_prev;       // last commanded surge per vehicle
    std::vector<double> u_d_dot_ff;
    std::vector<Vec3> omega_d_dot_ff;
    bool have_u_prev = false;
  };

  struct Eval {
    PathFrame frame;
    double U_los = 0.0, xi_dot = 0.0, Delta = 0.0, D = 0.0;
    Vec3 p_bp = Vec3::Zero();
    VecX sigma_err;
    Vec3 v_los_raw = Vec3::Zero(), v_los_eff = Vec3::Zero();
    std::vector<Vec3> v_nsb, v_nsb_dot;
    std::vector<double> u_d, u_d_raw, loop_det;
    std::vector<bool> condition_met, loop_ok;
    std::vector<Vec3> omega_d, omega_v_nsb;
    bool nominal = true;
    double V = 0.0, V_dot = 0.0;
    double max_residual = 0.0;   // orientation-rate constraint residual
    double max_alignment = 0.0;  // sin of the reference alignment error
  };

  struct Snapshot {  // LOS-level quantities shared by the tick and the stages
    PathFrame frame;
    double U_los = 0.0, Delta = 0.0, D = 0.0, xi_dot = 0.0;
    Vec3 p_bp = Vec3::Zero(), v_los = Vec3::Zero();
  };

  Snapshot los_snapshot(const std::vector<Vec3>& p, const std::vector<Vec3>& v,
                        double xi) const {
    Snapshot s;
    s.frame = sc_.path.evaluate(xi);
    std::vector<Eigen::Vector2d> vw(n_);
    Vec3 p_b = Vec3::Zero();
    for (int i = 0; i < n_; ++i) {
      vw[i] = {v[i].y(), v[i].z()};
      p_b += p[i];
    }
    p_b /= n_;
    s.U_los = u_los(vw, gains_.v2_max, model_.u_min, sc_.k_nsb_value);
    s.p_bp = s.frame.R_p.transpose() * (p_b - s.frame.p);
    s.Delta = std::sqrt(gains_.delta0 * gains_.delta0 + s.p_bp.squaredNorm());
    s.D = std::sqrt(s.Delta * s.Delta + s.p_bp.y() * s.p_bp.y() + s.p_bp.z() * s.p_bp.z());
    s.xi_dot = xi_rate(s.frame, s.p_bp.x(), s.U_los, s.Delta, s.D, gains_.k_xi);
    s.v_los = (s.U_los / s.D) * (s.frame.R_p * Vec3(s.Delta, -s.p_bp.y(), -s.p_bp.z()));
    return s;
  }

  //! Discrete switching decisions, held fixed over the guidance tick.
  void update_discrete() {
    FleetState fleet{p_};
    update_colav_pairs(fleet, gains_.d_colav, memory_);
    tick_.colav_pairs = memory_.colav_pairs;

    const Snapshot snap = los_snapshot(p_, v_, xi_);
    const Vec3 p_b = fleet.barycenter();
    const double r_f = formation_radius(fleet);

    tick_.governing_obstacle = -1;
    tick_.oa_on = false;
    double best_margin = std::numeric_limits<double>::max();
    for (size_t k = 0; k < sc_.config.obstacles.size(); ++k) {
      const Obstacle& obs = sc_.config.obstacles[k];
      const Vec3 p_o = obs.p + t_ * obs.vel;
      const Eigen::Vector2d p_rel(p_o.x() - p_b.x(), p_o.y() - p_b.y());
      const Eigen::Vector2d v_rel(snap.v_los.x() - obs.vel.x(),
                                  snap.v_los.y() - obs.vel.y());
      const ConeCheck cone = collision_cone(p_rel, v_rel, obs.radius, r_f, gains_.alpha_min());
      summary_.min_obstacle_clearance = std::min(
          summary_.min_obstacle_clearance, p_rel.norm() - obs.radius - r_f);
      if (cone.oa_required) {
        memory_.oa_idle_ticks[k] = 0;
        if (memory_.oa_direction[k] == TurnDirection::None)
          memory_.oa_direction[k] = choose_turn_direction(p_rel, v_rel, cone.alpha);
        const double margin = p_rel.norm() - obs.radius - r_f;
        if (margin < best_margin) {
          best_margin = margin;
          tick_.governing_obstacle = static_cast<int>(k);
          tick_.oa_dir = memory_.oa_direction[k];
          tick_.oa_on = true;
        }
      } else if (memory_.oa_direction[k] != TurnDirection::None) {
        if (++memory_.oa_idle_ticks[k] >= 10) {
          memory_.oa_direction[k] = TurnDirection::None;
          memory_.oa_idle_ticks[k] = 0;
        }
      }
    }

    // depth mode with a release band so the limiter does not chatter at the
    // guidance rate (the attitude loop cannot follow tick-rate sign flips)
    std::vector<double> depths(n_);
    for (int i = 0; i < n_; ++i) depths[i] = p_[i].z();
    DepthMode raw_mode;
    depth_limit(depths, snap.v_los.z(), gains_.z_min, gains_.z_max, gains_.v_z, &raw_mode);
    const double lo = *std::min_element(depths.begin(), depths.end());
    const double hi = *std::max_element(depths.begin(), depths.end());
    switch (memory_.depth) {
      case DepthMode::None:
        tick_.depth = raw_mode;
        break;
      case DepthMode::TooShallow:
        tick_.depth = lo > gains_.z_min + gains_.depth_hysteresis ? raw_mode
                                                                  : DepthMode::TooShallow;
        break;
      case DepthMode::TooDeep:
        tick_.depth = hi < gains_.z_max - gains_.depth_hysteresis ? raw_mode
                                                                  : DepthMode::TooDeep;
        break;
    }
    memory_.depth = tick_.depth;

    tick_.avoidance = !tick_.colav_pairs.empty() || tick_.oa_on ||
                      tick_.depth != DepthMode::None;

    // derivative estimates must not difference across task switches
    const bool switched = tick_.avoidance != prev_discrete_.avoidance ||
                          tick_.colav_pairs != prev_discrete_.colav_pairs ||
                          tick_.oa_on != prev_discrete_.oa_on ||
                          tick_.oa_dir != prev_discrete_.oa_dir ||
                          tick_.governing_obstacle != prev_discrete_.governing_obstacle ||
                          tick_.depth != prev_discrete_.depth;
    if (switched) deriv_hist_ = 0;
    prev_discrete_ = tick_;

    tick_.v_nsb_dot_frozen.assign(n_, Vec3::Zero());
    const double Tg = sc_.config.guidance_period;
    if (deriv_hist_ >= 2) {
      for (int i = 0; i < n_; ++i) {
        const Vec3 est =
            (3.0 * v_nsb_hist1_[i] - 4.0 * v_nsb_hist2_[i] + v_nsb_hist3_[i]) / (2.0 * Tg);
        v_nsb_dot_filt_[i] = 0.7 * est + 0.3 * v_nsb_dot_filt_[i];
        tick_.v_nsb_dot_frozen[i] = v_nsb_dot_filt_[i];
      }
    } else {
      for (int i = 0; i < n_; ++i) v_nsb_dot_filt_[i].setZero();
    }
    tick_.u_d_dot_ff.assign(n_, 0.0);
    tick_.omega_d_dot_ff.assign(n_, Vec3::Zero());
    if (deriv_hist_ >= 2) {
      for (int i = 0; i < n_; ++i) {
        tick_.u_d_dot_ff[i] = (u_d_hist1_[i] - u_d_hist2_[i]) / Tg;
        tick_.omega_d_dot_ff[i] = (omega_d_hist1_[i] - omega_d_hist2_[i]) / Tg;
      }
    }
  }

  //! Continuous guidance pipeline at an arbitrary stage state.
  Eval evaluate(const std::vector<Vec3>& p, const std::vector<Mat3>& R,
                const std::vector<Vec3>& v, const std::vector<Vec3>& omega,
                const std::vector<Mat3>& R_d, double xi, double t) const {
    Eval e;
    e.v_nsb.resize(n_);
    e.v_nsb_dot.resize(n_);
    e.u_d.resize(n_);
    e.u_d_raw.resize(n_);
    e.loop_det.resize(n_);
    e.condition_met.assign(n_, true);
    e.loop_ok.assign(n_, true);
    e.omega_d.resize(n_);
    e.omega_v_nsb.resize(n_);
    e.nominal = !tick_.avoidance;

    if (e.nominal) {
      const PathFrame frame = sc_.path.evaluate(xi);
      std::vector<VehicleKinematics> fleet(n_);
      for (int i = 0; i < n_; ++i) {
        VehicleState vs{p[i], R[i], v[i], omega[i]};
        const auto uu = underactuated_derivative(vs, current_, model_);
        fleet[i] = {p[i], R[i] * v[i], v[i].y(), v[i].z(), uu(0), uu(1)};
      }
      NominalParams par{gains_.delta0, gains_.k_xi, gains_.lambda2, gains_.v2_max,
                        model_.u_min, sc_.k_nsb_value};
      const NominalGuidance ng = nominal_guidance(fleet, sc_.formation, frame, par);
      e.frame = frame;
      e.U_los = ng.U_los;
      e.xi_dot = ng.xi_dot;
      e.Delta = ng.Delta;
      e.D = ng.D;
      e.p_bp = ng.p_bp;
      e.sigma_err = ng.sigma_err;
      e.v_los_raw = e.v_los_eff = ng.v_los;
      e.v_nsb = ng.v_nsb;
      e.v_nsb_dot = ng.v_nsb_dot;
    } else {
      const Snapshot snap = los_snapshot(p, v, xi);
      e.frame = snap.frame;
      e.U_los = snap.U_los;
      e.xi_dot = snap.xi_dot;
      e.Delta = snap.Delta;
      e.D = snap.D;
      e.p_bp = snap.p_bp;
      e.v_los_raw = snap.v_los;

      Vec3 v_eff = snap.v_los;
      if (tick_.oa_on) {
        const Obstacle& obs = sc_.config.obstacles[tick_.governing_obstacle];
        FleetState fleet{p};
        const Vec3 p_b = fleet.barycenter();
        Obstacle moved = obs;
        moved.p = obs.p + t * obs.vel;
        const Eigen::Vector2d p_rel(moved.p.x() - p_b.x(), moved.p.y() - p_b.y());
        const Eigen::Vector2d v_rel(snap.v_los.x() - obs.vel.x(),
                                    snap.v_los.y() - obs.vel.y());
        const double r_sum = obs.radius + formation_radius(fleet);
        if (p_rel.norm() < r_sum) {
          // inside the combined radius the cone edge degenerates into an
          // orbit; steer straight away until separation is restored
          const Eigen::Vector2d away = -p_rel.normalized();
          v_eff.x() = v_rel.norm() * away.x() + obs.vel.x();
          v_eff.y() = v_rel.norm() * away.y() + obs.vel.y();
        } else {
          // steer tangent to a slightly inflated circle so tracking lag
          // cannot shave the true clearance below zero
          const double alpha = std::asin(
              std::min(1.0, 1.05 * r_sum / std::max(p_rel.norm(), 1e-9)));
          const Eigen::Vector2d oa = obstacle_avoidance_velocity(
              {p_b.x(), p_b.y()}, moved, v_rel, alpha, tick_.oa_dir);
          v_eff.x() = oa.x();
          v_eff.y() = oa.y();
        }
      }
      if (tick_.depth == DepthMode::TooShallow) v_eff.z() = gains_.v_z;
      if (tick_.depth == DepthMode::TooDeep) v_eff.z() = -gains_.v_z;
      e.v_los_eff = v_eff;

      FleetState fleet{p};
      const FormationTask ft = formation_task(fleet, sc_.formation, snap.frame,
                                              snap.xi_dot, gains_.lambda2, gains_.v2_max);
      e.sigma_err = ft.sigma_err;
      TaskOutput colav;
      colav.velocity = VecX::Zero(3 * n_);
      if (!tick_.colav_pairs.empty())
        colav = colav_task(fleet, tick_.colav_pairs, gains_.d_colav, gains_.U_colav,
                           gains_.lambda1);
      VecX v3(3 * n_);
      for (int i = 0; i < n_; ++i) v3.segment<3>(3 * i) = v_eff;
      const VecX stacked = compose(colav, ft.task, v3);
      for (int i = 0; i < n_; ++i) {
        e.v_nsb[i] = stacked.segment<3>(3 * i);
        e.v_nsb_dot[i] = tick_.v_nsb_dot_frozen[i];
      }
    }

    // references
    for (int i = 0; i < n_; ++i) {
      const SurgeReference sr =
          surge_reference(e.v_nsb[i], v[i].y(), v[i].z(), model_.u_min);
      e.u_d_raw[i] = sr.u_d;
      e.condition_met[i] = sr.condition_met;
      double lo = model_.u_min, hi = model_.u_max;
      if (tick_.have_u_prev) {
        const double window = gains_.surge_rate_limit * sc_.config.guidance_period;
        lo = std::max(lo, tick_.u_d_prev[i] - window);
        hi = std::min(hi, tick_.u_d_prev[i] + window);
        if (lo > hi) lo = hi;  // cap dominates a shrunken window
      }
      e.u_d[i] = std::min(std::max(sr.u_d, lo), hi);

      const Vec3 v_c = R[i].transpose() * current_.V_c;
      if (e.v_nsb[i].norm() < 1e-9) {
        e.omega_v_nsb[i] = Vec3::Zero();
        e.omega_d[i] = Vec3::Zero();
        e.loop_det[i] = 1.0;
        continue;
      }
      e.omega_v_nsb[i] = pseudo_angular_velocity(e.v_nsb[i], e.v_nsb_dot[i]);
      const AffineLoop loop = affine_loop(e.u_d[i], v[i].y(), v[i].z(), v_c, model_.affine,
                                          e.v_nsb[i], e.v_nsb_dot[i], model_.u_min);
      e.loop_det[i] = loop.det;
      if (loop.resolvable()) {
        e.omega_d[i] = desired_angular_velocity(loop, R_d[i], e.omega_v_nsb[i]);
        e.max_residual = std::max(
            e.max_residual, reference_residual(loop, R_d[i], e.omega_v_nsb[i], e.omega_d[i]));
      } else {
        // bare fallback with the measured rates
        e.omega_d[i] = R_d[i].transpose() * e.omega_v_nsb[i] - loop.omega_v(omega[i]);
        e.loop_ok[i] = false;
      }
      // proportional re-alignment on top of the rate construction: the
      // construction only preserves alignment, so discontinuous task
      // switches need an explicit restoring term (zero when aligned)
      const Vec3 v_bar = Vec3(e.u_d[i], v[i].y(), v[i].z()).normalized();
      const Vec3 target = R_d[i].transpose() * e.v_nsb[i].normalized();
      const Vec3 align = v_bar.cross(target);
      e.max_alignment = std::max(e.max_alignment, align.norm());
      e.omega_d[i] += gains_.k_align * align;

      const double wn = e.omega_d[i].norm();
      if (wn > gains_.omega_d_limit) e.omega_d[i] *= gains_.omega_d_limit / wn;
    }

    e.V = lyapunov(e.sigma_err, e.p_bp);
    e.V_dot = vdot_analytic(e.sigma_err, e.p_bp, gains_.lambda2, gains_.v2_max, e.U_los,
                            gains_.k_xi, e.Delta, e.D);
    return e;
  }

  //! Ideal mode resolves the rate/underactuated coupling by one fixed-point
  //! refinement: rates enter only through the sway/heave derivatives.
  Eval evaluate_ideal(const std::vector<Vec3>& p, const std::vector<Vec3>& v,
                      const std::vector<Mat3>& R_d, double xi, double t,
                      const std::vector<Vec3>& omega_seed) const {
    std::vector<Vec3> vv = v;
    std::vector<Vec3> om = omega_seed;
    Eval e;
    for (int pass = 0; pass < 2; ++pass) {
      // consistent ideal kinematics: u = u_d, attitude = R_d, rates = omega_d
      e = evaluate(p, R_d, vv, om, R_d, xi, t);
      for (int i = 0; i < n_; ++i) {
        vv[i].x() = e.u_d[i];
        om[i] = e.omega_d[i];
      }
    }
    return e;
  }

  void rk4_substep(double h, double t) {
    struct Deriv {
      std::vector<Vec3> p_dot, v_dot, omega_dot, R_gen, Rd_gen;
      double xi_dot = 0.0;
    };
    const bool ideal = sc_.config.mode == RunMode::Ideal;

    auto derivative = [&](const std::vector<Vec3>& p, const std::vector<Mat3>& R,
                          const std::vector<Vec3>& v, const std::vector<Vec3>& om,
                          const std::vector<Mat3>& Rd, double xi, double tt) {
      Deriv d;
      d.p_dot.resize(n_);
      d.v_dot.assign(n_, Vec3::Zero());
      d.omega_dot.assign(n_, Vec3::Zero());
      d.R_gen.resize(n_);
      d.Rd_gen.resize(n_);
      if (ideal) {
        const Eval e = evaluate_ideal(p, v, Rd, xi, tt, om);
        for (int i = 0; i < n_; ++i) {
          const Vec3 v_body(e.u_d[i], v[i].y(), v[i].z());
          d.p_dot[i] = Rd[i] * v_body;
          VehicleState vs{p[i], Rd[i], v_body, e.omega_d[i]};
          const auto uu = underactuated_derivative(vs, current_, model_);
          d.v_dot[i] = Vec3(0.0, uu(0), uu(1));
          d.R_gen[i] = e.omega_d[i];
          d.Rd_gen[i] = e.omega_d[i];
        }
        d.xi_dot = e.xi_dot;
      } else {
        const Eval e = evaluate(p, R, v, om, Rd, xi, tt);
        for (int i = 0; i < n_; ++i) {
          VehicleState vs{p[i], R[i], v[i], om[i]};
          GuidanceCommand cmd;
          cmd.u_d = e.u_d[i];
          cmd.R_d = Rd[i];
          cmd.omega_d = e.omega_d[i];
          cmd.u_d_dot = tick_.u_d_dot_ff.empty() ? 0.0 : tick_.u_d_dot_ff[i];
          cmd.omega_d_dot =
              tick_.omega_d_dot_ff.empty() ? Vec3::Zero() : tick_.omega_d_dot_ff[i];
          const GeneralizedForce f =
              control(vs, cmd, current_, model_, ControlGains{gains_.k_u, gains_.k_R,
                                                              gains_.k_omega});
          const StateDerivative sd = dynamics_derivative(vs, f, current_, model_);
          d.p_dot[i] = sd.p_dot;
          d.v_dot[i] = sd.nu_dot.head<3>();
          d.omega_dot[i] = sd.nu_dot.tail<3>();
          d.R_gen[i] = om[i];
          d.Rd_gen[i] = e.omega_d[i];
        }
        d.xi_dot = e.xi_dot;
      }
      return d;
    };

    // Munthe-Kaas RK4: rotation increments integrated in the Lie algebra
    // with dexpinv-corrected stage generators, which keeps fourth order on
    // the manifold.
    struct Stage {
      std::vector<Vec3> F_R, F_Rd;  // corrected generators
      Deriv d;
    };
    std::vector<Vec3> thR(n_, Vec3::Zero()), thRd(n_, Vec3::Zero());
    auto make_stage = [&](const Deriv& d, const std::vector<Vec3>& theta_R,
                          const std::vector<Vec3>& theta_Rd) {
      Stage s{.F_R = std::vector<Vec3>(n_), .F_Rd = std::vector<Vec3>(n_), .d = d};
      for (int i = 0; i < n_; ++i) {
        s.F_R[i] = dexpinv(theta_R[i], d.R_gen[i]);
        s.F_Rd[i] = dexpinv(theta_Rd[i], d.Rd_gen[i]);
      }
      return s;
    };
    auto shifted = [&](const Stage& s, double hh, std::vector<Vec3>& p,
                       std::vector<Mat3>& R, std::vector<Vec3>& v, std::vector<Vec3>& om,
                       std::vector<Mat3>& Rd, double& xi) {
      p = p_;
      v = v_;
      om = omega_;
      R.resize(n_);
      Rd.resize(n_);
      xi = xi_;
      for (int i = 0; i < n_; ++i) {
        p[i] += hh * s.d.p_dot[i];
        v[i] += hh * s.d.v_dot[i];
        om[i] += hh * s.d.omega_dot[i];
        thR[i] = hh * s.F_R[i];
        thRd[i] = hh * s.F_Rd[i];
        R[i] = R_[i] * expm_so3(thR[i]);
        Rd[i] = R_d_[i] * expm_so3(thRd[i]);
      }
      xi += hh * s.d.xi_dot;
    };

    std::vector<Vec3> p, v, om;
    std::vector<Mat3> R, Rd;
    double xi;
    const std::vector<Vec3> zero(n_, Vec3::Zero());
    const Stage k1 = make_stage(derivative(p_, R_, v_, omega_, R_d_, xi_, t), zero, zero);
    shifted(k1, h / 2, p, R, v, om, Rd, xi);
    const Stage k2 = make_stage(derivative(p, R, v, om, Rd, xi, t + h / 2), thR, thRd);
    shifted(k2, h / 2, p, R, v, om, Rd, xi);
    const Stage k3 = make_stage(derivative(p, R, v, om, Rd, xi, t + h / 2), thR, thRd);
    shifted(k3, h, p, R, v, om, Rd, xi);
    const Stage k4 = make_stage(derivative(p, R, v, om, Rd, xi, t + h), thR, thRd);

    for (int i = 0; i < n_; ++i) {
      p_[i] += h / 6.0 * (k1.d.p_dot[i] + 2 * k2.d.p_dot[i] + 2 * k3.d.p_dot[i] +
                          k4.d.p_dot[i]);
      v_[i] += h / 6.0 * (k1.d.v_dot[i] + 2 * k2.d.v_dot[i] + 2 * k3.d.v_dot[i] +
                          k4.d.v_dot[i]);
      omega_[i] += h / 6.0 * (k1.d.omega_dot[i] + 2 * k2.d.omega_dot[i] +
                              2 * k3.d.omega_dot[i] + k4.d.omega_dot[i]);
      R_[i] = R_[i] * expm_so3(h / 6.0 * (k1.F_R[i] + 2 * k2.F_R[i] + 2 * k3.F_R[i] +
                                          k4.F_R[i]));
      R_d_[i] = R_d_[i] * expm_so3(h / 6.0 * (k1.F_Rd[i] + 2 * k2.F_Rd[i] +
                                              2 * k3.F_Rd[i] + k4.F_Rd[i]));
    }
    xi_ += h / 6.0 * (k1.d.xi_dot + 2 * k2.d.xi_dot + 2 * k3.d.xi_dot + k4.d.xi_dot);

    if (ideal) {
      // keep the overridden channels pinned to the references
      const Eval e = evaluate_ideal(p_, v_, R_d_, xi_, t + h, omega_);
      for (int i = 0; i < n_; ++i) {
        R_[i] = R_d_[i];
        v_[i].x() = e.u_d[i];
        omega_[i] = e.omega_d[i];
      }
    }
  }

  void log_tick() {
    const bool ideal = sc_.config.mode == RunMode::Ideal;
    const Eval e = ideal ? evaluate_ideal(p_, v_, R_d_, xi_, t_, omega_)
                         : evaluate(p_, R_, v_, omega_, R_d_, xi_, t_);

    TelemetryRecord r;
    r.t = t_;
    r.xi = xi_;
    r.xi_dot = e.xi_dot;
    r.U_los = e.U_los;
    r.p_bp = e.p_bp;
    r.V = e.V;
    r.V_dot = e.V_dot;
    r.flag_colav = tick_.colav_pairs.empty() ? 0 : 1;
    r.flag_oa = tick_.oa_on ? 1 : 0;
    r.flag_depth = tick_.depth == DepthMode::None
                       ? 0
                       : (tick_.depth == DepthMode::TooShallow ? 1 : -1);
    r.sigma_err = e.sigma_err;

    double min_pair = std::numeric_limits<double>::max();
    for (int i = 0; i < n_; ++i)
      for (int j = i + 1; j < n_; ++j)
        min_pair = std::min(min_pair, (p_[i] - p_[j]).norm());
    r.min_pair_distance = n_ > 1 ? min_pair : 1e9;

    double clearance = 1e9;
    const FleetState fleet{p_};
    const Vec3 p_b = fleet.barycenter();
    const double r_f = formation_radius(fleet);
    for (const Obstacle& obs : sc_.config.obstacles) {
      const Vec3 p_o = obs.p + t_ * obs.vel;
      clearance = std::min(clearance, std::hypot(p_o.x() - p_b.x(), p_o.y() - p_b.y()) -
                                          obs.radius - r_f);
    }
    r.obstacle_clearance = clearance;

    r.vehicles.resize(n_);
    for (int i = 0; i < n_; ++i) {
      auto& pv = r.vehicles[i];
      pv.p = p_[i];
      pv.rotvec = logm_so3(R_[i]);
      pv.v = v_[i];
      pv.omega = omega_[i];
      pv.u_d = e.u_d[i];
      pv.omega_d = e.omega_d[i];
      GuidanceCommand cmd;
      cmd.u_d = e.u_d[i];
      cmd.R_d = R_d_[i];
      cmd.omega_d = e.omega_d[i];
      VehicleState vs{p_[i], R_[i], v_[i], omega_[i]};
      pv.x_tilde_norm = tracking_error(vs, cmd).norm();
      if (!e.condition_met[i]) r.flag_surge_fallback = 1;
      if (!e.loop_ok[i]) r.flag_loop_fallback = 1;
      summary_.min_surge = std::min(summary_.min_surge, v_[i].x());
      summary_.max_sway_heave =
          std::max(summary_.max_sway_heave, std::hypot(v_[i].y(), v_[i].z()));
      summary_.max_orthonormality = std::max(
          {summary_.max_orthonormality, orthonormality_error(R_[i]),
           orthonormality_error(R_d_[i])});
      summary_.max_depth_excursion =
          std::max({summary_.max_depth_excursion, p_[i].z() - gains_.z_max,
                    gains_.z_min - p_[i].z(), 0.0});
    }
    if (r.flag_surge_fallback) ++summary_.surge_fallback_ticks;
    if (r.flag_loop_fallback) ++summary_.loop_fallback_ticks;
    if (e.nominal) {
      summary_.max_reference_residual =
          std::max(summary_.max_reference_residual, e.max_residual);
      summary_.max_alignment_error =
          std::max(summary_.max_alignment_error, e.max_alignment);
    }
    summary_.min_pair_distance = std::min(summary_.min_pair_distance, r.min_pair_distance);

    telemetry_.push_back(std::move(r));

    // tick histories for differencing
    v_nsb_hist3_ = v_nsb_hist2_;
    v_nsb_hist2_ = v_nsb_hist1_;
    v_nsb_hist1_ = e.v_nsb;
    u_d_hist2_ = u_d_hist1_;
    u_d_hist1_ = e.u_d;
    omega_d_hist2_ = omega_d_hist1_;
    omega_d_hist1_ = e.omega_d;
    ++deriv_hist_;
    tick_.u_d_prev = e.u_d;
    tick_.have_u_prev = true;
  }

  void check_invariants() {
    for (int i = 0; i < n_; ++i) {
      VehicleState vs{p_[i], R_[i], v_[i], omega_[i]};
      if (!vs.finite())
        throw std::runtime_error("non-finite state for vehicle " + std::to_string(i + 1) +
                                 " at step " + std::to_string(step_count_));
      if (orthonormality_error(R_[i]) > 1e-6 || orthonormality_error(R_d_[i]) > 1e-6)
        throw std::runtime_error("rotation drift for vehicle " + std::to_string(i + 1) +
                                 " at step " + std::to_string(step_count_));
    }
    if (!std::isfinite(xi_)) throw std::runtime_error("non-finite path parameter");
  }

  void initialize() {
    p_ = sc_.config.initial_positions;
    v_.assign(n_, Vec3::Zero());
    for (int i = 0; i < n_; ++i)
      if (!sc_.config.initial_sway_heave.empty()) {
        v_[i].y() = sc_.config.initial_sway_heave[i].x();
        v_[i].z() = sc_.config.initial_sway_heave[i].y();
      }
    omega_.assign(n_, Vec3::Zero());
    R_.assign(n_, Mat3::Identity());
    R_d_.assign(n_, Mat3::Identity());
    xi_ = sc_.config.path.xi_start;
    memory_.reset(static_cast<int>(sc_.config.obstacles.size()));
    v_nsb_dot_filt_.assign(n_, Vec3::Zero());
    v_nsb_hist1_.assign(n_, Vec3::Zero());
    v_nsb_hist2_.assign(n_, Vec3::Zero());
    v_nsb_hist3_.assign(n_, Vec3::Zero());
    u_d_hist1_.assign(n_, 0.0);
    u_d_hist2_.assign(n_, 0.0);
    omega_d_hist1_.assign(n_, Vec3::Zero());
    omega_d_hist2_.assign(n_, Vec3::Zero());

    // bootstrap the references: aligned attitudes, matched surge and rates
    update_discrete();
    for (int pass = 0; pass < 3; ++pass) {
      const Eval e = sc_.config.mode == RunMode::Ideal
                         ? evaluate_ideal(p_, v_, R_d_, xi_, 0.0, omega_)
                         : evaluate(p_, R_, v_, omega_, R_d_, xi_, 0.0);
      for (int i = 0; i < n_; ++i) {
        v_[i].x() = e.u_d[i];
        if (Vec3(v_[i]).norm() >= 1e-3 && e.v_nsb[i].norm() >= 1e-9)
          R_d_[i] = initialize_reference(v_[i], e.v_nsb[i]);
        R_[i] = R_d_[i];
        omega_[i] = e.omega_d[i];
      }
    }
    tick_ = TickDiscrete{};  // rerun the discrete pass at the first tick
  }

  PreparedScenario sc_;
  ModelParams model_;
  GainConfig gains_;
  OceanCurrent current_;
  int n_ = 0;
  int substeps_ = 1;

  std::vector<Vec3> p_, v_, omega_;
  std::vector<Mat3> R_, R_d_;
  double xi_ = 0.0;
  double t_ = 0.0;
  int tick_index_ = 0;
  long step_count_ = 0;

  TickDiscrete tick_;
  TickDiscrete prev_discrete_;
  AvoidanceMemory memory_;
  std::vector<Vec3> v_nsb_hist1_, v_nsb_hist2_, v_nsb_hist3_, v_nsb_dot_filt_;
  std::vector<double> u_d_hist1_, u_d_hist2_;
  std::vector<Vec3> omega_d_hist1_, omega_d_hist2_;
  long deriv_hist_ = 0;

  std::vector<TelemetryRecord> telemetry_;
  RunSummary summary_;
};

struct RunResult {
  std::vector<TelemetryRecord> telemetry;
  RunSummary summary;
};

inline RunResult run_scenario(const PreparedScenario& sc) {
  Simulator sim(sc);
  sim.run();
  return {sim.telemetry(), sim.summary()};
}

inline Json to_json(const Episode& e) {
  return Json{{"t_start", e.t_start}, {"t_end", e.t_end}};
}

inline Json to_json(const RunSummary& s) {
  Json j{{"ticks", s.ticks},
         {"aborted", s.aborted},
         {"abort_reason", s.abort_reason},
         {"abort_step", s.abort_step},
         {"min_pair_distance", s.min_pair_distance},
         {"min_obstacle_clearance", s.min_obstacle_clearance},
         {"max_sway_heave", s.max_sway_heave},
         {"max_orthonormality", s.max_orthonormality},
         {"max_depth_excursion", s.max_depth_excursion},
         {"max_reference_residual", s.max_reference_residual},
         {"max_alignment_error", s.max_alignment_error},
         {"min_surge", s.min_surge},
         {"surge_fallback_ticks", s.surge_fallback_ticks},
         {"loop_fallback_ticks", s.loop_fallback_ticks},
         {"final_barycenter", to_json(s.final_barycenter)},
         {"final_sigma_norm", s.final_sigma_norm}};
  for (const auto& e : s.colav_episodes) j["colav_episodes"].push_back(to_json(e));
  for (const auto& e : s.oa_episodes) j["oa_episodes"].push_back(to_json(e));
  for (const auto& e : s.depth_episodes) j["depth_episodes"].push_back(to_json(e));
  return j;
}

}  // namespace nsbf
