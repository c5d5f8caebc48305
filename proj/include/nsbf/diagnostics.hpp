#pragma once

#include <nsbf/scenario.hpp>
#include <nsbf/telemetry.hpp>

#include <random>

namespace nsbf {

// ---------------------------------------------------------------------------
// Closed-loop Lyapunov quantities
// ---------------------------------------------------------------------------

inline double lyapunov(const VecX& sigma_err, const Vec3& p_bp) {
  return 0.5 * (sigma_err.squaredNorm() + p_bp.squaredNorm());
}

//! Exact nominal-mode Lyapunov rate: the saturated formation feedback term
//! plus the three LOS damping terms. Non-positive by construction.
inline double vdot_analytic(const VecX& sigma_err, const Vec3& p_bp, double lambda2,
                            double v2_max, double U_los, double k_xi, double Delta,
                            double D) {
  (void)Delta;
  const VecX y = lambda2 * sigma_err;
  const double formation = -v2_max * sigma_err.dot(saturate(y));
  const double x = p_bp.x();
  const double crosstrack =
      -U_los * (k_xi * x * x / std::sqrt(1.0 + x * x) +
                (p_bp.y() * p_bp.y() + p_bp.z() * p_bp.z()) / D);
  return formation + crosstrack;
}

//! Quadratic decrease coefficient valid on the ball of radius r.
inline double k_r(double r, double v2_max, double lambda2_min, double U_los, double k_xi,
                  double delta0) {
  if (r <= 0.0) throw std::domain_error("k_r: radius must be positive");
  return std::min({v2_max * lambda2_min * sat_gain(r),
                   U_los * k_xi / std::sqrt(1.0 + r * r),
                   U_los / std::sqrt(delta0 * delta0 + 2.0 * r * r)});
}

//! Cascade perturbation of one vehicle's position dynamics and its bound.
struct Perturbation {
  Vec3 g = Vec3::Zero();
  double bound = 0.0;       // ||v_nsb|| (1 + sqrt2/2) ||delta|| + |u~|
  double alpha1 = 0.0;      // linear-comparison functions at r = ||X~||
  double alpha2 = 0.0;
};

inline Perturbation perturbation(const VehicleState& state, const GuidanceCommand& cmd,
                                 const Vec3& v_nsb_i, double U_los, double k_nsb_value,
                                 double v2_max) {
  const Mat3 R_tilde = cmd.R_d.transpose() * state.R;
  const Vec3 delta = logm_so3(R_tilde);
  const double u_tilde = state.v.x() - cmd.u_d;
  const double theta = delta.norm();
  double s, c;
  rodrigues_coeffs(theta, s, c);

  Perturbation out;
  out.g = s * delta.cross(v_nsb_i) + c * delta.cross(delta.cross(v_nsb_i)) +
          state.R * Vec3(u_tilde, 0, 0);
  const double k = 1.0 + std::sqrt(2.0) / 2.0;
  out.bound = v_nsb_i.norm() * k * theta + std::abs(u_tilde);
  const double r = std::sqrt(u_tilde * u_tilde + delta.squaredNorm() +
                             (state.omega - R_tilde.transpose() * cmd.omega_d).squaredNorm());
  out.alpha1 = (U_los * (1.0 + k_nsb_value) * k + 1.0) * r;
  out.alpha2 = v2_max * k * r;
  return out;
}

// ---------------------------------------------------------------------------
// Bound constants
// ---------------------------------------------------------------------------

enum class Verdict { Pass, Fail, Indeterminate };

inline const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::Pass: return "pass";
    case Verdict::Fail: return "fail";
    case Verdict::Indeterminate: return "indeterminate";
  }
  return "?";
}

//! Computable versions of the closed-loop constants. Suprema are taken on a
//! xi grid (and a Monte Carlo sweep over the operating envelope for the loop
//! margin) and inflated for conservatism.
struct BoundConstants {
  double k_nsb = 0.0;
  double c_nsb = 0.0;      // sup of the direction-rate integrand
  double e_d_sup = 0.0;    // sup ||e_d||
  double g_ratio = 0.0;    // sup ||iota x f|| / (speed ||e_p||)
  double U_ceiling = 0.0;  // speed law on the envelope
  double a_nsb = 0.0, b_nsb = 0.0;
  double a_v = 0.0, b_v = 0.0;
  double k_a_global = 0.0;   // termwise constant, any sway/heave
  double k_a_envelope = 0.0; // 1 - det margin over the operating envelope
  double k_a = 0.0;          // effective: min of the two
  double Y_min = 0.0;
  double X_max = 0.0;
  double a = 0.0;            // (a_nsb + a_v)/(1 - k_a)
  Verdict verdict = Verdict::Indeterminate;
};

//! Termwise constant lower-bounding det(I + A) as 1 - k_a for any sway and
//! heave, u in [u_min, u_max] and current components below c. Assembled from
//! the determinant expansion groups; each term is individually conservative.
inline double k_a_global_terms(const AffineCoeffs& a, double c, double u_min,
                               double u_max) {
  (void)u_max;
  const double c2 = c * c, um = u_min, um2 = u_min * u_min, um3 = um2 * u_min;
  double k = 0.0;
  k += c / um;                                                            // T1
  k += 3.0 * c * (um + c) / um2;                                          // T2
  k += (std::abs(a.X_v0) + std::abs(a.X_w0)) / um;                        // T3
  k += 2.0 * std::abs(a.X_v1 - a.X_w1 - a.X_v1 * a.X_w1) * (um2 + c2) / um2;  // T4
  k += std::max(std::abs(a.X_v1 + a.Z_w1 + a.X_v1 * a.Z_w1),
                std::abs(a.X_w1 + a.Z_v1 + a.X_w1 * a.Z_v1)) *
       (um + c) / um;                                                     // T5
  k += std::abs(a.X_v0 * a.X_w0) / um2;                                   // T6
  k += std::max(std::abs(a.X_v0), std::abs(a.X_w0)) * (um2 + c2) / um3;   // T7
  k += (std::abs(a.X_v0) * std::max(std::abs(a.X_w1), std::abs(a.Z_w1)) +
        std::abs(a.X_w0) * std::max(std::abs(a.X_v1), std::abs(a.Z_v1))) / um;  // T8
  k += std::abs(a.X_v1 + a.Z_w1 - a.X_v1 * a.Z_w1) * c * (um + c) / um2;  // T9
  k += std::abs(a.X_w1 + a.Z_v1 - a.X_w1 * a.Z_v1) * c * (um + c) / um2;  // T10
  k += (std::abs(a.X_v0) * (std::abs(a.X_w1) + std::abs(a.Z_w1)) +
        std::abs(a.X_w0) * (std::abs(a.X_v1) + std::abs(a.Z_v1))) * c / um2;  // T11
  return k;
}

inline BoundConstants bound_constants(const PreparedScenario& sc) {
  BoundConstants out;
  const ModelParams& model = sc.model;
  const AffineCoeffs& cf = model.affine;
  const GainConfig& g = sc.config.gains;
  const double c = sc.config.current.norm();
  const double ceil = sc.config.envelope.sway_heave_ceiling;
  const int n = sc.config.n();

  out.k_nsb = sc.k_nsb_value;
  std::vector<Eigen::Vector2d> worst(n, {ceil, ceil});
  out.U_ceiling = u_los(worst, g.v2_max, model.u_min, out.k_nsb);

  // grid suprema of the direction-rate quantities, both the printed
  // integrand and the one matching the exact derivative, inflated
  const int grid = sc.config.diagnostics.grid_points;
  double sup_c = 0.0, sup_ed = 0.0, sup_ratio = 0.0;
  for (int k = 0; k <= grid; ++k) {
    const double xi = sc.xi_lo + (sc.xi_hi - sc.xi_lo) * k / grid;
    const PathFrame f = sc.path.evaluate(xi);
    for (const Vec3& off : sc.formation.offsets) {
      const Vec3 e_p = Vec3::UnitX() + f.kappa.cross(off);
      const Vec3 ixf = f.iota.cross(off);
      const Vec3 e_d_paper = f.kappa.cross(e_p) + ixf;
      const Vec3 e_d_true = f.kappa.cross(e_p) + ixf / f.speed;
      const double ep = e_p.norm();
      sup_ed = std::max({sup_ed, e_d_paper.norm(), e_d_true.norm()});
      sup_c = std::max({sup_c,
                        f.kappa.norm() + ixf.norm() * (1.0 + ep) / ep,
                        f.kappa.norm() + ixf.norm() / (f.speed * ep)});
      sup_ratio = std::max(sup_ratio, ixf.norm() / (f.speed * ep));
    }
  }
  const double infl = sc.config.diagnostics.inflation;
  out.c_nsb = infl * sup_c;
  out.e_d_sup = infl * sup_ed;
  out.g_ratio = infl * sup_ratio;

  out.a_nsb = out.c_nsb / (1.0 - out.k_nsb);
  out.b_nsb = (g.v2_max + model.u_min) * out.c_nsb / (1.0 - out.k_nsb);

  // componentwise bound on ||omega_0|| <= a_v ||v_u|| + b_v over the envelope
  const double Ymax_v = std::abs(cf.Y_v0) + std::abs(cf.Y_v1) * (model.u_max + c);
  const double Ymax_w = std::abs(cf.Y_w0) + std::abs(cf.Y_w1) * (model.u_max + c);
  const double Zv = std::abs(cf.Z_v0), Zw = std::abs(cf.Z_w0);
  const double coef_sum = Ymax_v + Ymax_w + Zv + Zw;
  out.a_v = out.g_ratio * out.U_ceiling / model.u_min +
            std::sqrt(2.0) * std::max(Ymax_v + Zw, Ymax_w + Zv) / model.u_min;
  out.b_v = coef_sum * c / model.u_min + coef_sum * (1.0 + c / model.u_min);

  out.k_a_global = k_a_global_terms(cf, c, model.u_min, model.u_max);

  // Monte Carlo + corner sweep of the loop margin over the envelope
  std::mt19937_64 rng(sc.config.seed);
  std::uniform_real_distribution<double> uu(model.u_min, model.u_max);
  std::uniform_real_distribution<double> vw(-ceil, ceil);
  std::normal_distribution<double> gauss(0.0, 1.0);
  double worst_margin = 0.0;
  auto probe = [&](double u, double v, double w, const Vec3& vc) {
    const AffineLoop loop =
        affine_loop(u, v, w, vc, cf, Vec3(u, v, w), Vec3::Zero(), model.u_min);
    worst_margin = std::max(worst_margin, 1.0 - loop.det);
  };
  for (int k = 0; k < sc.config.diagnostics.envelope_samples; ++k) {
    Vec3 dir(gauss(rng), gauss(rng), gauss(rng));
    if (dir.norm() < 1e-9) dir = Vec3::UnitX();
    probe(uu(rng), vw(rng), vw(rng), c * dir.normalized());
  }
  for (double u : {model.u_min, 0.5 * (model.u_min + model.u_max), model.u_max})
    for (double v : {-ceil, 0.0, ceil})
      for (double w : {-ceil, 0.0, ceil})
        for (int axis = 0; axis < 6; ++axis) {
          Vec3 vc = Vec3::Zero();
          vc(axis % 3) = (axis < 3 ? c : -c);
          probe(u, v, w, vc);
        }
  out.k_a_envelope = infl * std::max(0.0, worst_margin);
  out.k_a = std::min(out.k_a_global, out.k_a_envelope);

  // damping / coupling extrema over the envelope
  const double p_ceil = sc.config.envelope.roll_rate_ceiling;
  double y_min = std::numeric_limits<double>::max();
  double x_max = 0.0;
  for (int k = 0; k <= 200; ++k) {
    const double u_r = (model.u_min - c) + (model.u_max + c - (model.u_min - c)) * k / 200.0;
    x_max = std::max({x_max, std::abs(cf.X_v0 + cf.X_v1 * u_r),
                      std::abs(cf.X_w0 + cf.X_w1 * u_r)});
    for (double p : {-p_ceil, 0.0, p_ceil}) {
      Eigen::Matrix2d Y;
      Y << cf.Y_v0 + cf.Y_v1 * u_r, cf.Z_v0 + cf.Z_v1 * p,
           cf.Z_w0 + cf.Z_w1 * p, cf.Y_w0 + cf.Y_w1 * u_r;
      const Eigen::EigenSolver<Eigen::Matrix2d> eig(-Y);
      y_min = std::min({y_min, eig.eigenvalues()(0).real(), eig.eigenvalues()(1).real()});
    }
  }
  out.Y_min = y_min;
  out.X_max = x_max;

  if (out.k_a < 1.0) {
    out.a = (out.a_nsb + out.a_v) / (1.0 - out.k_a);
    out.verdict = out.Y_min > out.a * out.X_max ? Verdict::Pass : Verdict::Fail;
  } else {
    out.a = std::numeric_limits<double>::infinity();
    out.verdict = Verdict::Indeterminate;
  }
  return out;
}

inline Verdict boundedness_precheck(const BoundConstants& b) { return b.verdict; }

// ---------------------------------------------------------------------------
// Sampled and trajectory audits of the closed-loop bounds
// ---------------------------------------------------------------------------

struct BoundAudit {
  long samples = 0;
  long omega_nsb_violations = 0;
  long omega0_violations = 0;
  long det_violations = 0;
  double worst_omega_nsb_ratio = 0.0;  // ||omega|| / bound
  double worst_omega0_ratio = 0.0;
  double worst_det_margin = 1.0;       // min det - (1 - k_a)
};

//! Evaluates the appendix quantities on the zero-error manifold at one
//! sampled state and scores them against the constants.
inline void audit_point(const PreparedScenario& sc, const BoundConstants& b, double xi,
                        int vehicle, const std::vector<Eigen::Vector2d>& sway_heave,
                        const Vec3& current_body, BoundAudit& audit) {
  const GainConfig& g = sc.config.gains;
  const PathFrame frame = sc.path.evaluate(xi);
  const double U = u_los(sway_heave, g.v2_max, sc.model.u_min, b.k_nsb);
  const ManifoldGuidance m = manifold_guidance(frame, sc.formation.offsets[vehicle], U);

  double v_u_norm2 = 0.0;
  for (const auto& vw : sway_heave) v_u_norm2 += vw.squaredNorm();
  const double v_u = std::sqrt(v_u_norm2);

  ++audit.samples;
  const double omega_nsb = m.omega_v_nsb.norm();
  const double nsb_bound = b.a_nsb * v_u + b.b_nsb;
  audit.worst_omega_nsb_ratio = std::max(audit.worst_omega_nsb_ratio, omega_nsb / nsb_bound);
  if (omega_nsb > nsb_bound) ++audit.omega_nsb_violations;

  const double v = sway_heave[vehicle].x(), w = sway_heave[vehicle].y();
  const double margin2 = m.v_nsb.squaredNorm() - v * v - w * w;
  const double u = std::sqrt(std::max(margin2, sc.model.u_min * sc.model.u_min));
  const AffineLoop loop = affine_loop(u, v, w, current_body, sc.model.affine, m.v_nsb,
                                      m.v_nsb_dot, sc.model.u_min);
  const double omega0 = loop.omega0.norm();
  const double v_bound = b.a_v * v_u + b.b_v;
  audit.worst_omega0_ratio = std::max(audit.worst_omega0_ratio, omega0 / v_bound);
  if (omega0 > v_bound) ++audit.omega0_violations;

  audit.worst_det_margin = std::min(audit.worst_det_margin, loop.det - (1.0 - b.k_a));
  if (loop.det < 1.0 - b.k_a) ++audit.det_violations;
}

inline BoundAudit sampled_bound_audit(const PreparedScenario& sc, const BoundConstants& b,
                                      long samples, std::uint64_t seed) {
  BoundAudit audit;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> xi(sc.xi_lo, sc.xi_hi);
  const double ceil = sc.config.envelope.sway_heave_ceiling;
  std::uniform_real_distribution<double> vw(-ceil, ceil);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_int_distribution<int> veh(0, sc.config.n() - 1);
  const double c = sc.config.current.norm();
  for (long k = 0; k < samples; ++k) {
    std::vector<Eigen::Vector2d> sways(sc.config.n());
    for (auto& s : sways) s = {vw(rng), vw(rng)};
    Vec3 dir(gauss(rng), gauss(rng), gauss(rng));
    if (dir.norm() < 1e-9) dir = Vec3::UnitX();
    audit_point(sc, b, xi(rng), veh(rng), sways, c * dir.normalized(), audit);
  }
  return audit;
}

inline BoundAudit trajectory_bound_audit(const PreparedScenario& sc, const BoundConstants& b,
                                         const std::vector<TelemetryRecord>& telemetry) {
  BoundAudit audit;
  const double c = sc.config.current.norm();
  for (const TelemetryRecord& r : telemetry) {
    std::vector<Eigen::Vector2d> sways(r.vehicles.size());
    for (size_t i = 0; i < r.vehicles.size(); ++i)
      sways[i] = {r.vehicles[i].v.y(), r.vehicles[i].v.z()};
    (void)c;
    for (size_t i = 0; i < r.vehicles.size(); ++i) {
      const Mat3 R = expm_so3(r.vehicles[i].rotvec);
      audit_point(sc, b, r.xi, static_cast<int>(i), sways,
                  R.transpose() * sc.config.current, audit);
    }
  }
  return audit;
}

// ---------------------------------------------------------------------------
// Run-level stability report
// ---------------------------------------------------------------------------

struct ExponentialFit {
  double lambda = 0.0;  // decay exponent (positive when decaying)
  double C = 0.0;       // envelope constant
  bool valid = false;
};

//! Least-squares slope of log(values) plus the envelope constant against
//! v0 exp(-lambda t). Entries below `floor` are excluded from the fit.
inline ExponentialFit fit_exponential(const std::vector<double>& t,
                                      const std::vector<double>& v, double floor = 1e-14) {
  ExponentialFit out;
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int m = 0;
  for (size_t k = 0; k < v.size(); ++k) {
    if (v[k] <= floor) break;
    const double y = std::log(v[k]);
    sx += t[k];
    sy += y;
    sxx += t[k] * t[k];
    sxy += t[k] * y;
    ++m;
  }
  if (m < 3 || v.empty() || v[0] <= floor) return out;
  out.lambda = -(m * sxy - sx * sy) / (m * sxx - sx * sx);
  out.C = 0.0;
  for (size_t k = 0; k < v.size() && v[k] > floor; ++k)
    out.C = std::max(out.C, v[k] / (v[0] * std::exp(-out.lambda * t[k])));
  out.valid = true;
  return out;
}

struct StabilityReport {
  double r_obs = 0.0;        // max ||sigma~|| over the run
  double k_r_obs = 0.0;      // k_r at r_obs (with the smallest U_los seen)
  long decrease_violations = 0;   // FD V_dot above the decrease bound
  double max_vdot_mismatch = 0.0; // |analytic - FD|, nominal segments
  ExponentialFit v_fit;           // fit of V(t)
  BoundConstants constants;
  BoundAudit sampled_audit;
  BoundAudit trajectory_audit;
};

//! Audits a logged run: compares the analytic Lyapunov rate with a centered
//! finite difference, counts violations of the quadratic decrease bound, and
//! fits the decay of V. Meaningful for nominal (no avoidance) runs.
inline StabilityReport stability_report(const PreparedScenario& sc,
                                        const std::vector<TelemetryRecord>& telemetry,
                                        const BoundConstants& constants) {
  StabilityReport rep;
  rep.constants = constants;
  const GainConfig& g = sc.config.gains;

  double U_min_seen = std::numeric_limits<double>::max();
  for (const auto& r : telemetry) {
    const double sn = std::sqrt(r.sigma_err.squaredNorm() + r.p_bp.squaredNorm());
    rep.r_obs = std::max(rep.r_obs, sn);
    U_min_seen = std::min(U_min_seen, r.U_los);
  }
  if (telemetry.empty()) return rep;
  rep.k_r_obs = k_r(std::max(rep.r_obs, 1e-12), g.v2_max, g.lambda2, U_min_seen, g.k_xi,
                    g.delta0);

  std::vector<double> ts, vs;
  ts.reserve(telemetry.size());
  for (const auto& r : telemetry) {
    ts.push_back(r.t);
    vs.push_back(r.V);
  }
  for (size_t k = 1; k + 1 < telemetry.size(); ++k) {
    const double dt = telemetry[k + 1].t - telemetry[k].t;
    const double fd = (vs[k + 1] - vs[k - 1]) / (2.0 * dt);
    const auto& r = telemetry[k];
    const double sn2 = r.sigma_err.squaredNorm() + r.p_bp.squaredNorm();
    if (fd > -rep.k_r_obs * sn2 + 1e-6) ++rep.decrease_violations;
    rep.max_vdot_mismatch = std::max(rep.max_vdot_mismatch, std::abs(fd - r.V_dot));
  }
  rep.v_fit = fit_exponential(ts, vs, 1e-18);
  return rep;
}

inline Json to_json(const BoundConstants& b) {
  return Json{{"k_nsb", b.k_nsb},
              {"c_nsb", b.c_nsb},
              {"e_d_sup", b.e_d_sup},
              {"U_ceiling", b.U_ceiling},
              {"a_nsb", b.a_nsb},
              {"b_nsb", b.b_nsb},
              {"a_v", b.a_v},
              {"b_v", b.b_v},
              {"k_a_global", b.k_a_global},
              {"k_a_envelope", b.k_a_envelope},
              {"k_a", b.k_a},
              {"Y_min", b.Y_min},
              {"X_max", b.X_max},
              {"a", b.a},
              {"verdict", to_string(b.verdict)}};
}

inline Json to_json(const BoundAudit& a) {
  return Json{{"samples", a.samples},
              {"omega_nsb_violations", a.omega_nsb_violations},
              {"omega0_violations", a.omega0_violations},
              {"det_violations", a.det_violations},
              {"worst_omega_nsb_ratio", a.worst_omega_nsb_ratio},
              {"worst_omega0_ratio", a.worst_omega0_ratio},
              {"worst_det_margin", a.worst_det_margin}};
}

inline Json to_json(const StabilityReport& r) {
  return Json{{"r_obs", r.r_obs},
              {"k_r_obs", r.k_r_obs},
              {"decrease_violations", r.decrease_violations},
              {"max_vdot_mismatch", r.max_vdot_mismatch},
              {"v_fit_lambda", r.v_fit.lambda},
              {"v_fit_C", r.v_fit.C},
              {"v_fit_valid", r.v_fit.valid},
              {"constants", to_json(r.constants)},
              {"sampled_audit", to_json(r.sampled_audit)},
              {"trajectory_audit", to_json(r.trajectory_audit)}};
}

}  // namespace nsbf
