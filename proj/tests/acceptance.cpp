// Acceptance suite: one pass/fail line per criterion, nonzero exit if any
// criterion fails. Run from the repository root (scenario fixtures are
// resolved relative to the working directory).

#include <nsbf/simulator.hpp>

#include <chrono>
#include <cstdio>
#include <random>

using namespace nsbf;

namespace {

int failures = 0;

void report(int number, bool pass, const std::string& name, const std::string& detail) {
  std::printf("[%2d] %s  %-38s %s\n", number, pass ? "PASS" : "FAIL", name.c_str(),
              detail.c_str());
  if (!pass) ++failures;
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), f, a, b, c);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Vec3 random_axis_angle(std::mt19937& rng, double max_angle) {
  std::normal_distribution<double> g(0.0, 1.0);
  Vec3 axis(g(rng), g(rng), g(rng));
  while (axis.norm() < 1e-6) axis = Vec3(g(rng), g(rng), g(rng));
  axis.normalize();
  std::uniform_real_distribution<double> mag(0.0, max_angle);
  return mag(rng) * axis;
}

// --- 1: SO(3) round trip ---------------------------------------------------
void criterion_1() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937 rng(101);
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const Vec3 d = random_axis_angle(rng, M_PI - 0.1);
    worst = std::max(worst, (logm_so3(expm_so3(d)) - d).norm());
  }
  const double wall = seconds_since(t0);
  report(1, worst < 1e-9 && wall < 1.0, "SO(3) round trip",
         fmt("max err %.2e, %.2f s", worst, wall));
}

// --- 3: NSB simplification --------------------------------------------------
void criterion_3() {
  std::mt19937 rng(303);
  std::uniform_real_distribution<double> u(-30.0, 30.0);
  const PathSpec path = PathSpec::spiral(Vec3(0, -40, 25), 40.0, 20.0, 2.0 * M_PI / 250.0);
  const FormationSpec form{{Vec3(0, 10, 5), Vec3(0, -10, 5), Vec3(0, 0, -10)}};
  TaskOutput inactive;
  inactive.velocity = VecX::Zero(9);
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    FleetState fleet{{Vec3(u(rng), u(rng), u(rng)), Vec3(u(rng), u(rng), u(rng)),
                      Vec3(u(rng), u(rng), u(rng))}};
    const PathFrame frame = path.evaluate(std::abs(u(rng)) * 12.0);
    const FormationTask ft =
        formation_task(fleet, form, frame, 1.0 + 0.01 * u(rng), 0.1, 0.5);
    const LosTask lt = los_task(Vec3(u(rng), u(rng), u(rng)), frame, 5.0, 1.5, 3);
    const VecX out = compose(inactive, ft.task, lt.task.velocity);
    worst = std::max(worst, (out - (ft.task.velocity + lt.task.velocity)).norm());
  }
  report(3, worst < 1e-12, "NSB simplification, COLAV inactive", fmt("max %.2e", worst));
}

// --- 9: exponential low-level tracking --------------------------------------
void criterion_9() {
  const ModelParams params = default_model();
  const ControlGains gains;
  std::mt19937 rng(909);
  std::uniform_real_distribution<double> u(-1.0, 1.0);

  bool all_ok = true;
  double worst_lambda = 1e9, worst_C = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    GuidanceCommand cmd;
    cmd.u_d = 1.0;
    cmd.R_d = expm_so3(random_axis_angle(rng, M_PI - 0.2));
    cmd.omega_d = Vec3::Zero();

    VehicleState s;
    s.R = cmd.R_d * expm_so3(random_axis_angle(rng, M_PI - 0.1));
    s.v = Vec3(cmd.u_d + u(rng), 0, 0);
    s.omega = Vec3(u(rng), u(rng), u(rng));
    const double e0 = tracking_error(s, cmd).norm();

    std::vector<double> ts, es;
    const double dt = 0.01;
    for (int k = 0; k < 3000; ++k) {
      auto f = [&](const VehicleState& x) {
        return dynamics_derivative(x, control(x, cmd, OceanCurrent{}, params, gains),
                                   OceanCurrent{}, params);
      };
      auto shift = [&](const VehicleState& x, const StateDerivative& d, double h) {
        VehicleState out = x;
        out.p += h * d.p_dot;
        out.R = x.R * expm_so3(h * d.omega);
        out.v += h * d.nu_dot.head<3>();
        out.omega += h * d.nu_dot.tail<3>();
        return out;
      };
      const auto k1 = f(s);
      const auto k2 = f(shift(s, k1, dt / 2));
      const auto k3 = f(shift(s, k2, dt / 2));
      const auto k4 = f(shift(s, k3, dt));
      StateDerivative d;
      d.p_dot = (k1.p_dot + 2 * k2.p_dot + 2 * k3.p_dot + k4.p_dot) / 6.0;
      d.omega = (k1.omega + 2 * k2.omega + 2 * k3.omega + k4.omega) / 6.0;
      d.nu_dot = (k1.nu_dot + 2 * k2.nu_dot + 2 * k3.nu_dot + k4.nu_dot) / 6.0;
      s = shift(s, d, dt);
      ts.push_back(dt * (k + 1));
      es.push_back(tracking_error(s, cmd).norm());
    }
    const ExponentialFit fit = fit_exponential(ts, es, 1e-11 * std::max(e0, 1e-6));
    if (!fit.valid || fit.lambda <= 0.0 || fit.C >= 10.0) all_ok = false;
    worst_lambda = std::min(worst_lambda, fit.lambda);
    worst_C = std::max(worst_C, fit.C);
  }
  report(9, all_ok, "exponential low-level tracking",
         fmt("min lambda %.3f, max C %.2f over 100 trials", worst_lambda, worst_C));
}

}  // namespace

int main() {
  std::printf("acceptance suite\n================\n");

  criterion_1();

  // --- full fixture run, shared by 2, 6, 7, 8, 11 --------------------------
  PreparedScenario fixture = load_scenario("scenarios/spiral_triangle.json");
  const RunResult full = run_scenario(fixture);

  // 2: orthonormality under integration
  report(2, !full.summary.aborted && full.summary.max_orthonormality < 1e-9,
         "orthonormality over 250 s",
         fmt("max ||R'R - I|| = %.2e", full.summary.max_orthonormality));

  criterion_3();

  // --- 4: Lyapunov decrease in ideal mode ----------------------------------
  {
    PreparedScenario sc = load_scenario("scenarios/spiral_triangle_nominal.json");
    sc.config.mode = RunMode::Ideal;
    const auto t0 = std::chrono::steady_clock::now();
    const RunResult res = run_scenario(sc);
    const double wall = seconds_since(t0);
    const GainConfig& g = sc.config.gains;

    double r_obs = 0.0, U_min = 1e9;
    for (const auto& r : res.telemetry) {
      r_obs = std::max(r_obs, std::sqrt(r.sigma_err.squaredNorm() + r.p_bp.squaredNorm()));
      U_min = std::min(U_min, r.U_los);
    }
    const double kr = k_r(r_obs, g.v2_max, g.lambda2, U_min, g.k_xi, g.delta0);

    long mismatch = 0, decrease = 0;
    double worst_mismatch = 0.0;
    for (size_t k = 1; k + 1 < res.telemetry.size(); ++k) {
      const auto& r = res.telemetry[k];
      const double dt = res.telemetry[k + 1].t - r.t;
      const double fd = (res.telemetry[k + 1].V - res.telemetry[k - 1].V) / (2 * dt);
      const double tol = std::max(1e-6, 1e-3 * std::abs(r.V_dot));
      if (std::abs(fd - r.V_dot) > tol) ++mismatch;
      worst_mismatch = std::max(worst_mismatch, std::abs(fd - r.V_dot));
      const double sn2 = r.sigma_err.squaredNorm() + r.p_bp.squaredNorm();
      if (fd > -kr * sn2 + 1e-6) ++decrease;
    }
    std::vector<double> ts, vs;
    for (const auto& r : res.telemetry) {
      ts.push_back(r.t);
      vs.push_back(r.V);
    }
    const ExponentialFit fit = fit_exponential(ts, vs, 1e-18);
    const bool pass = !res.summary.aborted && mismatch == 0 && decrease == 0 &&
                      fit.valid && fit.lambda > 0.0 && wall < 10.0;
    report(4, pass, "Lyapunov decrease, ideal mode",
           fmt("mismatches %g, bound violations %g, wall %.1f s", double(mismatch),
               double(decrease), wall) +
               fmt(", logV slope %.4f", -fit.lambda));
  }

  // --- 5: orientation-rate constraint residual ------------------------------
  {
    const PreparedScenario sc = load_scenario("scenarios/spiral_triangle_nominal.json");
    const RunResult res = run_scenario(sc);
    // the speed condition must also hold on every nominal step
    const bool pass = !res.summary.aborted && res.summary.max_reference_residual < 1e-9 &&
                      res.summary.loop_fallback_ticks == 0 &&
                      res.summary.surge_fallback_ticks == 0;
    report(5, pass, "rate-constraint residual, nominal run",
           fmt("max residual %.2e, fallbacks %g", res.summary.max_reference_residual,
               double(res.summary.surge_fallback_ticks + res.summary.loop_fallback_ticks)));
  }

  // --- 6: qualitative scenario reproduction ---------------------------------
  {
    const RunSummary& s = full.summary;
    const double u_min = fixture.model.u_min;
    bool pass = !s.aborted;
    std::string why;
    if (s.min_pair_distance < 5.0) {
      pass = false;
      why += " pair<5";
    }
    if (s.min_obstacle_clearance < -0.5) {
      pass = false;
      why += " clearance<-0.5";
    }
    // clearance must be nonnegative away from switching transients
    double clearance_outside = 1e9;
    for (size_t k = 0; k < full.telemetry.size(); ++k) {
      const auto& r = full.telemetry[k];
      bool near_edge = false;
      for (size_t j = 0; j < full.telemetry.size(); ++j) {
        const auto& q = full.telemetry[j];
        if (std::abs(q.t - r.t) <= 3.0) {
          const int prev = j > 0 ? full.telemetry[j - 1].flag_oa : q.flag_oa;
          if (q.flag_oa != prev) {
            near_edge = true;
            break;
          }
        }
      }
      if (!near_edge) clearance_outside = std::min(clearance_outside, r.obstacle_clearance);
    }
    if (clearance_outside < 0.0) {
      pass = false;
      why += " clearance<0 outside transients";
    }
    if (s.max_depth_excursion > 1.0) {
      pass = false;
      why += " depth excursion>1";
    }
    if (s.min_surge < u_min - 1e-9) {
      pass = false;
      why += " surge<u_min";
    }
    const bool timeline =
        !s.colav_episodes.empty() && !s.oa_episodes.empty() && s.depth_episodes.size() >= 2 &&
        s.colav_episodes.front().t_start < s.oa_episodes.front().t_start &&
        s.oa_episodes.front().t_start < s.depth_episodes.front().t_start;
    if (!timeline) {
      pass = false;
      why += " timeline";
    }
    report(6, pass, "scenario reproduction",
           fmt("pair %.2f m, clearance %.2f m, excursion %.2f m", s.min_pair_distance,
               s.min_obstacle_clearance, s.max_depth_excursion) +
               fmt(", depth episodes %g", double(s.depth_episodes.size())) + why);
  }

  // --- 7: bound domination ---------------------------------------------------
  {
    const BoundConstants b = bound_constants(fixture);
    const BoundAudit sampled = sampled_bound_audit(fixture, b, 100000, 777);
    const BoundAudit traj = trajectory_bound_audit(fixture, b, full.telemetry);
    const bool pass = sampled.omega_nsb_violations == 0 && sampled.omega0_violations == 0 &&
                      sampled.det_violations == 0 && traj.omega_nsb_violations == 0 &&
                      traj.omega0_violations == 0 && traj.det_violations == 0;
    report(7, pass, "closed-loop bound domination",
           fmt("worst ratios %.2f / %.2f, det margin %.3f", sampled.worst_omega_nsb_ratio,
               sampled.worst_omega0_ratio,
               std::min(sampled.worst_det_margin, traj.worst_det_margin)));
  }

  // --- 8: boundedness precheck consistency -----------------------------------
  {
    const BoundConstants b = bound_constants(fixture);
    bool pass = b.verdict == Verdict::Pass && full.summary.max_sway_heave < 1.0;

    PreparedScenario weak = fixture;
    weak.config.model.damping_diag *= 0.01;
    weak = prepare_scenario(weak.config);
    const BoundConstants bw = bound_constants(weak);
    if (bw.verdict != Verdict::Fail) pass = false;
    report(8, pass, "boundedness precheck consistency",
           std::string("fixture ") + to_string(b.verdict) + ", weak damping " +
               to_string(bw.verdict) +
               fmt(", max sway/heave %.3f m/s", full.summary.max_sway_heave));
  }

  criterion_9();

  // --- 10: step-size convergence ---------------------------------------------
  {
    const PreparedScenario sc = load_scenario("scenarios/spiral_triangle_nominal.json");
    const RunResult a = run_scenario(sc);
    PreparedScenario fine = sc;
    fine.config.dt = 0.005;
    const RunResult c = run_scenario(fine);
    const double diff = (a.summary.final_barycenter - c.summary.final_barycenter).norm();
    report(10, diff < 1e-4, "step-size convergence",
           fmt("final barycenter difference %.2e m", diff));
  }

  // --- 11: determinism ---------------------------------------------------------
  {
    const RunResult again = run_scenario(fixture);
    bool same = again.telemetry.size() == full.telemetry.size();
    if (same) {
      TelemetryWriter wa("/tmp/nsbf_acc_a.csv", fixture.config.n());
      TelemetryWriter wb("/tmp/nsbf_acc_b.csv", fixture.config.n());
      for (const auto& r : full.telemetry) wa.append(r);
      for (const auto& r : again.telemetry) wb.append(r);
      wa.flush();
      wb.flush();
      std::ifstream fa("/tmp/nsbf_acc_a.csv", std::ios::binary);
      std::ifstream fb("/tmp/nsbf_acc_b.csv", std::ios::binary);
      std::string sa((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
      std::string sb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
      same = !sa.empty() && sa == sb;
    }
    report(11, same, "determinism", same ? "byte-identical telemetry" : "runs differ");
  }

  std::printf("================\n%s (%d failing)\n", failures == 0 ? "ALL PASS" : "FAILURES",
              failures);
  return failures == 0 ? 0 : 1;
}
