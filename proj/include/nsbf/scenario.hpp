#pragma once

#include <nsbf/reference.hpp>

#include <json.hpp>

#include <fstream>
#include <optional>
#include <sstream>
#include <string>

namespace nsbf {

using Json = nlohmann::json;

enum class RunMode { Full, Ideal };

struct GainConfig {
  double lambda1 = 1.0;        // COLAV CLIK gain
  double lambda2 = 0.1;        // formation gain
  double k_xi = 0.25;          // along-track feedback in the xi update
  double v2_max = 0.5;         // formation velocity bound [m/s]
  double delta0 = 5.0;         // lookahead floor [m]
  double U_colav = 0.5;        // evasive speed [m/s]
  double d_colav = 10.0;       // COLAV activation distance [m]
  double d_min = 5.0;          // minimum safe inter-vehicle distance [m]
  double alpha_min_deg = 15.0; // obstacle-avoidance switching angle
  double z_min = 1.0;          // shallow operation limit [m]
  double z_max = 49.0;         // deep operation limit [m]
  double v_z = 0.3;            // depth-limiting vertical speed [m/s]
  double k_u = 2.0;            // low-level gains
  double k_R = 5.0;
  double k_omega = 3.0;
  double surge_rate_limit = 1.0;   // [m/s^2]
  double omega_d_limit = 1.5;      // reference angular rate cap [rad/s]
  double depth_hysteresis = 0.5;   // release band for the depth modes [m]
  double k_align = 1.0;            // reference re-alignment gain [1/s]

  double alpha_min() const { return alpha_min_deg * M_PI / 180.0; }
};

//! Operating envelope used when turning the closed-loop constants into
//! computable suprema.
struct EnvelopeConfig {
  double sway_heave_ceiling = 0.25;  // per-channel |v|, |w| bound [m/s]
  double roll_rate_ceiling = 0.5;    // |p| bound [rad/s]
  double run_sway_ceiling = 1.0;     // acceptance ceiling on ||(v_i, w_i)||
};

struct DiagnosticsConfig {
  int grid_points = 10000;      // xi grid for suprema
  int envelope_samples = 200000;  // Monte Carlo samples for the loop margin
  double inflation = 1.1;       // conservative inflation of grid suprema
};

struct PathConfig {
  std::string type = "spiral";  // line | spiral | spline
  Vec3 origin = Vec3(0, -40, 25);
  Vec3 direction = Vec3(1, 0, 0);            // line
  double amplitude_y = 40.0;                 // spiral
  double amplitude_z = 20.0;                 // spiral
  double spatial_frequency = 2.0 * M_PI / 100.0;
  std::vector<Vec3> waypoints;               // spline
  double spacing = 10.0;                     // spline
  double xi_start = 0.0;

  PathSpec build() const {
    if (type == "line") return PathSpec::line(origin, direction);
    if (type == "spiral") return PathSpec::spiral(origin, amplitude_y, amplitude_z,
                                                  spatial_frequency);
    if (type == "spline") return PathSpec::spline(waypoints, spacing);
    throw std::invalid_argument("path: unknown type '" + type + "'");
  }
};

struct ModelConfig {
  Vec6 mass_diag = (Vec6() << 19.0, 480.0, 480.0, 0.5, 8.0, 8.0).finished();
  Vec6 damping_diag = (Vec6() << 4.0, 576.0, 576.0, 0.3, 10.0, 10.0).finished();
  double sway_yaw_damping = 0.0;    // D(1,5)
  double heave_pitch_damping = 0.0; // D(2,4)
  double weight = 18.0 * 9.81;
  double cb_offset = 0.02;
  double u_min = 0.7;
  double u_max = 2.8;
  std::optional<AffineCoeffs> affine_override;

  ModelParams build() const {
    ModelParams p;
    p.M = mass_diag.asDiagonal();
    p.D = damping_diag.asDiagonal();
    p.D(1, 5) = sway_yaw_damping;
    p.D(2, 4) = heave_pitch_damping;
    p.weight = weight;
    p.cb_offset = cb_offset;
    p.u_min = u_min;
    p.u_max = u_max;
    p.affine = affine_override ? *affine_override : derive_affine(p.M, p.D);
    p.affine_overridden = affine_override.has_value();
    return p;
  }
};

struct ScenarioConfig {
  std::string name = "scenario";
  RunMode mode = RunMode::Full;
  double dt = 0.01;
  double duration = 250.0;
  double guidance_period = 0.01;
  int renormalize_period = 1000;  // steps; 0 disables
  std::uint64_t seed = 1;
  Vec3 current = Vec3::Zero();

  ModelConfig model;
  PathConfig path;
  std::vector<Vec3> formation;
  std::vector<Vec3> initial_positions;
  std::vector<Eigen::Vector2d> initial_sway_heave;  // optional, zero default
  std::vector<Obstacle> obstacles;
  GainConfig gains;
  EnvelopeConfig envelope;
  DiagnosticsConfig diagnostics;

  int n() const { return static_cast<int>(formation.size()); }
};

//! Validated, ready-to-run scenario: built model/path plus the derived
//! quantities every consumer needs.
struct PreparedScenario {
  ScenarioConfig config;
  ModelParams model;
  PathSpec path = PathSpec::line(Vec3::Zero(), Vec3::UnitX());
  FormationSpec formation;
  double k_nsb_value = 0.0;
  double xi_lo = 0.0, xi_hi = 0.0;  // reachable parameter range (with margin)
};

struct ConfigError : std::runtime_error {
  std::vector<std::string> errors;
  explicit ConfigError(std::vector<std::string> errs)
      : std::runtime_error(join(errs)), errors(std::move(errs)) {}
  static std::string join(const std::vector<std::string>& errs) {
    std::ostringstream os;
    os << "invalid scenario:";
    for (const auto& e : errs) os << "\n  - " << e;
    return os.str();
  }
};

// ---------------------------------------------------------------------------
// JSON conversions
// ---------------------------------------------------------------------------

inline Json to_json(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }

inline Vec3 vec3_from_json(const Json& j) {
  if (!j.is_array() || j.size() != 3) throw std::invalid_argument("expected 3-vector");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

inline Json to_json(const ScenarioConfig& c) {
  Json j;
  j["name"] = c.name;
  j["mode"] = c.mode == RunMode::Full ? "full" : "ideal";
  j["dt"] = c.dt;
  j["duration"] = c.duration;
  j["guidance_period"] = c.guidance_period;
  j["renormalize_period"] = c.renormalize_period;
  j["seed"] = c.seed;
  j["current"] = to_json(c.current);

  Json m;
  for (int i = 0; i < 6; ++i) m["mass_diag"].push_back(c.model.mass_diag(i));
  for (int i = 0; i < 6; ++i) m["damping_diag"].push_back(c.model.damping_diag(i));
  m["sway_yaw_damping"] = c.model.sway_yaw_damping;
  m["heave_pitch_damping"] = c.model.heave_pitch_damping;
  m["weight"] = c.model.weight;
  m["cb_offset"] = c.model.cb_offset;
  m["u_min"] = c.model.u_min;
  m["u_max"] = c.model.u_max;
  if (c.model.affine_override) {
    const AffineCoeffs& a = *c.model.affine_override;
    m["affine_override"] = Json{{"X_v0", a.X_v0}, {"X_v1", a.X_v1}, {"Y_v0", a.Y_v0},
                                {"Y_v1", a.Y_v1}, {"Z_v0", a.Z_v0}, {"Z_v1", a.Z_v1},
                                {"X_w0", a.X_w0}, {"X_w1", a.X_w1}, {"Y_w0", a.Y_w0},
                                {"Y_w1", a.Y_w1}, {"Z_w0", a.Z_w0}, {"Z_w1", a.Z_w1}};
  }
  j["model"] = m;

  Json p;
  p["type"] = c.path.type;
  p["origin"] = to_json(c.path.origin);
  if (c.path.type == "line") p["direction"] = to_json(c.path.direction);
  if (c.path.type == "spiral") {
    p["amplitude_y"] = c.path.amplitude_y;
    p["amplitude_z"] = c.path.amplitude_z;
    p["spatial_frequency"] = c.path.spatial_frequency;
  }
  if (c.path.type == "spline") {
    for (const Vec3& w : c.path.waypoints) p["waypoints"].push_back(to_json(w));
    p["spacing"] = c.path.spacing;
  }
  p["xi_start"] = c.path.xi_start;
  j["path"] = p;

  for (const Vec3& f : c.formation) j["formation"].push_back(to_json(f));
  for (const Vec3& q : c.initial_positions) j["initial_positions"].push_back(to_json(q));
  for (const auto& vw : c.initial_sway_heave)
    j["initial_sway_heave"].push_back(Json::array({vw.x(), vw.y()}));
  for (const Obstacle& o : c.obstacles)
    j["obstacles"].push_back(Json{{"position", to_json(o.p)},
                                  {"velocity", to_json(o.vel)},
                                  {"radius", o.radius}});

  const GainConfig& g = c.gains;
  j["gains"] = Json{{"lambda1", g.lambda1},
                    {"lambda2", g.lambda2},
                    {"k_xi", g.k_xi},
                    {"v2_max", g.v2_max},
                    {"delta0", g.delta0},
                    {"U_colav", g.U_colav},
                    {"d_colav", g.d_colav},
                    {"d_min", g.d_min},
                    {"alpha_min_deg", g.alpha_min_deg},
                    {"z_min", g.z_min},
                    {"z_max", g.z_max},
                    {"v_z", g.v_z},
                    {"k_u", g.k_u},
                    {"k_R", g.k_R},
                    {"k_omega", g.k_omega},
                    {"surge_rate_limit", g.surge_rate_limit},
                    {"omega_d_limit", g.omega_d_limit},
                    {"depth_hysteresis", g.depth_hysteresis},
                    {"k_align", g.k_align}};
  j["envelope"] = Json{{"sway_heave_ceiling", c.envelope.sway_heave_ceiling},
                       {"roll_rate_ceiling", c.envelope.roll_rate_ceiling},
                       {"run_sway_ceiling", c.envelope.run_sway_ceiling}};
  j["diagnostics"] = Json{{"grid_points", c.diagnostics.grid_points},
                          {"envelope_samples", c.diagnostics.envelope_samples},
                          {"inflation", c.diagnostics.inflation}};
  return j;
}

inline ScenarioConfig scenario_from_json(const Json& j) {
  ScenarioConfig c;
  auto get = [](const Json& obj, const char* key, auto fallback) {
    using T = decltype(fallback);
    return obj.contains(key) ? obj.at(key).get<T>() : fallback;
  };
  c.name = get(j, "name", std::string("scenario"));
  const std::string mode = get(j, "mode", std::string("full"));
  if (mode == "full")
    c.mode = RunMode::Full;
  else if (mode == "ideal")
    c.mode = RunMode::Ideal;
  else
    throw std::invalid_argument("mode must be 'full' or 'ideal'");
  c.dt = get(j, "dt", 0.01);
  c.duration = get(j, "duration", 250.0);
  c.guidance_period = get(j, "guidance_period", 0.01);
  c.renormalize_period = get(j, "renormalize_period", 1000);
  c.seed = get(j, "seed", std::uint64_t{1});
  if (j.contains("current")) c.current = vec3_from_json(j.at("current"));

  if (j.contains("model")) {
    const Json& m = j.at("model");
    for (int i = 0; i < 6; ++i) {
      if (m.contains("mass_diag")) c.model.mass_diag(i) = m.at("mass_diag").at(i);
      if (m.contains("damping_diag")) c.model.damping_diag(i) = m.at("damping_diag").at(i);
    }
    c.model.sway_yaw_damping = get(m, "sway_yaw_damping", c.model.sway_yaw_damping);
    c.model.heave_pitch_damping = get(m, "heave_pitch_damping", c.model.heave_pitch_damping);
    c.model.weight = get(m, "weight", c.model.weight);
    c.model.cb_offset = get(m, "cb_offset", c.model.cb_offset);
    c.model.u_min = get(m, "u_min", c.model.u_min);
    c.model.u_max = get(m, "u_max", c.model.u_max);
    if (m.contains("affine_override")) {
      const Json& a = m.at("affine_override");
      AffineCoeffs cf;
      cf.X_v0 = a.value("X_v0", 0.0);
      cf.X_v1 = a.value("X_v1", 0.0);
      cf.Y_v0 = a.value("Y_v0", 0.0);
      cf.Y_v1 = a.value("Y_v1", 0.0);
      cf.Z_v0 = a.value("Z_v0", 0.0);
      cf.Z_v1 = a.value("Z_v1", 0.0);
      cf.X_w0 = a.value("X_w0", 0.0);
      cf.X_w1 = a.value("X_w1", 0.0);
      cf.Y_w0 = a.value("Y_w0", 0.0);
      cf.Y_w1 = a.value("Y_w1", 0.0);
      cf.Z_w0 = a.value("Z_w0", 0.0);
      cf.Z_w1 = a.value("Z_w1", 0.0);
      c.model.affine_override = cf;
    }
  }

  if (j.contains("path")) {
    const Json& p = j.at("path");
    c.path.type = get(p, "type", std::string("spiral"));
    if (p.contains("origin")) c.path.origin = vec3_from_json(p.at("origin"));
    if (p.contains("direction")) c.path.direction = vec3_from_json(p.at("direction"));
    c.path.amplitude_y = get(p, "amplitude_y", c.path.amplitude_y);
    c.path.amplitude_z = get(p, "amplitude_z", c.path.amplitude_z);
    c.path.spatial_frequency = get(p, "spatial_frequency", c.path.spatial_frequency);
    if (p.contains("waypoints"))
      for (const Json& w : p.at("waypoints")) c.path.waypoints.push_back(vec3_from_json(w));
    c.path.spacing = get(p, "spacing", c.path.spacing);
    c.path.xi_start = get(p, "xi_start", 0.0);
  }

  if (j.contains("formation"))
    for (const Json& f : j.at("formation")) c.formation.push_back(vec3_from_json(f));
  if (j.contains("initial_positions"))
    for (const Json& q : j.at("initial_positions"))
      c.initial_positions.push_back(vec3_from_json(q));
  if (j.contains("initial_sway_heave"))
    for (const Json& vw : j.at("initial_sway_heave"))
      c.initial_sway_heave.push_back({vw.at(0).get<double>(), vw.at(1).get<double>()});
  if (j.contains("obstacles"))
    for (const Json& o : j.at("obstacles")) {
      Obstacle ob;
      ob.p = vec3_from_json(o.at("position"));
      if (o.contains("velocity")) ob.vel = vec3_from_json(o.at("velocity"));
      ob.radius = o.at("radius").get<double>();
      c.obstacles.push_back(ob);
    }

  if (j.contains("gains")) {
    const Json& g = j.at("gains");
    GainConfig& d = c.gains;
    d.lambda1 = get(g, "lambda1", d.lambda1);
    d.lambda2 = get(g, "lambda2", d.lambda2);
    d.k_xi = get(g, "k_xi", d.k_xi);
    d.v2_max = get(g, "v2_max", d.v2_max);
    d.delta0 = get(g, "delta0", d.delta0);
    d.U_colav = get(g, "U_colav", d.U_colav);
    d.d_colav = get(g, "d_colav", d.d_colav);
    d.d_min = get(g, "d_min", d.d_min);
    d.alpha_min_deg = get(g, "alpha_min_deg", d.alpha_min_deg);
    d.z_min = get(g, "z_min", d.z_min);
    d.z_max = get(g, "z_max", d.z_max);
    d.v_z = get(g, "v_z", d.v_z);
    d.k_u = get(g, "k_u", d.k_u);
    d.k_R = get(g, "k_R", d.k_R);
    d.k_omega = get(g, "k_omega", d.k_omega);
    d.surge_rate_limit = get(g, "surge_rate_limit", d.surge_rate_limit);
    d.omega_d_limit = get(g, "omega_d_limit", d.omega_d_limit);
    d.depth_hysteresis = get(g, "depth_hysteresis", d.depth_hysteresis);
    d.k_align = get(g, "k_align", d.k_align);
  }
  if (j.contains("envelope")) {
    const Json& e = j.at("envelope");
    c.envelope.sway_heave_ceiling = get(e, "sway_heave_ceiling", c.envelope.sway_heave_ceiling);
    c.envelope.roll_rate_ceiling = get(e, "roll_rate_ceiling", c.envelope.roll_rate_ceiling);
    c.envelope.run_sway_ceiling = get(e, "run_sway_ceiling", c.envelope.run_sway_ceiling);
  }
  if (j.contains("diagnostics")) {
    const Json& d = j.at("diagnostics");
    c.diagnostics.grid_points = get(d, "grid_points", c.diagnostics.grid_points);
    c.diagnostics.envelope_samples = get(d, "envelope_samples", c.diagnostics.envelope_samples);
    c.diagnostics.inflation = get(d, "inflation", c.diagnostics.inflation);
  }
  return c;
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

//! Validates everything checkable before a run and resolves the derived
//! quantities. Reports the full error list, not just the first failure.
inline PreparedScenario prepare_scenario(const ScenarioConfig& config) {
  std::vector<std::string> errors;
  PreparedScenario out;
  out.config = config;

  if (!(config.dt > 0.0 && config.dt <= 0.1))
    errors.push_back("dt must lie in (0, 0.1]");
  if (!(config.duration > 0.0)) errors.push_back("duration must be positive");
  if (config.guidance_period + 1e-12 < config.dt)
    errors.push_back("guidance_period must be at least dt");
  else {
    const double ratio = config.guidance_period / config.dt;
    if (std::abs(ratio - std::round(ratio)) > 1e-9)
      errors.push_back("guidance_period must be an integer multiple of dt");
  }

  const int n = config.n();
  if (n < 2) errors.push_back("formation needs at least two vehicles");
  FormationSpec formation{config.formation};
  if (n >= 1 && !formation.sums_to_zero())
    errors.push_back("formation offsets must sum to zero");
  if (static_cast<int>(config.initial_positions.size()) != n)
    errors.push_back("initial_positions must match the formation size");
  if (!config.initial_sway_heave.empty() &&
      static_cast<int>(config.initial_sway_heave.size()) != n)
    errors.push_back("initial_sway_heave must match the formation size");

  out.model = config.model.build();
  validate_model(out.model, errors);

  const GainConfig& g = config.gains;
  for (const auto& [value, name] :
       std::initializer_list<std::pair<double, const char*>>{
           {g.lambda1, "lambda1"}, {g.lambda2, "lambda2"}, {g.k_xi, "k_xi"},
           {g.v2_max, "v2_max"}, {g.delta0, "delta0"}, {g.U_colav, "U_colav"},
           {g.d_colav, "d_colav"}, {g.v_z, "v_z"}, {g.k_u, "k_u"}, {g.k_R, "k_R"},
           {g.k_omega, "k_omega"}, {g.surge_rate_limit, "surge_rate_limit"},
           {g.omega_d_limit, "omega_d_limit"}})
    if (!(value > 0.0)) errors.push_back(std::string("gains: ") + name + " must be positive");
  if (!(g.z_min < g.z_max)) errors.push_back("gains: z_min must be below z_max");
  if (!(g.d_min < g.d_colav)) errors.push_back("gains: d_min must be below d_colav");
  if (!(g.alpha_min_deg > 0.0 && g.alpha_min_deg < 90.0))
    errors.push_back("gains: alpha_min_deg must lie in (0, 90)");

  for (size_t i = 0; i < config.obstacles.size(); ++i)
    if (!(config.obstacles[i].radius > 0.0))
      errors.push_back("obstacles[" + std::to_string(i) + "]: radius must be positive");

  // path regularity and the speed-law constant over the reachable range
  try {
    out.path = config.path.build();
    const double xi0 = config.path.xi_start;
    double lo = xi0 - 10.0, hi = xi0 + 3.0 * config.duration + 10.0;
    double k0 = k_nsb(out.path, formation.max_norm(), g.k_xi, lo, hi,
                      config.diagnostics.grid_points);
    if (k0 < 1.0) {
      // bound the reachable range with the speed ceiling implied by k0
      double s_min = std::numeric_limits<double>::max();
      for (int i = 0; i <= 200; ++i)
        s_min = std::min(s_min, out.path.evaluate(lo + (hi - lo) * i / 200.0).speed);
      std::vector<Eigen::Vector2d> worst(
          n, {config.envelope.sway_heave_ceiling, config.envelope.sway_heave_ceiling});
      const double U_ceil = u_los(worst, g.v2_max, out.model.u_min, k0);
      hi = xi0 + config.duration * U_ceil * (1.0 + g.k_xi) / s_min + 10.0;
      k0 = k_nsb(out.path, formation.max_norm(), g.k_xi, lo, hi,
                 config.diagnostics.grid_points);
    }
    out.k_nsb_value = k0;
    out.xi_lo = lo;
    out.xi_hi = hi;
    if (k0 >= 1.0)
      errors.push_back("path/formation: k_nsb = " + std::to_string(k0) +
                       " >= 1, the speed law is undefined");
  } catch (const std::exception& e) {
    errors.push_back(std::string("path: ") + e.what());
  }

  out.formation = formation;
  if (!errors.empty()) throw ConfigError(std::move(errors));
  return out;
}

inline PreparedScenario load_scenario(const std::string& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError({"cannot open scenario file '" + file + "'"});
  Json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ConfigError({std::string("JSON parse error: ") + e.what()});
  }
  try {
    return prepare_scenario(scenario_from_json(j));
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError({e.what()});
  }
}

}  // namespace nsbf
