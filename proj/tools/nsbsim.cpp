// Batch front-end: scenario validation, runs, telemetry/report emission and
// parameter sweeps. Exit codes: 0 ok, 1 config error, 2 runtime invariant
// violation, 3 boundedness precheck failure.

#include <nsbf/simulator.hpp>

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <mutex>
#include <thread>

namespace fs = std::filesystem;
using namespace nsbf;

namespace {

struct SweepAxis {
  std::string key;
  std::vector<std::string> values;
};

SweepAxis parse_sweep(const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos)
    throw CLI::ValidationError("--sweep expects key=v1,v2,...");
  SweepAxis axis;
  axis.key = spec.substr(0, eq);
  std::string rest = spec.substr(eq + 1);
  size_t pos = 0;
  while (pos != std::string::npos) {
    const size_t comma = rest.find(',', pos);
    axis.values.push_back(rest.substr(pos, comma - pos));
    pos = comma == std::string::npos ? comma : comma + 1;
  }
  if (axis.values.empty()) throw CLI::ValidationError("--sweep needs at least one value");
  return axis;
}

//! Writes `value` at a dotted key path ("gains.delta0") in the raw config.
void apply_override(Json& j, const std::string& key, const Json& value) {
  Json* node = &j;
  size_t pos = 0;
  while (true) {
    const size_t dot = key.find('.', pos);
    const std::string part = key.substr(pos, dot - pos);
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    pos = dot + 1;
  }
}

Json parse_value(const std::string& s) {
  try {
    return Json::parse(s);
  } catch (...) {
    return Json(s);  // plain string
  }
}

struct RunOutcome {
  int exit_code = 0;
  std::string label;
  std::string message;
};

RunOutcome execute_one(Json raw, const fs::path& out_dir, bool check_only) {
  RunOutcome rc;
  PreparedScenario sc;
  try {
    sc = prepare_scenario(scenario_from_json(raw));
  } catch (const ConfigError& e) {
    rc.exit_code = 1;
    rc.message = e.what();
    return rc;
  } catch (const std::exception& e) {
    rc.exit_code = 1;
    rc.message = e.what();
    return rc;
  }

  fs::create_directories(out_dir);
  const BoundConstants constants = bound_constants(sc);
  if (constants.verdict == Verdict::Fail) {
    std::ofstream rep(out_dir / "stability_report.json");
    rep << std::setw(2) << Json{{"constants", to_json(constants)}} << "\n";
    rc.exit_code = 3;
    rc.message = "boundedness precheck failed: Y_min = " + std::to_string(constants.Y_min) +
                 " <= a X_max = " + std::to_string(constants.a * constants.X_max);
    return rc;
  }
  if (constants.verdict == Verdict::Indeterminate)
    rc.message = "precheck indeterminate (k_a >= 1); proceeding";

  if (check_only) {
    std::ofstream rep(out_dir / "stability_report.json");
    rep << std::setw(2) << Json{{"constants", to_json(constants)}} << "\n";
    return rc;
  }

  std::unique_ptr<Simulator> sim;
  try {
    sim = std::make_unique<Simulator>(sc);
    sim->run();
  } catch (const std::exception& e) {
    rc.exit_code = 2;
    rc.message = std::string("run failed during setup: ") + e.what();
    return rc;
  }
  const RunSummary summary = sim->summary();

  TelemetryWriter writer((out_dir / "telemetry.csv").string(), sc.config.n());
  for (const TelemetryRecord& r : sim->telemetry()) writer.append(r);
  writer.flush();

  StabilityReport report = stability_report(sc, sim->telemetry(), constants);
  report.sampled_audit =
      sampled_bound_audit(sc, constants, 100000, sc.config.seed ^ 0x9e3779b9ull);
  report.trajectory_audit = trajectory_bound_audit(sc, constants, sim->telemetry());

  {
    std::ofstream out(out_dir / "summary.json");
    out << std::setw(2) << to_json(summary) << "\n";
  }
  {
    std::ofstream out(out_dir / "stability_report.json");
    out << std::setw(2) << to_json(report) << "\n";
  }

  if (summary.aborted) {
    rc.exit_code = 2;
    rc.message = "run aborted at step " + std::to_string(summary.abort_step) + ": " +
                 summary.abort_reason;
  }
  return rc;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"formation path-following batch simulator"};
  app.require_subcommand(1);

  CLI::App* run = app.add_subcommand("run", "load a scenario, run it, emit telemetry");
  std::string config_path;
  std::string out_dir = "out";
  std::string mode_override;
  double dt_override = 0.0;
  double duration_override = 0.0;
  std::vector<std::string> sweep_specs;
  bool check_only = false;
  run->add_option("config", config_path, "scenario JSON file")->required();
  run->add_option("--out", out_dir, "output directory");
  run->add_option("--mode", mode_override, "override mode: full|ideal");
  run->add_option("--dt", dt_override, "override integrator step [s]");
  run->add_option("--duration", duration_override, "override duration [s]");
  run->add_option("--sweep", sweep_specs, "sweep axis key=v1,v2,... (repeatable)");
  run->add_flag("--check-only", check_only, "validate and run the precheck only");

  CLI11_PARSE(app, argc, argv);

  Json raw;
  {
    std::ifstream in(config_path);
    if (!in) {
      std::cerr << "cannot open '" << config_path << "'\n";
      return 1;
    }
    try {
      in >> raw;
    } catch (const std::exception& e) {
      std::cerr << "JSON parse error: " << e.what() << "\n";
      return 1;
    }
  }
  if (!mode_override.empty()) raw["mode"] = mode_override;
  if (dt_override > 0.0) raw["dt"] = dt_override;
  if (duration_override > 0.0) raw["duration"] = duration_override;

  std::vector<SweepAxis> axes;
  try {
    for (const std::string& s : sweep_specs) axes.push_back(parse_sweep(s));
  } catch (const CLI::ValidationError& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }

  struct Job {
    Json raw;
    fs::path dir;
    std::string label;
  };
  std::vector<Job> jobs{{raw, fs::path(out_dir), "run"}};
  for (const SweepAxis& axis : axes) {
    std::vector<Job> next;
    for (const Job& job : jobs)
      for (const std::string& value : axis.values) {
        Job j = job;
        apply_override(j.raw, axis.key, parse_value(value));
        const std::string tag = axis.key + "=" + value;
        j.dir = axes.size() == 1 && jobs.size() == 1 ? fs::path(out_dir) / tag
                                                     : j.dir / tag;
        j.label = job.label == "run" ? tag : job.label + "," + tag;
        next.push_back(std::move(j));
      }
    jobs = std::move(next);
  }

  std::vector<RunOutcome> outcomes(jobs.size());
  if (jobs.size() == 1) {
    outcomes[0] = execute_one(jobs[0].raw, jobs[0].dir, check_only);
    outcomes[0].label = jobs[0].label;
  } else {
    std::mutex mu;
    std::vector<std::thread> pool;
    std::atomic<size_t> next{0};
    const unsigned workers = std::max(1u, std::thread::hardware_concurrency());
    for (unsigned w = 0; w < std::min<size_t>(workers, jobs.size()); ++w)
      pool.emplace_back([&] {
        for (size_t k = next.fetch_add(1); k < jobs.size(); k = next.fetch_add(1)) {
          RunOutcome rc = execute_one(jobs[k].raw, jobs[k].dir, check_only);
          rc.label = jobs[k].label;
          std::lock_guard<std::mutex> lock(mu);
          outcomes[k] = std::move(rc);
        }
      });
    for (auto& t : pool) t.join();
  }

  int exit_code = 0;
  for (const RunOutcome& rc : outcomes) {
    if (!rc.message.empty())
      std::cerr << rc.label << ": " << rc.message << "\n";
    else
      std::cout << rc.label << ": ok\n";
    exit_code = std::max(exit_code, rc.exit_code);
  }
  return exit_code;
}
