#pragma once

#include <nsbf/lowlevel.hpp>

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

namespace nsbf {

//! One guidance-tick snapshot. Column order is documented in
//! docs/telemetry.md and is part of the CLI contract.
struct TelemetryRecord {
  double t = 0.0;
  double xi = 0.0;
  double xi_dot = 0.0;
  double U_los = 0.0;
  Vec3 p_bp = Vec3::Zero();
  double V = 0.0;
  double V_dot = 0.0;
  int flag_colav = 0;
  int flag_oa = 0;
  int flag_depth = 0;  // +1 too shallow (diving), -1 too deep (rising)
  int flag_surge_fallback = 0;
  int flag_loop_fallback = 0;
  double min_pair_distance = 0.0;
  double obstacle_clearance = 1e9;  // sentinel when no obstacles
  struct PerVehicle {
    Vec3 p = Vec3::Zero();
    Vec3 rotvec = Vec3::Zero();  // axis-angle of R
    Vec3 v = Vec3::Zero();       // u, v, w
    Vec3 omega = Vec3::Zero();   // p, q, r
    double u_d = 0.0;
    Vec3 omega_d = Vec3::Zero();
    double x_tilde_norm = 0.0;
  };
  std::vector<PerVehicle> vehicles;
  VecX sigma_err;  // 3(n-1)
};

inline std::string telemetry_header(int n) {
  std::string h =
      "t,xi,xi_dot,U_los,pbp_x,pbp_y,pbp_z,V,V_dot,flag_colav,flag_oa,flag_depth,"
      "flag_surge_fallback,flag_loop_fallback,min_pair_distance,obstacle_clearance";
  for (int i = 0; i < n; ++i) {
    const std::string s = std::to_string(i + 1);
    for (const char* c : {"px_", "py_", "pz_", "rvx_", "rvy_", "rvz_", "u_", "v_", "w_",
                          "wx_", "wy_", "wz_"})
      h += "," + std::string(c) + s;
    h += ",ud_" + s + ",wdx_" + s + ",wdy_" + s + ",wdz_" + s + ",xtil_" + s;
  }
  for (int k = 0; k < 3 * (n - 1); ++k) h += ",sig_" + std::to_string(k);
  return h;
}

//! CSV writer emitting every float with 17 significant digits so files
//! reload bit-exactly.
class TelemetryWriter {
 public:
  TelemetryWriter(const std::string& file, int n) : out_(file), n_(n) {
    if (!out_) throw std::runtime_error("telemetry: cannot open '" + file + "'");
    out_ << telemetry_header(n) << "\n";
  }

  void append(const TelemetryRecord& r) {
    char buf[32];
    auto emit = [&](double x) {
      std::snprintf(buf, sizeof(buf), "%.17g", x);
      out_ << ',' << buf;
    };
    std::snprintf(buf, sizeof(buf), "%.17g", r.t);
    out_ << buf;
    emit(r.xi);
    emit(r.xi_dot);
    emit(r.U_los);
    for (int k = 0; k < 3; ++k) emit(r.p_bp(k));
    emit(r.V);
    emit(r.V_dot);
    out_ << ',' << r.flag_colav << ',' << r.flag_oa << ',' << r.flag_depth << ','
         << r.flag_surge_fallback << ',' << r.flag_loop_fallback;
    emit(r.min_pair_distance);
    emit(r.obstacle_clearance);
    for (const auto& v : r.vehicles) {
      for (int k = 0; k < 3; ++k) emit(v.p(k));
      for (int k = 0; k < 3; ++k) emit(v.rotvec(k));
      for (int k = 0; k < 3; ++k) emit(v.v(k));
      for (int k = 0; k < 3; ++k) emit(v.omega(k));
      emit(v.u_d);
      for (int k = 0; k < 3; ++k) emit(v.omega_d(k));
      emit(v.x_tilde_norm);
    }
    for (int k = 0; k < r.sigma_err.size(); ++k) emit(r.sigma_err(k));
    out_ << "\n";
  }

  void flush() { out_.flush(); }

 private:
  std::ofstream out_;
  int n_;
};

}  // namespace nsbf
