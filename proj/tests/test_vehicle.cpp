#include <doctest.h>

#include <nsbf/vehicle.hpp>

#include <random>

using namespace nsbf;

namespace {

std::mt19937 rng_for(const char* tag) {
  std::seed_seq seq(tag, tag + std::char_traits<char>::length(tag));
  return std::mt19937(seq);
}

VehicleState random_state(std::mt19937& rng, double vel_scale = 1.0) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  VehicleState s;
  s.p = 10.0 * Vec3(u(rng), u(rng), u(rng));
  s.R = expm_so3(Vec3(u(rng), u(rng), u(rng)));
  s.v = vel_scale * Vec3(u(rng), u(rng), u(rng));
  s.omega = vel_scale * Vec3(u(rng), u(rng), u(rng));
  return s;
}

}  // namespace

TEST_CASE("body_current") {
  OceanCurrent cur{Vec3(0.0, 0.15, 0.05)};
  CHECK((body_current(Mat3::Identity(), cur) - Vec3(0.0, 0.15, 0.05)).norm() == 0.0);
  CHECK(body_current(expm_so3(Vec3(0.4, -1.0, 0.7)), OceanCurrent{}).norm() == 0.0);
  const Mat3 quarter = expm_so3(Vec3(0, 0, M_PI / 2));
  CHECK((body_current(quarter, OceanCurrent{Vec3(1, 0, 0)}) - Vec3(0, -1, 0)).norm() < 1e-15);
}

TEST_CASE("current_body_derivative") {
  CHECK(current_body_derivative(Vec3(0.3, -0.1, 0.2), Vec3::Zero()).norm() == 0.0);
  CHECK((current_body_derivative(Vec3(1, 0, 0), Vec3(0, 0, 1)) - Vec3(0, -1, 0)).norm() == 0.0);
  CHECK((current_body_derivative(Vec3(0, 0.15, 0.05), Vec3(0.1, 0, 0.2)) -
         Vec3(0.03, 0.005, -0.015)).norm() < 1e-16);
}

TEST_CASE("rest state is an equilibrium") {
  const ModelParams params = default_model();
  VehicleState rest;
  const auto d = dynamics_derivative(rest, GeneralizedForce{}, OceanCurrent{}, params);
  CHECK(d.nu_dot.norm() == 0.0);
  CHECK(d.p_dot.norm() == 0.0);
}

TEST_CASE("pure surge force from rest") {
  const ModelParams params = default_model();
  VehicleState rest;
  const auto d = dynamics_derivative(rest, allocate(0.7, 0, 0, 0), OceanCurrent{}, params);
  CHECK(d.nu_dot(0) == doctest::Approx(0.7).epsilon(1e-15));
  CHECK(std::abs(d.nu_dot(1)) == 0.0);
  CHECK(std::abs(d.nu_dot(2)) == 0.0);
  CHECK(d.nu_dot.tail<3>().norm() == 0.0);
}

TEST_CASE("sway/heave rows match the affine form regardless of input") {
  const ModelParams params = default_model();
  auto rng = rng_for("affine");
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    const VehicleState s = random_state(rng);
    const OceanCurrent cur{0.3 * Vec3(u(rng), u(rng), u(rng))};
    const GeneralizedForce f = allocate(u(rng), u(rng), u(rng), u(rng));
    const auto full = dynamics_derivative(s, f, cur, params);
    const auto uu = underactuated_derivative(s, cur, params);
    CHECK(std::abs(full.nu_dot(1) - uu(0)) < 1e-10);
    CHECK(std::abs(full.nu_dot(2) - uu(1)) < 1e-10);
  }
}

TEST_CASE("coriolis annihilation") {
  const ModelParams params = default_model();
  auto rng = rng_for("coriolis");
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 10000; ++i) {
    Vec6 nu;
    for (int k = 0; k < 6; ++k) nu(k) = u(rng);
    CHECK(std::abs(nu.dot(coriolis(params, nu) * nu)) < 1e-10);
  }
}

TEST_CASE("restoring is a pure moment, zero upright") {
  const ModelParams params = default_model();
  auto rng = rng_for("restoring");
  CHECK(restoring(params, Mat3::Identity()).norm() == 0.0);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    const Mat3 R = expm_so3(2.0 * Vec3(u(rng), u(rng), u(rng)));
    CHECK(restoring(params, R).head<3>().norm() == 0.0);
  }
}

TEST_CASE("energy dissipates under zero input") {
  const ModelParams params = default_model();
  auto rng = rng_for("energy");

  for (int trial = 0; trial < 5; ++trial) {
    VehicleState s = random_state(rng, 0.5);
    const double dt = 0.005;
    double prev = mechanical_energy(s, params);
    const double tol = 1e-9 * (prev + 1.0);
    auto f = [&](const VehicleState& x) {
      return dynamics_derivative(x, GeneralizedForce{}, OceanCurrent{}, params);
    };
    for (int k = 0; k < 2000; ++k) {
      const auto k1 = f(s);
      VehicleState s2 = s;
      s2.R = s.R * expm_so3(0.5 * dt * k1.omega);
      s2.v = s.v + 0.5 * dt * k1.nu_dot.head<3>();
      s2.omega = s.omega + 0.5 * dt * k1.nu_dot.tail<3>();
      const auto k2 = f(s2);
      VehicleState s3 = s;
      s3.R = s.R * expm_so3(0.5 * dt * k2.omega);
      s3.v = s.v + 0.5 * dt * k2.nu_dot.head<3>();
      s3.omega = s.omega + 0.5 * dt * k2.nu_dot.tail<3>();
      const auto k3 = f(s3);
      VehicleState s4 = s;
      s4.R = s.R * expm_so3(dt * k3.omega);
      s4.v = s.v + dt * k3.nu_dot.head<3>();
      s4.omega = s.omega + dt * k3.nu_dot.tail<3>();
      const auto k4 = f(s4);
      const Vec6 dnu = (k1.nu_dot + 2 * k2.nu_dot + 2 * k3.nu_dot + k4.nu_dot) / 6.0;
      const Vec3 dw = (k1.omega + 2 * k2.omega + 2 * k3.omega + k4.omega) / 6.0;
      s.R = s.R * expm_so3(dt * dw);
      s.v += dt * dnu.head<3>();
      s.omega += dt * dnu.tail<3>();
      const double e = mechanical_energy(s, params);
      CHECK(e <= prev + tol);
      prev = e;
    }
  }
}

TEST_CASE("roll couples into sway/heave only through Z_v1, Z_w1") {
  const ModelParams params = default_model();
  auto rng = rng_for("rollcouple");
  for (int i = 0; i < 200; ++i) {
    VehicleState s = random_state(rng);
    const OceanCurrent cur{};  // isolate the rigid-body coupling
    auto sway_heave = [&](double p_rate) {
      VehicleState x = s;
      x.omega.x() = p_rate;
      const auto d = dynamics_derivative(x, GeneralizedForce{}, cur, params);
      return Eigen::Vector2d(d.nu_dot(1), d.nu_dot(2));
    };
    const double h = 1e-6;
    const Eigen::Vector2d grad =
        (sway_heave(s.omega.x() + h) - sway_heave(s.omega.x() - h)) / (2 * h);
    CHECK(std::abs(grad(0) - params.affine.Z_v1 * s.v.z()) < 1e-7);
    CHECK(std::abs(grad(1) - params.affine.Z_w1 * s.v.y()) < 1e-7);

    // roll row itself is decoupled from sway/heave for m22 == m33
    auto roll_acc = [&](double vv, double ww) {
      VehicleState x = s;
      x.v.y() = vv;
      x.v.z() = ww;
      const auto d = dynamics_derivative(x, GeneralizedForce{}, cur, params);
      return d.nu_dot(3);
    };
    const double base = roll_acc(s.v.y(), s.v.z());
    CHECK(std::abs(roll_acc(s.v.y() + 0.5, s.v.z() - 0.3) - base) < 1e-12);
  }
}

TEST_CASE("model validation catches structural violations") {
  std::vector<std::string> errors;
  validate_model(default_model(), errors);
  CHECK(errors.empty());

  ModelParams bad = default_model();
  bad.affine.X_v1 += 0.1;  // override inconsistent with M, D
  std::vector<std::string> mismatch_errors;
  validate_model(bad, mismatch_errors);
  CHECK(mismatch_errors.size() == 1);

  ModelParams nonpd = default_model();
  nonpd.M(2, 2) = -1.0;
  std::vector<std::string> pd_errors;
  validate_model(nonpd, pd_errors);
  CHECK(!pd_errors.empty());
}
