#include <doctest.h>

#include <nsbf/so3.hpp>

#include <random>

using namespace nsbf;

namespace {

std::mt19937 rng_for(const char* tag) {
  std::seed_seq seq(tag, tag + std::char_traits<char>::length(tag));
  return std::mt19937(seq);
}

Vec3 random_axis_angle(std::mt19937& rng, double max_angle) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vec3 axis(normal(rng), normal(rng), normal(rng));
  while (axis.norm() < 1e-6) axis = Vec3(normal(rng), normal(rng), normal(rng));
  axis.normalize();
  std::uniform_real_distribution<double> mag(0.0, max_angle);
  return mag(rng) * axis;
}

}  // namespace

TEST_CASE("hat basics") {
  CHECK(hat(Vec3::Zero()).isZero(0.0));
  CHECK((hat(Vec3(0, 0, 1)) * Vec3(1, 0, 0) - Vec3(0, 1, 0)).norm() == 0.0);
  // hand cross product of (1,2,3) and (4,5,6)
  const Vec3 a(1, 2, 3), b(4, 5, 6);
  const Vec3 expected(2 * 6 - 3 * 5, 3 * 4 - 1 * 6, 1 * 5 - 2 * 4);
  CHECK((hat(a) * b - expected).norm() == 0.0);

  auto rng = rng_for("hat");
  std::uniform_real_distribution<double> u(-10, 10);
  for (int i = 0; i < 1000; ++i) {
    Vec3 v(u(rng), u(rng), u(rng)), w(u(rng), u(rng), u(rng));
    CHECK((hat(v) * w - v.cross(w)).norm() < 1e-14);
    CHECK((hat(v) + hat(v).transpose()).norm() == 0.0);
  }
}

TEST_CASE("expm_so3 basics") {
  CHECK((expm_so3(Vec3::Zero()) - Mat3::Identity()).norm() == 0.0);
  const Mat3 quarter = expm_so3(Vec3(0, 0, M_PI / 2));
  CHECK((quarter * Vec3(1, 0, 0) - Vec3(0, 1, 0)).norm() < 1e-15);

  const Vec3 d(0.3, -0.2, 0.1);
  CHECK((logm_so3(expm_so3(d)) - d).norm() < 1e-12);
}

TEST_CASE("logm_so3 basics") {
  CHECK(logm_so3(Mat3::Identity()).norm() == 0.0);
  const Vec3 q = logm_so3(expm_so3(Vec3(0, 0, M_PI / 2)));
  CHECK((q - Vec3(0, 0, M_PI / 2)).norm() < 1e-12);
}

TEST_CASE("expm/logm round trip property") {
  auto rng = rng_for("roundtrip");
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const Vec3 d = random_axis_angle(rng, M_PI - 0.1);
    const Mat3 R = expm_so3(d);
    CHECK(is_rotation(R));
    worst = std::max(worst, (logm_so3(R) - d).norm());
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("logm_so3 near pi") {
  auto rng = rng_for("nearpi");
  for (int i = 0; i < 200; ++i) {
    const Vec3 d0 = random_axis_angle(rng, 1.0);
    const Vec3 axis = d0.norm() > 1e-9 ? Vec3(d0.normalized()) : Vec3(1, 0, 0);
    for (double eps : {1e-3, 1e-5, 1e-7, 0.0}) {
      const Vec3 d = (M_PI - eps) * axis;
      const Mat3 R = expm_so3(d);
      const auto lg = logm_so3_status(R);
      CHECK(lg.delta.norm() <= M_PI + 1e-12);
      CHECK((expm_so3(lg.delta) - R).norm() < 1e-9);
      if (eps == 1e-7 || eps == 0.0) CHECK(lg.near_pi);
    }
  }
}

TEST_CASE("expm small-angle continuity") {
  auto rng = rng_for("smallangle");
  for (int i = 0; i < 1000; ++i) {
    const Vec3 d = random_axis_angle(rng, 1e-4);
    CHECK((expm_so3(d) - (Mat3::Identity() + hat(d))).norm() <= d.squaredNorm() + 1e-300);
  }
}

TEST_CASE("angle_between") {
  CHECK(angle_between(Vec3(1, 0, 0), Vec3(1, 0, 0)) == 0.0);
  CHECK(angle_between(Vec3(1, 0, 0), Vec3(0, 1, 0)) == doctest::Approx(M_PI / 2).epsilon(1e-15));
  CHECK(angle_between(Vec3(1, 0, 0), Vec3(1, 1, 0)) == doctest::Approx(M_PI / 4).epsilon(1e-15));
  CHECK(angle_between(Vec3(1, 0, 0), Vec3(-1, 1e-12, 0)) == doctest::Approx(M_PI).epsilon(1e-9));
  CHECK_THROWS_AS(angle_between(Vec3::Zero(), Vec3(1, 0, 0)), std::domain_error);
}

TEST_CASE("renormalize") {
  auto rng = rng_for("renorm");
  std::uniform_real_distribution<double> u(-1e-6, 1e-6);
  for (int i = 0; i < 300; ++i) {
    const Mat3 R = expm_so3(random_axis_angle(rng, M_PI - 0.2));

    // idempotent on exact rotations
    CHECK((renormalize(R) - R).norm() < 1e-14);

    // small additive perturbation -> orthonormal again
    Mat3 P = R;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) P(r, c) += u(rng);
    const Mat3 Q = renormalize(P);
    CHECK(orthonormality_error(Q) < 1e-12);
    CHECK(Q.determinant() == doctest::Approx(1.0).epsilon(1e-12));

    // scaled rotation projects back onto the original
    CHECK((renormalize(1.001 * R) - R).norm() < 1e-9);
  }

  Mat3 reflect = Mat3::Identity();
  reflect(2, 2) = -1.0;
  CHECK_THROWS_AS(renormalize(reflect), std::runtime_error);
}
