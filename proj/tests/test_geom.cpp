#include <numbers>
#include <random>

#include "doctest.h"
#include "handvla/errors.hpp"
#include "handvla/geom.hpp"
#include "oracles.hpp"

using namespace handvla::geom;

namespace {

double max_abs(const Mat3& m) { return m.cwiseAbs().maxCoeff(); }

Pose random_pose(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> a(-3.0, 3.0), b(-1.4, 1.4), t(-1.0, 1.0);
  return {Rotation::from_euler(Vec3(a(rng), b(rng), a(rng))), Vec3(t(rng), t(rng), t(rng))};
}

}  // namespace

TEST_CASE("zero euler angles give the identity") {
  CHECK(max_abs(Rotation::from_euler(Vec3::Zero()).matrix() - Mat3::Identity()) == 0.0);
  CHECK(Rotation().euler().norm() == 0.0);
}

TEST_CASE("quarter turn about x maps y onto z") {
  const Rotation r = Rotation::from_euler(Vec3(std::numbers::pi / 2, 0, 0));
  CHECK((r * Vec3::UnitY() - Vec3::UnitZ()).norm() < 1e-15);
}

TEST_CASE("euler matrix matches the elementary-rotation product and round-trips") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> a(-3.1, 3.1), b(-1.4, 1.4);
  for (int i = 0; i < 100; ++i) {
    const Vec3 e(a(rng), b(rng), a(rng));
    const Rotation r = Rotation::from_euler(e);
    CHECK(max_abs(r.matrix() - oracle::euler_xyz(e)) < 1e-12);
    const Vec3 back = r.euler();
    CHECK(max_abs(Rotation::from_euler(back).matrix() - r.matrix()) < 1e-9);
    CHECK((back - e).norm() < 1e-9);
  }
}

TEST_CASE("gimbal lock pins the third angle") {
  const Rotation r = Rotation::from_euler(Vec3(0.3, std::numbers::pi / 2, 0.2));
  const Vec3 e = r.euler();
  CHECK(e[2] == 0.0);
  CHECK(std::abs(e[1] - std::numbers::pi / 2) < 1e-7);
  CHECK(max_abs(Rotation::from_euler(e).matrix() - r.matrix()) < 1e-7);
}

TEST_CASE("from_matrix rejects non-rotations") {
  Mat3 m = Mat3::Identity();
  m(0, 0) = -1.0;
  CHECK_THROWS_AS(Rotation::from_matrix(m), std::invalid_argument);
  CHECK_THROWS_AS(Rotation::from_matrix(2.0 * Mat3::Identity()), std::invalid_argument);
  CHECK_THROWS_AS(Rotation::from_euler(Vec3(std::nan(""), 0, 0)), std::invalid_argument);
  CHECK_NOTHROW(Rotation::from_matrix(oracle::euler_xyz(Vec3(0.1, 0.2, 0.3))));
}

TEST_CASE("nearest projects a perturbed matrix back onto SO(3)") {
  Mat3 m = oracle::euler_xyz(Vec3(0.4, -0.2, 1.0));
  m(0, 1) += 1e-4;
  const Rotation r = Rotation::nearest(m);
  CHECK(r.orthonormality_error() < 1e-12);
  CHECK(max_abs(r.matrix() - m) < 1e-3);
}

TEST_CASE("long products stay orthonormal") {
  std::mt19937_64 rng(2);
  Rotation r;
  for (int i = 0; i < 10000; ++i) r = r * random_pose(rng).rotation;
  CHECK(r.orthonormality_error() < 1e-12);
}

TEST_CASE("projection conventions") {
  CameraIntrinsics k;
  k.focal_x = k.focal_y = 500.0;
  k.principal_x = 320.0;
  k.principal_y = 240.0;
  k.width = 640;
  k.height = 480;
  CHECK((project(k, Vec3(0, 0, 1)) - Vec2(320, 240)).norm() == 0.0);
  CHECK(project(k, Vec3(0.1, 0, 1)).x() == doctest::Approx(370.0));
  CHECK_THROWS_AS(project(k, Vec3(0, 0, 0)), handvla::BehindCameraError);
  CHECK_THROWS_AS(project(k, Vec3(0, 0, -1)), handvla::BehindCameraError);

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> px(0, 640), d(0.2, 5.0);
  for (int i = 0; i < 50; ++i) {
    const Vec2 p(px(rng), px(rng) * 0.75);
    const double depth = d(rng);
    const Vec3 q = unproject(k, p, depth);
    CHECK(q.z() == depth);
    CHECK((project(k, q) - p).norm() < 1e-9);
  }
}

TEST_CASE("field of view and intrinsics are inverse") {
  const FieldOfView fov{1.2, 0.9};
  const auto k = intrinsics_from_fov(fov, 640, 480);
  CHECK(k.principal_x == 319.5);
  CHECK(k.principal_y == 239.5);
  const auto back = field_of_view(k);
  CHECK(back.horizontal_rad == doctest::Approx(1.2).epsilon(1e-12));
  CHECK(back.vertical_rad == doctest::Approx(0.9).epsilon(1e-12));
  CHECK_THROWS_AS(intrinsics_from_fov({0.0, 1.0}, 10, 10), std::invalid_argument);
  CHECK_THROWS_AS(intrinsics_from_fov({1.0, 1.0}, 0, 10), std::invalid_argument);
}

TEST_CASE("relative deltas") {
  const Pose p = Pose::identity();
  const auto d0 = relative_delta(p, p);
  CHECK(d0.translation.norm() == 0.0);
  CHECK(d0.rotation.norm() == 0.0);
  Pose q = p;
  q.translation.z() = 0.05;
  const auto d1 = relative_delta(p, q);
  CHECK((d1.translation - Vec3(0, 0, 0.05)).norm() == 0.0);
  CHECK(d1.rotation.norm() == 0.0);
}

TEST_CASE("integrate_deltas edge cases") {
  std::mt19937_64 rng(4);
  const Pose s = random_pose(rng);
  CHECK(integrate_deltas(s, {}).size() == 1);
  const PoseDelta zero;
  const auto two = integrate_deltas(s, std::span<const PoseDelta>(&zero, 1));
  REQUIRE(two.size() == 2);
  CHECK(max_abs(two[1].rotation.matrix() - s.rotation.matrix()) < 1e-15);
  CHECK((two[1].translation - s.translation).norm() == 0.0);
}

TEST_CASE("200-frame random walk integrates back to the final pose") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<Pose> walk{random_pose(rng)};
  for (int i = 1; i < 200; ++i) {
    Pose p = walk.back();
    p.translation += 0.01 * Vec3(n(rng), n(rng), n(rng));
    p.rotation = Rotation::from_axis_angle(Vec3(n(rng), n(rng), n(rng)), 0.05 * n(rng)) * p.rotation;
    walk.push_back(p);
  }
  std::vector<PoseDelta> d;
  for (std::size_t i = 0; i + 1 < walk.size(); ++i) d.push_back(relative_delta(walk[i], walk[i + 1]));
  const auto rec = integrate_deltas(walk.front(), d);
  // Direct composition oracle for the end pose.
  Mat3 r = walk.front().rotation.matrix();
  Vec3 t = walk.front().translation;
  for (std::size_t i = 0; i + 1 < walk.size(); ++i) {
    r = walk[i + 1].rotation.matrix() * walk[i].rotation.matrix().transpose() * r;
    t += walk[i + 1].translation - walk[i].translation;
  }
  CHECK((rec.back().translation - walk.back().translation).norm() < 1e-7);
  CHECK(max_abs(rec.back().rotation.matrix() - walk.back().rotation.matrix()) < 1e-7);
  CHECK(max_abs(r - walk.back().rotation.matrix()) < 1e-7);
  CHECK((t - walk.back().translation).norm() < 1e-12);
}
