#pragma once

// Rigid-body and pinhole-camera primitives.
//
// Euler convention (used at every I/O boundary): XYZ intrinsic,
//   R = Rx(a0) * Ry(a1) * Rz(a2).
// At gimbal lock (|a1| = pi/2) the decomposition pins a2 = 0.

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <span>
#include <vector>

namespace handvla::geom {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

class Rotation {
 public:
  Rotation() : m_(Mat3::Identity()) {}

  // Throws std::invalid_argument if m is not orthonormal with det +1 within tol.
  static Rotation from_matrix(const Mat3& m, double tol = 1e-9);
  // Nearest rotation (polar decomposition); for slightly drifted or rounded input.
  static Rotation nearest(const Mat3& m);
  // Throws std::invalid_argument on non-finite angles.
  static Rotation from_euler(const Vec3& xyz);
  static Rotation from_axis_angle(const Vec3& axis, double angle);
  static Rotation from_quaternion(const Eigen::Quaterniond& q);

  Vec3 euler() const;
  Eigen::Quaterniond quaternion() const { return Eigen::Quaterniond(m_); }
  const Mat3& matrix() const { return m_; }

  Rotation inverse() const { return Rotation(m_.transpose(), Unchecked{}); }
  Vec3 operator*(const Vec3& v) const { return m_ * v; }
  // Composition re-orthonormalizes with one Newton step so long products stay on SO(3).
  Rotation operator*(const Rotation& o) const;

  double orthonormality_error() const;

 private:
  struct Unchecked {};
  Rotation(const Mat3& m, Unchecked) : m_(m) {}
  Mat3 m_;
};

struct Pose {
  Rotation rotation;
  Vec3 translation = Vec3::Zero();

  static Pose identity() { return {}; }

  Pose operator*(const Pose& o) const {
    return {rotation * o.rotation, rotation * o.translation + translation};
  }
  Vec3 operator*(const Vec3& p) const { return rotation * p + translation; }
  Pose inverse() const {
    Rotation ri = rotation.inverse();
    return {ri, -(ri * translation)};
  }
};

struct CameraIntrinsics {
  double focal_x = 1.0;
  double focal_y = 1.0;
  double principal_x = 0.0;
  double principal_y = 0.0;
  int width = 1;
  int height = 1;

  // Throws std::invalid_argument on non-positive focal or size.
  void validate() const;
  Mat3 matrix() const;
};

struct FieldOfView {
  double horizontal_rad = 0.0;
  double vertical_rad = 0.0;
  bool operator==(const FieldOfView&) const = default;
};

FieldOfView field_of_view(const CameraIntrinsics& k);
// Pixel centres are integer coordinates, so the image centre is ((w-1)/2, (h-1)/2).
// Intrinsics with centered principal point reproducing fov at the given size.
CameraIntrinsics intrinsics_from_fov(const FieldOfView& fov, int width, int height);

// Pinhole projection; throws BehindCameraError for z <= 0.
Vec2 project(const CameraIntrinsics& k, const Vec3& point_cam);
Vec3 unproject(const CameraIntrinsics& k, const Vec2& px, double depth);

struct PoseDelta {
  Vec3 translation = Vec3::Zero();  // t_{k+1} - t_k
  Vec3 rotation = Vec3::Zero();     // euler(R_{k+1} R_k^T)
};

PoseDelta relative_delta(const Pose& from, const Pose& to);
// Returns deltas.size() + 1 poses starting at start.
std::vector<Pose> integrate_deltas(const Pose& start, std::span<const PoseDelta> deltas);

}  // namespace handvla::geom
