#include "handvla/geom.hpp"

#include <Eigen/SVD>
#include <cmath>
#include <stdexcept>

#include "handvla/errors.hpp"

namespace handvla::geom {

Rotation Rotation::from_matrix(const Mat3& m, double tol) {
  if (!m.allFinite()) throw std::invalid_argument("rotation matrix is not finite");
  const double ortho = (m.transpose() * m - Mat3::Identity()).cwiseAbs().maxCoeff();
  if (ortho > tol || std::abs(m.determinant() - 1.0) > tol) {
    throw std::invalid_argument("matrix is not a proper rotation");
  }
  return Rotation(m, Unchecked{});
}

Rotation Rotation::nearest(const Mat3& m) {
  if (!m.allFinite()) throw std::invalid_argument("rotation matrix is not finite");
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0 ? -1.0 : 1.0;
  return Rotation(svd.matrixU() * d * svd.matrixV().transpose(), Unchecked{});
}

Rotation Rotation::from_euler(const Vec3& a) {
  if (!a.allFinite()) throw std::invalid_argument("euler angles must be finite");
  const double c0 = std::cos(a[0]), s0 = std::sin(a[0]);
  const double c1 = std::cos(a[1]), s1 = std::sin(a[1]);
  const double c2 = std::cos(a[2]), s2 = std::sin(a[2]);
  Mat3 m;
  m << c1 * c2, -c1 * s2, s1,
       c0 * s2 + s0 * s1 * c2, c0 * c2 - s0 * s1 * s2, -s0 * c1,
       s0 * s2 - c0 * s1 * c2, s0 * c2 + c0 * s1 * s2, c0 * c1;
  return Rotation(m, Unchecked{});
}

Rotation Rotation::from_axis_angle(const Vec3& axis, double angle) {
  const double n = axis.norm();
  if (!(n > 0.0) || !std::isfinite(angle)) throw std::invalid_argument("bad axis-angle");
  return Rotation(Eigen::AngleAxisd(angle, axis / n).toRotationMatrix(), Unchecked{});
}

Rotation Rotation::from_quaternion(const Eigen::Quaterniond& q) {
  if (!(q.norm() > 0.0)) throw std::invalid_argument("zero quaternion");
  return Rotation(q.normalized().toRotationMatrix(), Unchecked{});
}

Vec3 Rotation::euler() const {
  const Mat3& r = m_;
  const double cos1 = std::hypot(r(0, 0), r(0, 1));
  const double a1 = std::atan2(r(0, 2), cos1);
  if (cos1 < 1e-12) {
    // Gimbal lock: only a0 +/- a2 is observable; pin a2 = 0.
    const double sign = r(0, 2) > 0.0 ? 1.0 : -1.0;
    return {std::atan2(sign * r(1, 0), r(1, 1)), a1, 0.0};
  }
  return {std::atan2(-r(1, 2), r(2, 2)), a1, std::atan2(-r(0, 1), r(0, 0))};
}

Rotation Rotation::operator*(const Rotation& o) const {
  Mat3 p = m_ * o.m_;
  p = 0.5 * p * (3.0 * Mat3::Identity() - p.transpose() * p);
  return Rotation(p, Unchecked{});
}

double Rotation::orthonormality_error() const {
  return std::max((m_.transpose() * m_ - Mat3::Identity()).cwiseAbs().maxCoeff(),
                  std::abs(m_.determinant() - 1.0));
}

void CameraIntrinsics::validate() const {
  if (!(focal_x > 0.0) || !(focal_y > 0.0)) throw std::invalid_argument("focal length must be positive");
  if (width <= 0 || height <= 0) throw std::invalid_argument("image size must be positive");
  if (!std::isfinite(principal_x) || !std::isfinite(principal_y)) {
    throw std::invalid_argument("principal point must be finite");
  }
}

Mat3 CameraIntrinsics::matrix() const {
  Mat3 k;
  k << focal_x, 0.0, principal_x, 0.0, focal_y, principal_y, 0.0, 0.0, 1.0;
  return k;
}

FieldOfView field_of_view(const CameraIntrinsics& k) {
  k.validate();
  return {2.0 * std::atan(k.width / (2.0 * k.focal_x)), 2.0 * std::atan(k.height / (2.0 * k.focal_y))};
}

CameraIntrinsics intrinsics_from_fov(const FieldOfView& fov, int width, int height) {
  constexpr double pi = 3.14159265358979323846;
  if (!(fov.horizontal_rad > 0.0 && fov.horizontal_rad < pi && fov.vertical_rad > 0.0 && fov.vertical_rad < pi)) {
    throw std::invalid_argument("field of view must lie in (0, pi)");
  }
  CameraIntrinsics k;
  k.width = width;
  k.height = height;
  k.focal_x = width / (2.0 * std::tan(fov.horizontal_rad / 2.0));
  k.focal_y = height / (2.0 * std::tan(fov.vertical_rad / 2.0));
  k.principal_x = (width - 1) / 2.0;
  k.principal_y = (height - 1) / 2.0;
  k.validate();
  return k;
}

Vec2 project(const CameraIntrinsics& k, const Vec3& p) {
  if (!(p.z() > 0.0)) throw BehindCameraError("point is behind the camera");
  return {k.focal_x * p.x() / p.z() + k.principal_x, k.focal_y * p.y() / p.z() + k.principal_y};
}

Vec3 unproject(const CameraIntrinsics& k, const Vec2& px, double depth) {
  return {(px.x() - k.principal_x) / k.focal_x * depth, (px.y() - k.principal_y) / k.focal_y * depth, depth};
}

PoseDelta relative_delta(const Pose& from, const Pose& to) {
  return {to.translation - from.translation, (to.rotation * from.rotation.inverse()).euler()};
}

std::vector<Pose> integrate_deltas(const Pose& start, std::span<const PoseDelta> deltas) {
  std::vector<Pose> out;
  out.reserve(deltas.size() + 1);
  out.push_back(start);
  for (const PoseDelta& d : deltas) {
    const Pose& prev = out.back();
    out.push_back({Rotation::from_euler(d.rotation) * prev.rotation, prev.translation + d.translation});
  }
  return out;
}

}  // namespace handvla::geom
