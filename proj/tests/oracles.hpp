#pragma once

// Independent reference computations used as test oracles. Nothing here calls
// into the library's math; each is the plainest formula that defines the value.

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "handvla/retarget.hpp"

namespace oracle {

inline Eigen::Matrix3d rx(double a) {
  Eigen::Matrix3d m;
  m << 1, 0, 0, 0, std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a);
  return m;
}
inline Eigen::Matrix3d ry(double a) {
  Eigen::Matrix3d m;
  m << std::cos(a), 0, std::sin(a), 0, 1, 0, -std::sin(a), 0, std::cos(a);
  return m;
}
inline Eigen::Matrix3d rz(double a) {
  Eigen::Matrix3d m;
  m << std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a), 0, 0, 0, 1;
  return m;
}
inline Eigen::Matrix3d euler_xyz(const Eigen::Vector3d& a) { return rx(a[0]) * ry(a[1]) * rz(a[2]); }

// Rodrigues: I + sin(q) K + (1 - cos(q)) K^2.
inline Eigen::Matrix3d rodrigues(Eigen::Vector3d axis, double q) {
  axis.normalize();
  Eigen::Matrix3d k;
  k << 0, -axis.z(), axis.y(), axis.z(), 0, -axis.x(), -axis.y(), axis.x(), 0;
  return Eigen::Matrix3d::Identity() + std::sin(q) * k + (1.0 - std::cos(q)) * k * k;
}

inline Eigen::Matrix4d homogeneous(const Eigen::Matrix3d& r, const Eigen::Vector3d& t) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = r;
  m.topRightCorner<3, 1>() = t;
  return m;
}

// Site positions from 4x4 products T_j = T_parent * Offset_j * Rot(axis_j, q_j).
inline std::vector<Eigen::Vector3d> fk_sites(const handvla::retarget::KinematicChain& c, const Eigen::VectorXd& q) {
  std::vector<Eigen::Matrix4d> t(c.joints.size());
  for (std::size_t j = 0; j < c.joints.size(); ++j) {
    const auto& jt = c.joints[j];
    const Eigen::Matrix4d parent = jt.parent < 0 ? Eigen::Matrix4d::Identity() : t[static_cast<std::size_t>(jt.parent)];
    const Eigen::Matrix3d off_r = jt.offset.rotation.matrix();
    const double qj = std::clamp(q[static_cast<Eigen::Index>(j)], jt.lower, jt.upper);
    t[j] = parent * homogeneous(off_r, jt.offset.translation) * homogeneous(rodrigues(jt.axis, qj), Eigen::Vector3d::Zero());
  }
  std::vector<Eigen::Vector3d> out;
  for (const auto& s : c.sites) {
    const Eigen::Matrix4d base = s.joint < 0 ? Eigen::Matrix4d::Identity() : t[static_cast<std::size_t>(s.joint)];
    out.push_back((base * Eigen::Vector4d(s.offset.x(), s.offset.y(), s.offset.z(), 1.0)).head<3>());
  }
  return out;
}

// k is a cut iff valid, not an end index, strictly below every earlier valid
// entry of the centred window and no larger than every later one.
inline std::vector<int> brute_minima(const std::vector<double>& s, const std::vector<bool>& valid, int w) {
  const int n = static_cast<int>(s.size()), h = w / 2;
  std::vector<int> out;
  for (int k = 1; k + 1 < n; ++k) {
    if (!valid[k]) continue;
    bool ok = true;
    for (int j = std::max(0, k - h); j <= std::min(n - 1, k + h) && ok; ++j) {
      if (j == k || !valid[j]) continue;
      if (j < k && !(s[k] < s[j])) ok = false;
      if (j > k && s[k] > s[j]) ok = false;
    }
    if (ok) out.push_back(k);
  }
  return out;
}

// Largest h such that at least h words have count >= h, by direct search.
inline int brute_h_index(const std::vector<int>& counts) {
  int best = 0;
  for (int h = 1; h <= static_cast<int>(counts.size()); ++h) {
    int n = 0;
    for (int c : counts) n += c >= h ? 1 : 0;
    if (n >= h) best = h;
  }
  return best;
}

inline double brute_max_cos(const std::vector<float>& q, const std::vector<float>& t, int dim, int row) {
  double best = -1e300;
  for (std::size_t j = 0; j < t.size() / dim; ++j) {
    double d = 0.0;
    for (int k = 0; k < dim; ++k) d += static_cast<double>(q[static_cast<std::size_t>(row) * dim + k]) * t[j * dim + k];
    best = std::max(best, d);
  }
  return best;
}

inline std::vector<float> random_unit_rows(std::mt19937_64& rng, int n, int dim) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<float> out(static_cast<std::size_t>(n) * dim);
  for (int i = 0; i < n; ++i) {
    std::vector<double> v(dim);
    double s = 0.0;
    for (double& x : v) {
      x = g(rng);
      s += x * x;
    }
    s = std::sqrt(s);
    for (int k = 0; k < dim; ++k) out[static_cast<std::size_t>(i) * dim + k] = static_cast<float>(v[k] / s);
  }
  return out;
}

// Two-pass mean and population variance.
inline std::pair<double, double> two_pass(const std::vector<double>& x) {
  if (x.empty()) return {0.0, 0.0};
  double m = 0.0;
  for (double v : x) m += v;
  m /= static_cast<double>(x.size());
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return {m, s / static_cast<double>(x.size())};
}

}  // namespace oracle
