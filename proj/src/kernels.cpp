#include "handvla/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace handvla::kernels {

namespace {

double dot_row(const float* a, const float* b, int dim) {
  double s = 0.0;
  for (int i = 0; i < dim; ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return s;
}

void check_similarity_args(std::span<const float> q, std::span<const float> t, int dim, std::span<double> out) {
  if (dim <= 0 || q.size() % dim != 0 || t.size() % dim != 0 || out.size() != q.size() / dim) {
    throw std::invalid_argument("max_similarity: inconsistent sizes");
  }
  if (t.empty()) throw std::invalid_argument("max_similarity: empty target set");
}

double max_over_targets(const float* query, std::span<const float> targets, int dim) {
  const std::size_t nt = targets.size() / dim;
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < nt; ++j) best = std::max(best, dot_row(query, targets.data() + j * dim, dim));
  return best;
}

std::uint8_t sample_channel(const Image& src, double sx, double sy, int c) {
  const int x0 = static_cast<int>(std::floor(sx));
  const int y0 = static_cast<int>(std::floor(sy));
  const double fx = sx - x0, fy = sy - y0;
  auto px = [&](int x, int y) -> double {
    x = std::clamp(x, 0, src.width - 1);
    y = std::clamp(y, 0, src.height - 1);
    return src.at(x, y)[c];
  };
  const double v = (1 - fy) * ((1 - fx) * px(x0, y0) + fx * px(x0 + 1, y0)) +
                   fy * ((1 - fx) * px(x0, y0 + 1) + fx * px(x0 + 1, y0 + 1));
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

void warp_row(const Image& src, const Eigen::Matrix3d& h, Image& dst, int y) {
  for (int x = 0; x < dst.width; ++x) {
    const Eigen::Vector3d p = h * Eigen::Vector3d(x, y, 1.0);
    std::uint8_t* d = dst.at(x, y);
    if (!(p.z() > 0.0)) {
      d[0] = d[1] = d[2] = 0;
      continue;
    }
    const double sx = p.x() / p.z(), sy = p.y() / p.z();
    // Half-pixel border so that edge pixels still resample.
    if (sx < -0.5 || sy < -0.5 || sx > src.width - 0.5 || sy > src.height - 0.5) {
      d[0] = d[1] = d[2] = 0;
      continue;
    }
    for (int c = 0; c < 3; ++c) d[c] = sample_channel(src, sx, sy, c);
  }
}

void check_moments_args(std::span<const float> rows, std::span<const float> mask, const Moments& acc) {
  const int dims = acc.dims();
  if (dims <= 0 || rows.size() % dims != 0) throw std::invalid_argument("moments: row size mismatch");
  if (!mask.empty() && mask.size() != rows.size()) throw std::invalid_argument("moments: mask size mismatch");
}

void accumulate_dim(std::span<const float> rows, std::span<const float> mask, Moments& acc, int d) {
  const int dims = acc.dims();
  const std::size_t n = rows.size() / dims;
  double count = acc.count[d], mean = acc.mean[d], m2 = acc.m2[d];
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t i = r * dims + d;
    if (!mask.empty() && mask[i] == 0.0f) continue;
    const double x = rows[i];
    count += 1.0;
    const double delta = x - mean;
    mean += delta / count;
    m2 += delta * (x - mean);
  }
  acc.count[d] = count;
  acc.mean[d] = mean;
  acc.m2[d] = m2;
}

}  // namespace

void max_similarity_serial(std::span<const float> queries, std::span<const float> targets, int dim,
                           std::span<double> out) {
  check_similarity_args(queries, targets, dim, out);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = max_over_targets(queries.data() + i * dim, targets, dim);
}

void max_similarity_omp(std::span<const float> queries, std::span<const float> targets, int dim,
                        std::span<double> out) {
  check_similarity_args(queries, targets, dim, out);
  const auto n = static_cast<std::ptrdiff_t>(out.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) out[i] = max_over_targets(queries.data() + i * dim, targets, dim);
}

double min_distance_serial(std::span<const Eigen::Vector3d> points, std::span<const Eigen::Vector3d> cloud) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& p : points) {
    for (const auto& c : cloud) best = std::min(best, (p - c).norm());
  }
  return best;
}

double min_distance_omp(std::span<const Eigen::Vector3d> points, std::span<const Eigen::Vector3d> cloud) {
  double best = std::numeric_limits<double>::infinity();
  const auto n = static_cast<std::ptrdiff_t>(cloud.size());
#pragma omp parallel for reduction(min : best) schedule(static)
  for (std::ptrdiff_t j = 0; j < n; ++j) {
    for (const auto& p : points) best = std::min(best, (p - cloud[j]).norm());
  }
  return best;
}

void warp_bilinear_serial(const Image& src, const Eigen::Matrix3d& h, Image& dst) {
  for (int y = 0; y < dst.height; ++y) warp_row(src, h, dst, y);
}

void warp_bilinear_omp(const Image& src, const Eigen::Matrix3d& h, Image& dst) {
#pragma omp parallel for schedule(static)
  for (int y = 0; y < dst.height; ++y) warp_row(src, h, dst, y);
}

void Moments::merge(const Moments& o) {
  if (o.dims() != dims()) throw std::invalid_argument("moments: dimension mismatch");
  for (int d = 0; d < dims(); ++d) {
    if (o.count[d] == 0.0) continue;
    if (count[d] == 0.0) {
      count[d] = o.count[d];
      mean[d] = o.mean[d];
      m2[d] = o.m2[d];
      continue;
    }
    const double n = count[d] + o.count[d];
    const double delta = o.mean[d] - mean[d];
    mean[d] += delta * o.count[d] / n;
    m2[d] += o.m2[d] + delta * delta * count[d] * o.count[d] / n;
    count[d] = n;
  }
}

void accumulate_moments_serial(std::span<const float> rows, std::span<const float> mask, Moments& acc) {
  check_moments_args(rows, mask, acc);
  for (int d = 0; d < acc.dims(); ++d) accumulate_dim(rows, mask, acc, d);
}

void accumulate_moments_omp(std::span<const float> rows, std::span<const float> mask, Moments& acc) {
  check_moments_args(rows, mask, acc);
  const int dims = acc.dims();
#pragma omp parallel for schedule(static)
  for (int d = 0; d < dims; ++d) accumulate_dim(rows, mask, acc, d);
}

}  // namespace handvla::kernels
