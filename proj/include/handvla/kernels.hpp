#pragma once

// Data-parallel inner loops. Every kernel has a plain serial reference and an
// OpenMP variant; the OpenMP variants partition work so that each output value
// is computed by the same arithmetic sequence as the reference, which makes
// the two bit-identical and lets tests compare them exactly.

#include <Eigen/Core>
#include <span>
#include <vector>

#include "handvla/image.hpp"

namespace handvla::kernels {

// out[q] = max_t <queries[q], targets[t]>, rows packed with stride dim.
// Dot products accumulate in double in index order.
void max_similarity_serial(std::span<const float> queries, std::span<const float> targets, int dim,
                           std::span<double> out);
void max_similarity_omp(std::span<const float> queries, std::span<const float> targets, int dim,
                        std::span<double> out);

// min over (p, c) of |p - c|.
double min_distance_serial(std::span<const Eigen::Vector3d> points, std::span<const Eigen::Vector3d> cloud);
double min_distance_omp(std::span<const Eigen::Vector3d> points, std::span<const Eigen::Vector3d> cloud);

// dst(x, y) = bilinear(src, H * (x, y, 1)); pixels mapping outside src are black.
void warp_bilinear_serial(const Image& src, const Eigen::Matrix3d& dst_to_src, Image& dst);
void warp_bilinear_omp(const Image& src, const Eigen::Matrix3d& dst_to_src, Image& dst);

// Per-dimension streaming mean/variance (Welford), mergeable (Chan et al.).
struct Moments {
  explicit Moments(int dims = 0) : count(dims, 0.0), mean(dims, 0.0), m2(dims, 0.0) {}
  std::vector<double> count;
  std::vector<double> mean;
  std::vector<double> m2;

  int dims() const { return static_cast<int>(mean.size()); }
  void merge(const Moments& other);
  double variance(int d) const { return count[d] > 0 ? m2[d] / count[d] : 0.0; }
};

// Adds rows (stride = acc.dims()) where mask != 0. mask may be empty (all valid).
void accumulate_moments_serial(std::span<const float> rows, std::span<const float> mask, Moments& acc);
void accumulate_moments_omp(std::span<const float> rows, std::span<const float> mask, Moments& acc);

}  // namespace handvla::kernels
