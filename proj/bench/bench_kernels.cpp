#include <benchmark/benchmark.h>

#include <random>

#include "handvla/kernels.hpp"

using namespace handvla;
using namespace handvla::kernels;

namespace {

std::vector<float> unit_rows(int n, int dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> g(0.0f, 1.0f);
  std::vector<float> out(static_cast<std::size_t>(n) * dim);
  for (int i = 0; i < n; ++i) {
    float s = 0.0f;
    for (int k = 0; k < dim; ++k) s += (out[i * dim + k] = g(rng)) * out[i * dim + k];
    for (int k = 0; k < dim; ++k) out[i * dim + k] /= std::sqrt(s);
  }
  return out;
}

template <auto Fn>
void max_similarity(benchmark::State& st) {
  const int n = static_cast<int>(st.range(0)), dim = 512;
  const auto q = unit_rows(n, dim, 1), t = unit_rows(4 * n, dim, 2);
  std::vector<double> out(n);
  for (auto _ : st) {
    Fn(q, t, dim, out);
    benchmark::DoNotOptimize(out.data());
  }
  st.SetItemsProcessed(st.iterations() * n * 4LL * n);
}

template <auto Fn>
void min_distance(benchmark::State& st) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<Eigen::Vector3d> p(80), c(st.range(0));
  for (auto& x : p) x = {u(rng), u(rng), u(rng)};
  for (auto& x : c) x = {u(rng), u(rng), u(rng) + 2.0};
  for (auto _ : st) benchmark::DoNotOptimize(Fn(p, c));
  st.SetItemsProcessed(st.iterations() * 80LL * st.range(0));
}

template <auto Fn>
void warp(benchmark::State& st) {
  const int w = static_cast<int>(st.range(0)), h = w * 3 / 4;
  Image src(w, h), dst(w, h);
  std::mt19937_64 rng(4);
  for (auto& b : src.rgb) b = static_cast<std::uint8_t>(rng());
  Eigen::Matrix3d m;
  m << 0.8, 0.05, 20.0, -0.03, 0.85, 10.0, 1e-4, -2e-4, 1.0;
  for (auto _ : st) {
    Fn(src, m, dst);
    benchmark::DoNotOptimize(dst.rgb.data());
  }
  st.SetItemsProcessed(st.iterations() * w * h);
}

template <auto Fn>
void moments(benchmark::State& st) {
  const int rows = static_cast<int>(st.range(0)), dims = 102;
  std::vector<float> data(static_cast<std::size_t>(rows) * dims), mask(data.size(), 1.0f);
  std::mt19937_64 rng(5);
  std::normal_distribution<float> g(0.0f, 1.0f);
  for (auto& x : data) x = g(rng);
  for (auto _ : st) {
    Moments acc(dims);
    Fn(data, mask, acc);
    benchmark::DoNotOptimize(acc.mean.data());
  }
  st.SetItemsProcessed(st.iterations() * rows * dims);
}

}  // namespace

BENCHMARK(max_similarity<max_similarity_serial>)->Name("max_similarity/serial")->Arg(256)->Arg(1024);
BENCHMARK(max_similarity<max_similarity_omp>)->Name("max_similarity/omp")->Arg(256)->Arg(1024);
BENCHMARK(min_distance<min_distance_serial>)->Name("min_distance/serial")->Arg(1 << 12)->Arg(1 << 16);
BENCHMARK(min_distance<min_distance_omp>)->Name("min_distance/omp")->Arg(1 << 12)->Arg(1 << 16);
BENCHMARK(warp<warp_bilinear_serial>)->Name("warp_bilinear/serial")->Arg(320)->Arg(1280);
BENCHMARK(warp<warp_bilinear_omp>)->Name("warp_bilinear/omp")->Arg(320)->Arg(1280);
BENCHMARK(moments<accumulate_moments_serial>)->Name("moments/serial")->Arg(1 << 12)->Arg(1 << 16);
BENCHMARK(moments<accumulate_moments_omp>)->Name("moments/omp")->Arg(1 << 12)->Arg(1 << 16);

BENCHMARK_MAIN();
