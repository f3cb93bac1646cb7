#include "handvla/episode.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "handvla/errors.hpp"
#include "json.hpp"

namespace handvla::episode {

DimStats DimStats::from_moments(const kernels::Moments& m) {
  if (m.dims() != kActionDim) throw std::invalid_argument("moments must have 102 dims");
  DimStats s;
  for (int d = 0; d < kActionDim; ++d) {
    s.mean[d] = m.mean[d];
    s.var[d] = m.variance(d);
    s.count[d] = m.count[d];
    s.flagged[d] = m.count[d] == 0.0 || s.var[d] == 0.0;
  }
  return s;
}

NormStats compute_norm_stats(std::span<const Episode* const> episodes) {
  if (episodes.empty()) throw std::invalid_argument("compute_norm_stats: empty episode set");
  const auto n = static_cast<std::ptrdiff_t>(episodes.size());
  std::vector<kernels::Moments> st(episodes.size(), kernels::Moments(kActionDim));
  std::vector<kernels::Moments> ac(episodes.size(), kernels::Moments(kActionDim));
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const Episode& ep = *episodes[i];
    kernels::accumulate_moments_serial(ep.states, ep.state_valid, st[i]);
    kernels::accumulate_moments_serial(ep.actions, ep.action_mask, ac[i]);
  }
  // Merge in episode order so results do not depend on scheduling.
  kernels::Moments s(kActionDim), a(kActionDim);
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    s.merge(st[i]);
    a.merge(ac[i]);
  }
  return {DimStats::from_moments(s), DimStats::from_moments(a)};
}

NormStats compute_norm_stats(std::span<const Episode> episodes) {
  std::vector<const Episode*> ptrs;
  for (const auto& e : episodes) ptrs.push_back(&e);
  return compute_norm_stats(std::span<const Episode* const>(ptrs));
}

namespace {

DimStats pool(std::span<const NormStats> stats, std::span<const double> w, DimStats NormStats::*field) {
  DimStats out;
  for (int d = 0; d < kActionDim; ++d) {
    // Datasets with no valid entry in this dim drop out; the rest are renormalized.
    double wsum = 0.0;
    for (std::size_t i = 0; i < stats.size(); ++i)
      if ((stats[i].*field).count[d] > 0) wsum += w[i];
    double mu = 0.0, m2 = 0.0, count = 0.0;
    if (wsum > 0.0) {
      for (std::size_t i = 0; i < stats.size(); ++i) {
        const DimStats& s = stats[i].*field;
        if (s.count[d] == 0) continue;
        const double wi = w[i] / wsum;
        mu += wi * s.mean[d];
        m2 += wi * (s.var[d] + s.mean[d] * s.mean[d]);
        count += s.count[d];
      }
    }
    out.mean[d] = mu;
    out.var[d] = std::max(0.0, m2 - mu * mu);
    out.count[d] = count;
    out.flagged[d] = count == 0.0 || out.var[d] == 0.0;
  }
  return out;
}

}  // namespace

NormStats pool_norm_stats(std::span<const NormStats> stats, std::span<const double> weights) {
  if (stats.empty() || stats.size() != weights.size()) {
    throw std::invalid_argument("pool_norm_stats: need one weight per dataset");
  }
  double sum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw std::invalid_argument("pool_norm_stats: weights must be >= 0");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("pool_norm_stats: weights must sum to 1");
  return {pool(stats, weights, &NormStats::state), pool(stats, weights, &NormStats::action)};
}

ActionVector normalize(const ActionVector& v, const DimStats& s) {
  ActionVector out;
  for (int d = 0; d < kActionDim; ++d) out[d] = (v[d] - s.mean[d]) / std::sqrt(std::max(s.var[d], kVarianceFloor));
  return out;
}

ActionVector denormalize(const ActionVector& v, const DimStats& s) {
  ActionVector out;
  for (int d = 0; d < kActionDim; ++d) out[d] = v[d] * std::sqrt(std::max(s.var[d], kVarianceFloor)) + s.mean[d];
  return out;
}

namespace {

nlohmann::json dim_json(const DimStats& s) {
  return {{"mean", s.mean}, {"var", s.var}, {"count", s.count}, {"flagged", s.flagged}};
}

DimStats dim_from_json(const nlohmann::json& j) {
  DimStats s;
  s.mean = j.at("mean").get<std::array<double, kActionDim>>();
  s.var = j.at("var").get<std::array<double, kActionDim>>();
  s.count = j.at("count").get<std::array<double, kActionDim>>();
  s.flagged = j.at("flagged").get<std::array<bool, kActionDim>>();
  return s;
}

}  // namespace

void save_norm_stats(const std::filesystem::path& path, const NormStats& stats) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  nlohmann::json j{{"state", dim_json(stats.state)}, {"action", dim_json(stats.action)}};
  out << j.dump(1) << '\n';
}

NormStats load_norm_stats(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  try {
    const auto j = nlohmann::json::parse(in);
    return {dim_from_json(j.at("state")), dim_from_json(j.at("action"))};
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
}

}  // namespace handvla::episode
