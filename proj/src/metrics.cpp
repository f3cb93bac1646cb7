#include "handvla/metrics.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

#include "handvla/errors.hpp"
#include "handvla/kernels.hpp"
#include "json.hpp"

namespace handvla::metrics {

void FeatureSet::validate(double tol) const {
  if (dim <= 0) throw std::invalid_argument("feature dim must be positive");
  if (data.size() % static_cast<std::size_t>(dim) != 0) throw std::invalid_argument("feature data is not count x dim");
  if (!ids.empty() && static_cast<int>(ids.size()) != count()) throw std::invalid_argument("feature ids do not match count");
  for (int i = 0; i < count(); ++i) {
    double n2 = 0.0;
    for (int d = 0; d < dim; ++d) n2 += static_cast<double>(data[static_cast<std::size_t>(i) * dim + d]) * data[static_cast<std::size_t>(i) * dim + d];
    if (std::abs(std::sqrt(n2) - 1.0) > tol) {
      throw std::invalid_argument("feature row " + std::to_string(i) + " is not unit norm");
    }
  }
}

FeatureSet load_features(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open feature file " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw SchemaError(path.string() + ": missing header line");
  FeatureSet fs;
  long long count = 0;
  try {
    const auto h = nlohmann::json::parse(line);
    fs.dim = h.at("dim").get<int>();
    count = h.at("count").get<long long>();
    if (h.contains("ids")) fs.ids = h.at("ids").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
  if (fs.dim <= 0 || count < 0 || count > (1LL << 32) / fs.dim) throw SchemaError(path.string() + ": bad header sizes");
  const std::size_t n = static_cast<std::size_t>(count) * fs.dim;
  std::vector<unsigned char> bytes(n * 4);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (static_cast<std::size_t>(in.gcount()) != bytes.size()) throw SchemaError(path.string() + ": truncated feature block");
  fs.data.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t u = bytes[4 * i] | (bytes[4 * i + 1] << 8) | (bytes[4 * i + 2] << 16) |
                            (static_cast<std::uint32_t>(bytes[4 * i + 3]) << 24);
    fs.data[i] = std::bit_cast<float>(u);
  }
  try {
    fs.validate();
  } catch (const std::invalid_argument& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
  return fs;
}

void save_features(const std::filesystem::path& path, const FeatureSet& fs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  nlohmann::json h{{"dim", fs.dim}, {"count", fs.count()}};
  if (!fs.ids.empty()) h["ids"] = fs.ids;
  out << h.dump() << '\n';
  for (float f : fs.data) {
    const auto u = std::bit_cast<std::uint32_t>(f);
    const char b[4] = {static_cast<char>(u & 0xff), static_cast<char>((u >> 8) & 0xff),
                       static_cast<char>((u >> 16) & 0xff), static_cast<char>(u >> 24)};
    out.write(b, 4);
  }
}

Diversity visual_diversity(const FeatureSet& q, const FeatureSet& t) {
  if (q.count() == 0 || t.count() == 0) throw std::invalid_argument("visual_diversity: empty feature set");
  if (q.dim != t.dim) throw std::invalid_argument("visual_diversity: dimension mismatch");
  std::vector<double> best(static_cast<std::size_t>(q.count()));
  kernels::max_similarity_omp(q.data, t.data, q.dim, best);
  Diversity d;
  int above = 0;
  for (double b : best) {
    d.avg_max_cos += b;
    above += b > 0.5 ? 1 : 0;
  }
  d.avg_max_cos /= static_cast<double>(best.size());
  d.recall_at_05 = static_cast<double>(above) / static_cast<double>(best.size());
  return d;
}

std::vector<CurvePoint> diversity_curve(const FeatureSet& q, const FeatureSet& t, const std::vector<int>& counts,
                                        std::uint64_t seed) {
  std::vector<int> order(static_cast<std::size_t>(t.count()));
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<CurvePoint> out;
  for (int c : counts) {
    if (c < 1 || c > t.count()) throw std::invalid_argument("diversity_curve: count outside [1, |targets|]");
    FeatureSet sub;
    sub.dim = t.dim;
    for (int i = 0; i < c; ++i) {
      const auto* row = t.data.data() + static_cast<std::size_t>(order[i]) * t.dim;
      sub.data.insert(sub.data.end(), row, row + t.dim);
    }
    out.push_back({c, visual_diversity(q, sub)});
  }
  return out;
}

WordStats load_word_stats(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open word stats " + path.string());
  WordStats ws;
  try {
    const auto j = nlohmann::json::parse(in);
    for (const auto& [pos, words] : j.items()) {
      if (pos != "noun" && pos != "verb" && pos != "adjective") throw SchemaError("unknown part of speech '" + pos + "'");
      auto& m = ws.by_pos[pos];
      for (const auto& [w, c] : words.items()) {
        const int n = c.get<int>();
        if (n < 1) throw SchemaError("word '" + w + "' has count < 1");
        m[w] = n;
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
  return ws;
}

int h_index(std::vector<int> counts) {
  std::sort(counts.begin(), counts.end(), std::greater<>());
  int h = 0;
  while (h < static_cast<int>(counts.size()) && counts[h] >= h + 1) ++h;
  return h;
}

InstructionDiversity instruction_diversity(const std::map<std::string, int>& counts) {
  if (counts.empty()) throw std::invalid_argument("instruction_diversity: no words");
  InstructionDiversity out;
  out.rank_frequency.assign(counts.begin(), counts.end());
  std::stable_sort(out.rank_frequency.begin(), out.rank_frequency.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<int> c;
  for (const auto& [w, n] : counts) {
    c.push_back(n);
    out.i100 += n >= 100 ? 1 : 0;
  }
  out.h_index = h_index(std::move(c));
  return out;
}

}  // namespace handvla::metrics
