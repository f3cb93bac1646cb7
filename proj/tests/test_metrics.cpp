#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>

#include "doctest.h"
#include "handvla/errors.hpp"
#include "handvla/metrics.hpp"
#include "oracles.hpp"

using namespace handvla;
using namespace handvla::metrics;
using geom::Vec3;

namespace {

FeatureSet random_set(std::mt19937_64& rng, int n, int dim) {
  FeatureSet f;
  f.dim = dim;
  f.data = oracle::random_unit_rows(rng, n, dim);
  return f;
}

Diversity brute_diversity(const FeatureSet& q, const FeatureSet& t) {
  Diversity d;
  int above = 0;
  for (int i = 0; i < q.count(); ++i) {
    const double b = oracle::brute_max_cos(q.data, t.data, q.dim, i);
    d.avg_max_cos += b;
    above += b > 0.5;
  }
  d.avg_max_cos /= q.count();
  d.recall_at_05 = static_cast<double>(above) / q.count();
  return d;
}

double brute_hand_object(const retarget::KinematicChain& chain, const HandTrajectory& tr,
                         const std::vector<Vec3>& cloud, const std::vector<std::string>& tips) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < tr.wrists.size(); ++k) {
    const auto sites = oracle::fk_sites(chain, Eigen::Map<const Eigen::VectorXd>(tr.joints[k].data(), 45));
    for (const auto& name : tips) {
      const Vec3 tip = tr.wrists[k] * sites[chain.site_index(name)];
      for (const auto& p : cloud) best = std::min(best, (tip - p).norm());
    }
  }
  return best;
}

std::filesystem::path tmp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("handvla_metrics_" + name);
}

}  // namespace

TEST_CASE("visual diversity") {
  std::mt19937_64 rng(1);
  SUBCASE("matches the exhaustive scan") {
    for (int trial = 0; trial < 10; ++trial) {
      const auto q = random_set(rng, 20 + trial, 8), t = random_set(rng, 50 + 7 * trial, 8);
      const auto a = visual_diversity(q, t), b = brute_diversity(q, t);
      CHECK(a.avg_max_cos == b.avg_max_cos);
      CHECK(a.recall_at_05 == b.recall_at_05);
    }
  }
  SUBCASE("queries inside the targets score one") {
    const auto t = random_set(rng, 30, 16);
    const auto d = visual_diversity(t, t);
    CHECK(d.avg_max_cos == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(d.recall_at_05 == 1.0);
  }
  SUBCASE("orthogonal one-hot rows") {
    FeatureSet q, t;
    q.dim = t.dim = 4;
    q.data = {1, 0, 0, 0, 0, 1, 0, 0};
    t.data = {0, 0, 1, 0, 0, 1, 0, 0};
    const auto d = visual_diversity(q, t);
    CHECK(d.avg_max_cos == 0.5);
    CHECK(d.recall_at_05 == 0.5);
  }
  SUBCASE("errors") {
    FeatureSet empty;
    empty.dim = 8;
    CHECK_THROWS_AS(visual_diversity(empty, random_set(rng, 3, 8)), std::invalid_argument);
    CHECK_THROWS_AS(visual_diversity(random_set(rng, 3, 8), random_set(rng, 3, 4)), std::invalid_argument);
  }
}

TEST_CASE("diversity curve") {
  std::mt19937_64 rng(2);
  const auto q = random_set(rng, 40, 8), t = random_set(rng, 200, 8);
  const auto curve = diversity_curve(q, t, {10, 50, 100, 200}, 7);
  REQUIRE(curve.size() == 4);
  const auto full = visual_diversity(q, t);
  CHECK(curve.back().value.avg_max_cos == full.avg_max_cos);
  for (std::size_t i = 1; i < curve.size(); ++i) CHECK(curve[i].value.avg_max_cos >= curve[i - 1].value.avg_max_cos);
  const auto again = diversity_curve(q, t, {10, 50, 100, 200}, 7);
  for (std::size_t i = 0; i < curve.size(); ++i) CHECK(again[i].value.avg_max_cos == curve[i].value.avg_max_cos);
  CHECK_THROWS_AS(diversity_curve(q, t, {0}, 7), std::invalid_argument);
  CHECK_THROWS_AS(diversity_curve(q, t, {201}, 7), std::invalid_argument);
}

TEST_CASE("feature file round-trip") {
  std::mt19937_64 rng(3);
  auto f = random_set(rng, 12, 6);
  for (int i = 0; i < 12; ++i) f.ids.push_back("img" + std::to_string(i));
  const auto p = tmp_path("features.bin");
  save_features(p, f);
  const auto g = load_features(p);
  CHECK(g.dim == f.dim);
  CHECK(g.ids == f.ids);
  CHECK(g.data == f.data);
  f.data[0] *= 2.0f;
  save_features(p, f);
  CHECK_THROWS_AS(load_features(p), SchemaError);
  std::ofstream(p) << "{\"dim\":4,\"count\":3}\n" << std::string(8, '\0');
  CHECK_THROWS_AS(load_features(p), SchemaError);
  std::filesystem::remove(p);
}

TEST_CASE("instruction diversity") {
  CHECK(h_index({5, 5, 5, 5, 5}) == 5);
  CHECK(h_index({1000}) == 1);
  CHECK(h_index({}) == 0);
  CHECK(h_index({0, 0}) == 0);
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> words(1, 300);
  std::geometric_distribution<int> zipfish(0.02);
  for (int trial = 0; trial < 100; ++trial) {
    std::map<std::string, int> counts;
    std::vector<int> raw;
    int i100 = 0;
    const int n = words(rng);
    for (int w = 0; w < n; ++w) {
      const int c = 1 + zipfish(rng);
      counts["w" + std::to_string(w)] = c;
      raw.push_back(c);
      i100 += c >= 100;
    }
    const auto d = instruction_diversity(counts);
    CHECK(d.h_index == oracle::brute_h_index(raw));
    CHECK(d.i100 == i100);
    for (std::size_t k = 1; k < d.rank_frequency.size(); ++k) {
      const auto& a = d.rank_frequency[k - 1];
      const auto& b = d.rank_frequency[k];
      CHECK((a.second > b.second || (a.second == b.second && a.first < b.first)));
    }
  }
  CHECK_THROWS_AS(instruction_diversity({}), std::invalid_argument);

  const auto p = tmp_path("words.json");
  std::ofstream(p) << R"({"noun":{"cup":120,"door":3},"verb":{"pick":101},"adjective":{}})";
  const auto ws = load_word_stats(p);
  CHECK(ws.by_pos.at("noun").at("cup") == 120);
  CHECK(instruction_diversity(ws.by_pos.at("noun")).i100 == 1);
  std::ofstream(p) << R"({"adverb":{"fast":1}})";
  CHECK_THROWS_AS(load_word_stats(p), SchemaError);
  std::ofstream(p) << R"({"noun":{"cup":0}})";
  CHECK_THROWS_AS(load_word_stats(p), SchemaError);
  std::filesystem::remove(p);
}

TEST_CASE("hand-object distance") {
  const auto chain = retarget::mano15(Hand::Right);
  const std::vector<std::string> tips{"thumb_tip", "index_tip", "middle_tip", "ring_tip", "little_tip"};
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    HandTrajectory tr;
    for (int k = 0; k < 5; ++k) {
      tr.wrists.push_back({geom::Rotation::from_euler(Vec3(u(rng), u(rng), u(rng))), Vec3(0.1 * u(rng), 0.1 * u(rng), 0.6)});
      JointAngles q{};
      for (double& a : q) a = 0.3 * u(rng);
      tr.joints.push_back(q);
    }
    std::vector<Vec3> cloud;
    for (int k = 0; k < 50; ++k) cloud.emplace_back(0.2 * u(rng), 0.2 * u(rng), 0.5 + 0.2 * u(rng));
    const double d = hand_object_distance(chain, tr, cloud, tips);
    CHECK(d == doctest::Approx(brute_hand_object(chain, tr, cloud, tips)).epsilon(1e-12));

    const geom::Pose g{geom::Rotation::from_euler(Vec3(u(rng), u(rng), u(rng))), Vec3(u(rng), u(rng), u(rng))};
    auto moved = tr;
    for (auto& w : moved.wrists) w = g * w;
    auto moved_cloud = cloud;
    for (auto& p : moved_cloud) p = g * p;
    CHECK(hand_object_distance(chain, moved, moved_cloud, tips) == doctest::Approx(d).epsilon(1e-10));
  }
  HandTrajectory bad;
  CHECK_THROWS_AS(hand_object_distance(chain, bad, {Vec3::Zero()}, tips), std::invalid_argument);
  CHECK_THROWS_AS(hand_object_distance(chain, {{geom::Pose::identity()}, {JointAngles{}}}, {}, tips),
                  std::invalid_argument);
  CHECK_THROWS_AS(hand_object_distance(chain, {{geom::Pose::identity()}, {JointAngles{}}}, {Vec3::Zero()}, {"nope"}),
                  std::invalid_argument);
}

namespace {

class Flaky : public TrajectorySource {
 public:
  HandTrajectory generate(const GraspCase& c, int trial, std::uint64_t seed) override {
    if (c.id == "grasp_1") throw std::runtime_error("policy crashed");
    return zero_->generate(c, trial, seed);
  }

 private:
  std::unique_ptr<TrajectorySource> zero_ = zero_motion_source();
};

}  // namespace

TEST_CASE("grasp evaluation") {
  const auto cases = make_grasp_fixtures(20, 9);
  SUBCASE("zero motion stays at the fixture distance") {
    const auto r = grasp_eval(cases, *zero_motion_source());
    CHECK(r.failed_cases == 0);
    CHECK(r.average_cm == doctest::Approx(20.0).epsilon(1e-6));
    CHECK(r.median_cm == doctest::Approx(20.0).epsilon(1e-6));
    for (const auto& c : r.cases) CHECK(c.trial_m.size() == 4);
  }
  SUBCASE("touching source reaches zero") {
    const auto r = grasp_eval(cases, *touch_source());
    CHECK(r.average_cm == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(std::abs(r.median_cm) < 1e-9);
  }
  SUBCASE("failed cases are excluded and counted") {
    Flaky f;
    const auto r = grasp_eval(cases, f, 2);
    CHECK(r.failed_cases == 1);
    CHECK(r.cases[1].failed);
    CHECK(r.cases[1].error == "policy crashed");
    CHECK(r.average_cm == doctest::Approx(20.0).epsilon(1e-6));
    CHECK(report_json(r).find("\"failed_cases\":1") != std::string::npos);
    CHECK(report_table(r).find("FAILED (policy crashed)") != std::string::npos);
  }
  SUBCASE("all failed gives NaN aggregates") {
    Flaky f;
    const auto r = grasp_eval({cases[1]}, f);
    CHECK(std::isnan(r.average_cm));
    CHECK(report_json(r).find("\"average_cm\":null") != std::string::npos);
  }
  SUBCASE("case file and trajectory file") {
    const auto p = tmp_path("cases.jsonl"), tp = tmp_path("traj.jsonl");
    save_grasp_cases(p, cases);
    const auto loaded = load_grasp_cases(p);
    REQUIRE(loaded.size() == cases.size());
    const auto a = grasp_eval(cases, *zero_motion_source()), b = grasp_eval(loaded, *zero_motion_source());
    CHECK(b.average_cm == doctest::Approx(a.average_cm).epsilon(1e-9));
    {
      std::ofstream out(tp);
      out.precision(17);
      const auto e = cases[0].wrist.rotation.euler();
      const auto& t = cases[0].wrist.translation;
      out << "{\"case\":\"grasp_0\",\"trial\":0,\"wrists\":[[" << t.x() << ',' << t.y() << ',' << t.z() << ',' << e.x()
          << ',' << e.y() << ',' << e.z() << "]],\"joints\":[[";
      for (int j = 0; j < 45; ++j) out << (j ? "," : "") << cases[0].joints[j];
      out << "]]}\n";
    }
    const auto r = grasp_eval({cases[0]}, *file_source(tp), 1);
    CHECK(r.cases[0].mean_m == doctest::Approx(0.20).epsilon(1e-4));
    const auto r2 = grasp_eval({cases[0]}, *file_source(tp), 2);
    CHECK(r2.failed_cases == 1);
    std::ofstream(p) << "{\"id\":\"x\"}\n";
    CHECK_THROWS_AS(load_grasp_cases(p), ParseError);
    std::filesystem::remove(p);
    std::filesystem::remove(tp);
  }
  CHECK_THROWS_AS(grasp_eval(cases, *zero_motion_source(), 0), std::invalid_argument);
}

TEST_CASE("median") {
  CHECK(median({3, 1, 2}) == 2.0);
  CHECK(median({4, 1, 3, 2}) == 2.5);
  CHECK(std::isnan(median({})));
  std::mt19937_64 rng(6);
  std::vector<double> v(31);
  for (double& x : v) x = std::uniform_real_distribution<double>(0, 1)(rng);
  const double m = median(v);
  for (int i = 0; i < 10; ++i) {
    std::shuffle(v.begin(), v.end(), rng);
    CHECK(median(v) == m);
  }
}
