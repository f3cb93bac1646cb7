#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>

#include "handvla/errors.hpp"
#include "handvla/hash.hpp"
#include "handvla/kernels.hpp"
#include "handvla/metrics.hpp"
#include "json.hpp"

namespace handvla::metrics {

namespace {

const retarget::KinematicChain& hand_chain(Hand h) {
  static const retarget::KinematicChain right = retarget::mano15(Hand::Right);
  static const retarget::KinematicChain left = retarget::mano15(Hand::Left);
  return h == Hand::Left ? left : right;
}

std::vector<int> site_indices(const retarget::KinematicChain& chain, const std::vector<std::string>& names) {
  std::vector<int> out;
  for (const auto& n : names) {
    const int s = chain.site_index(n);
    if (s < 0) throw std::invalid_argument("chain has no site '" + n + "'");
    out.push_back(s);
  }
  return out;
}

geom::Vec3 vec3(const nlohmann::json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }
nlohmann::json json3(const geom::Vec3& v) { return {v.x(), v.y(), v.z()}; }

geom::Pose pose6(const nlohmann::json& j) {
  return {geom::Rotation::from_euler({j.at(3).get<double>(), j.at(4).get<double>(), j.at(5).get<double>()}),
          {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}};
}

class ZeroMotion : public TrajectorySource {
 public:
  explicit ZeroMotion(int steps) : steps_(steps) {}
  HandTrajectory generate(const GraspCase& c, int, std::uint64_t) override {
    return {std::vector<geom::Pose>(steps_, c.wrist), std::vector<JointAngles>(steps_, c.joints)};
  }

 private:
  int steps_;
};

class Touch : public TrajectorySource {
 public:
  explicit Touch(int steps) : steps_(steps) {}
  HandTrajectory generate(const GraspCase& c, int, std::uint64_t) override {
    const auto& chain = hand_chain(c.hand);
    const auto tips = fingertips(chain, c.wrist, c.joints, site_indices(chain, c.tip_sites));
    double best = std::numeric_limits<double>::infinity();
    geom::Vec3 shift = geom::Vec3::Zero();
    for (const auto& t : tips) {
      for (const auto& p : c.cloud) {
        const double d = (p - t).norm();
        if (d < best) {
          best = d;
          shift = p - t;
        }
      }
    }
    HandTrajectory out;
    for (int k = 0; k < steps_; ++k) {
      geom::Pose w = c.wrist;
      w.translation += shift * (steps_ > 1 ? static_cast<double>(k) / (steps_ - 1) : 1.0);
      out.wrists.push_back(w);
      out.joints.push_back(c.joints);
    }
    return out;
  }

 private:
  int steps_;
};

class FromFile : public TrajectorySource {
 public:
  explicit FromFile(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open trajectories " + path.string());
    std::string text;
    std::size_t line = 0;
    while (std::getline(in, text)) {
      ++line;
      if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        const auto j = nlohmann::json::parse(text);
        HandTrajectory t;
        for (const auto& w : j.at("wrists")) t.wrists.push_back(pose6(w));
        for (const auto& q : j.at("joints")) t.joints.push_back(q.get<JointAngles>());
        data_[{j.at("case").get<std::string>(), j.at("trial").get<int>()}] = std::move(t);
      } catch (const nlohmann::json::exception& e) {
        throw ParseError(line, e.what());
      }
    }
  }
  HandTrajectory generate(const GraspCase& c, int trial, std::uint64_t) override {
    auto it = data_.find({c.id, trial});
    if (it == data_.end()) throw std::runtime_error("no trajectory for case " + c.id + " trial " + std::to_string(trial));
    return it->second;
  }

 private:
  std::map<std::pair<std::string, int>, HandTrajectory> data_;
};

}  // namespace

std::vector<geom::Vec3> fingertips(const retarget::KinematicChain& chain, const geom::Pose& wrist,
                                   const JointAngles& joints, const std::vector<int>& sites) {
  if (chain.dof() != 45) throw std::invalid_argument("fingertips: chain must have 45 DoF");
  const auto fk = retarget::forward_kinematics(chain, Eigen::Map<const Eigen::VectorXd>(joints.data(), 45));
  std::vector<geom::Vec3> out;
  for (int s : sites) out.push_back(wrist * fk.sites.at(static_cast<std::size_t>(s)));
  return out;
}

double hand_object_distance(const retarget::KinematicChain& chain, const HandTrajectory& tr,
                            const std::vector<geom::Vec3>& cloud, const std::vector<std::string>& tip_sites) {
  if (cloud.empty()) throw std::invalid_argument("hand_object_distance: empty object cloud");
  if (tr.wrists.empty() || tr.wrists.size() != tr.joints.size()) {
    throw std::invalid_argument("hand_object_distance: wrist and joint sequences must be non-empty and aligned");
  }
  const auto sites = site_indices(chain, tip_sites);
  std::vector<geom::Vec3> points;
  for (std::size_t k = 0; k < tr.wrists.size(); ++k) {
    const auto tips = fingertips(chain, tr.wrists[k], tr.joints[k], sites);
    points.insert(points.end(), tips.begin(), tips.end());
  }
  return kernels::min_distance_omp(points, cloud);
}

std::vector<GraspCase> load_grasp_cases(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open grasp cases " + path.string());
  std::vector<GraspCase> out;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(text);
      GraspCase c;
      c.id = j.at("id").get<std::string>();
      c.image = j.value("image", "");
      c.instruction = j.value("instruction", "");
      c.hand = parse_hand(j.value("hand", "right"));
      for (const auto& p : j.at("cloud")) c.cloud.push_back(vec3(p));
      if (c.cloud.empty()) throw ParseError(line, "case " + c.id + " has no object points");
      c.wrist = {geom::Rotation::from_euler(vec3(j.at("wrist").at("euler"))), vec3(j.at("wrist").at("xyz"))};
      c.joints = j.at("joints").get<JointAngles>();
      if (j.contains("tips")) c.tip_sites = j.at("tips").get<std::vector<std::string>>();
      out.push_back(std::move(c));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(line, e.what());
    } catch (const std::invalid_argument& e) {
      throw ParseError(line, e.what());
    }
  }
  return out;
}

void save_grasp_cases(const std::filesystem::path& path, const std::vector<GraspCase>& cases) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& c : cases) {
    nlohmann::json cloud = nlohmann::json::array();
    for (const auto& p : c.cloud) cloud.push_back(json3(p));
    out << nlohmann::json{{"id", c.id},
                          {"image", c.image},
                          {"instruction", c.instruction},
                          {"hand", std::string(to_string(c.hand))},
                          {"cloud", cloud},
                          {"wrist", {{"xyz", json3(c.wrist.translation)}, {"euler", json3(c.wrist.rotation.euler())}}},
                          {"joints", c.joints},
                          {"tips", c.tip_sites}}
               .dump()
        << '\n';
  }
}

std::vector<GraspCase> make_grasp_fixtures(int n, std::uint64_t seed, double distance) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uni = [&](double a, double b) { return a + (b - a) * u01(rng); };
  static const char* objects[] = {"cup", "bottle", "box", "bowl", "can", "sponge"};
  std::vector<GraspCase> out;
  for (int i = 0; i < n; ++i) {
    GraspCase c;
    c.id = "grasp_" + std::to_string(i);
    c.hand = u01(rng) < 0.5 ? Hand::Left : Hand::Right;
    c.instruction = std::string("grasp the ") + objects[i % 6];
    c.image = c.id + ".png";
    const geom::Vec3 centre(uni(-0.15, 0.15), uni(-0.1, 0.1), uni(0.5, 0.8));
    const double radius = uni(0.03, 0.06);
    std::normal_distribution<double> g(0.0, 1.0);
    for (int k = 0; k < 200; ++k) {
      geom::Vec3 d(g(rng), g(rng), g(rng));
      c.cloud.push_back(centre + radius * d.normalized());
    }
    for (int j = 0; j < 45; ++j) c.joints[j] = j % 3 == 1 ? uni(0.0, 0.6) : uni(-0.1, 0.1);
    c.wrist.rotation = geom::Rotation::from_euler({uni(-0.5, 0.5), uni(-0.5, 0.5), uni(-3.14, 3.14)});

    // Slide the hand from the object toward the camera until the nearest fingertip
    // sits `distance` away; the index tip starts at the object centre.
    const auto& chain = hand_chain(c.hand);
    const auto sites = site_indices(chain, c.tip_sites);
    const geom::Vec3 index_local =
        geom::Pose{c.wrist.rotation, geom::Vec3::Zero()} *
        fingertips(chain, geom::Pose::identity(), c.joints, {chain.site_index("index_tip")})[0];
    const geom::Vec3 dir = -centre.normalized();
    auto gap = [&](double s) {
      geom::Pose w = c.wrist;
      w.translation = centre - index_local + s * dir;
      return kernels::min_distance_serial(fingertips(chain, w, c.joints, sites), c.cloud) - distance;
    };
    // Last sign change on a coarse scan, then bisection.
    double lo = 0.0;
    for (double s = 0.0; s <= 1.0; s += 0.005)
      if (gap(s) <= 0.0) lo = s;
    double hi = lo + 0.005;
    for (int it = 0; it < 80; ++it) {
      const double mid = 0.5 * (lo + hi);
      (gap(mid) <= 0.0 ? lo : hi) = mid;
    }
    c.wrist.translation = centre - index_local + hi * dir;
    out.push_back(std::move(c));
  }
  return out;
}

std::unique_ptr<TrajectorySource> zero_motion_source(int steps) { return std::make_unique<ZeroMotion>(steps); }
std::unique_ptr<TrajectorySource> touch_source(int steps) { return std::make_unique<Touch>(steps); }
std::unique_ptr<TrajectorySource> file_source(const std::filesystem::path& path) {
  return std::make_unique<FromFile>(path);
}

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

GraspReport grasp_eval(const std::vector<GraspCase>& cases, TrajectorySource& source, int trials, std::uint64_t seed) {
  if (trials < 1) throw std::invalid_argument("grasp_eval: trials must be >= 1");
  GraspReport r;
  std::vector<double> means;
  for (const auto& c : cases) {
    CaseResult cr;
    cr.id = c.id;
    try {
      const auto& chain = hand_chain(c.hand);
      for (int t = 0; t < trials; ++t) {
        const std::uint64_t trial_seed = seed ^ (fnv1a(c.id) + 0x9e3779b97f4a7c15ull * (t + 1));
        cr.trial_m.push_back(hand_object_distance(chain, source.generate(c, t, trial_seed), c.cloud, c.tip_sites));
      }
      double sum = 0.0;
      for (double d : cr.trial_m) sum += d;
      cr.mean_m = sum / trials;
      means.push_back(cr.mean_m);
    } catch (const std::exception& e) {
      cr.failed = true;
      cr.error = e.what();
      ++r.failed_cases;
    }
    r.cases.push_back(std::move(cr));
  }
  if (means.empty()) {
    r.average_cm = r.median_cm = std::numeric_limits<double>::quiet_NaN();
  } else {
    double sum = 0.0;
    for (double m : means) sum += m;
    r.average_cm = 100.0 * sum / static_cast<double>(means.size());
    r.median_cm = 100.0 * median(means);
  }
  return r;
}

std::string report_table(const GraspReport& r) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(1);
  os << "case                      d_hand-obj (cm)\n";
  for (const auto& c : r.cases) {
    os << std::left << std::setw(26) << c.id;
    if (c.failed) {
      os << "FAILED (" << c.error << ")\n";
    } else {
      os << 100.0 * c.mean_m << '\n';
    }
  }
  os << "avg " << r.average_cm << " cm, med " << r.median_cm << " cm, failed cases " << r.failed_cases << '\n';
  return os.str();
}

std::string report_json(const GraspReport& r) {
  nlohmann::json cases = nlohmann::json::array();
  for (const auto& c : r.cases) {
    nlohmann::json j{{"id", c.id}, {"failed", c.failed}};
    if (c.failed) {
      j["error"] = c.error;
    } else {
      j["trials_m"] = c.trial_m;
      j["mean_cm"] = 100.0 * c.mean_m;
    }
    cases.push_back(j);
  }
  auto num = [](double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); };
  return nlohmann::json{{"average_cm", num(r.average_cm)},
                        {"median_cm", num(r.median_cm)},
                        {"failed_cases", r.failed_cases},
                        {"cases", cases}}
      .dump();
}

}  // namespace handvla::metrics
