#include "handvla/retarget.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <fstream>
#include <set>

#include "handvla/errors.hpp"
#include "json.hpp"

namespace handvla::retarget {

namespace {

constexpr double kPi = 3.14159265358979323846;

using Jac = Eigen::Matrix<double, 3, Eigen::Dynamic>;

Jac site_jacobian(const KinematicChain& chain, const FkResult& fk, int site) {
  Jac jac = Jac::Zero(3, chain.dof());
  const geom::Vec3& p = fk.sites[site];
  for (int j = chain.sites[site].joint; j >= 0; j = chain.joints[j].parent) {
    const geom::Pose& frame = fk.joints[j];
    jac.col(j) = (frame.rotation * chain.joints[j].axis).cross(p - frame.translation);
  }
  return jac;
}

struct Objective {
  const KinematicChain& chain;
  const std::vector<VectorTerm>& terms;
  std::vector<double> weights;
  Eigen::VectorXd q_prev;
  double alpha;
  double beta;
  std::vector<bool> free;

  double value(const Eigen::VectorXd& q) const {
    const FkResult fk = forward_kinematics(chain, q);
    double f = beta * (q - q_prev).squaredNorm();
    for (std::size_t i = 0; i < terms.size(); ++i) {
      const geom::Vec3 vr = fk.sites[terms[i].site_to] - fk.sites[terms[i].site_from];
      f += weights[i] * (alpha * terms[i].human - vr).squaredNorm();
    }
    return f;
  }

  Eigen::VectorXd gradient(const Eigen::VectorXd& q) const {
    const FkResult fk = forward_kinematics(chain, q);
    Eigen::VectorXd g = 2.0 * beta * (q - q_prev);
    for (std::size_t i = 0; i < terms.size(); ++i) {
      const geom::Vec3 vr = fk.sites[terms[i].site_to] - fk.sites[terms[i].site_from];
      const geom::Vec3 r = alpha * terms[i].human - vr;
      const Jac jv = site_jacobian(chain, fk, terms[i].site_to) - site_jacobian(chain, fk, terms[i].site_from);
      g -= 2.0 * weights[i] * (jv.transpose() * r);
    }
    for (int j = 0; j < g.size(); ++j)
      if (!free[j]) g[j] = 0.0;
    return g;
  }

  // 2 (sum w Jv^T Jv + beta I).
  Eigen::MatrixXd gauss_newton(const Eigen::VectorXd& q) const {
    const FkResult fk = forward_kinematics(chain, q);
    const int n = static_cast<int>(q.size());
    Eigen::MatrixXd h = 2.0 * beta * Eigen::MatrixXd::Identity(n, n);
    for (std::size_t i = 0; i < terms.size(); ++i) {
      const Jac jv = site_jacobian(chain, fk, terms[i].site_to) - site_jacobian(chain, fk, terms[i].site_from);
      h += 2.0 * weights[i] * (jv.transpose() * jv);
    }
    return h;
  }
};

Eigen::VectorXd lower_bounds(const KinematicChain& c) {
  Eigen::VectorXd v(c.dof());
  for (int j = 0; j < c.dof(); ++j) v[j] = c.joints[j].lower;
  return v;
}
Eigen::VectorXd upper_bounds(const KinematicChain& c) {
  Eigen::VectorXd v(c.dof());
  for (int j = 0; j < c.dof(); ++j) v[j] = c.joints[j].upper;
  return v;
}

int require_site(const KinematicChain& c, const std::string& name) {
  const int s = c.site_index(name);
  if (s < 0) throw ConfigError("chain has no site '" + name + "'");
  return s;
}

geom::Vec3 vec3(const nlohmann::json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }

}  // namespace

void RetargetConfig::validate() const {
  if (!(alpha > 0.0)) throw ConfigError("retarget alpha must be positive");
  if (!(beta >= 0.0)) throw ConfigError("retarget beta must be non-negative");
  if (!(s_near >= 1.0)) throw ConfigError("retarget s_near must be >= 1");
  if (!(d_eps >= 0.0)) throw ConfigError("retarget d_eps must be non-negative");
  if (!(tol > 0.0) || max_iters < 1) throw ConfigError("retarget tolerance and iteration cap must be positive");
}

double switching_weight(double d, const RetargetConfig& c) { return d < c.d_eps ? c.s_near : 1.0; }

SolveResult solve_vectors(const KinematicChain& chain, const std::vector<VectorTerm>& terms,
                          const Eigen::VectorXd& q_prev, const RetargetConfig& config, const std::vector<bool>& free) {
  config.validate();
  const int n = chain.dof();
  if (q_prev.size() != n) throw std::invalid_argument("solve_vectors: q_prev has the wrong size");
  if (!free.empty() && static_cast<int>(free.size()) != n) throw std::invalid_argument("solve_vectors: bad free mask");
  for (const auto& t : terms) {
    const int ns = static_cast<int>(chain.sites.size());
    if (t.site_from < 0 || t.site_from >= ns || t.site_to < 0 || t.site_to >= ns) {
      throw std::invalid_argument("solve_vectors: term references a missing site");
    }
  }
  const Eigen::VectorXd lo = lower_bounds(chain), hi = upper_bounds(chain);
  auto project = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd { return x.cwiseMax(lo).cwiseMin(hi); };

  Objective obj{chain, terms, {}, project(q_prev), config.alpha, config.beta, free.empty() ? std::vector<bool>(n, true) : free};
  for (const auto& t : terms) obj.weights.push_back(switching_weight(t.human.norm(), config));

  Eigen::VectorXd x = obj.q_prev;
  double f = obj.value(x);
  Eigen::VectorXd g = obj.gradient(x);
  SolveResult res;
  res.history.push_back(f);

  for (int it = 0; it < config.max_iters; ++it) {
    const double pg = (x - project(x - g)).norm();
    if (pg < config.tol) {
      res.converged = true;
      break;
    }
    std::vector<bool> active(n);
    for (int j = 0; j < n; ++j) {
      active[j] = !obj.free[j] || (x[j] <= lo[j] && g[j] > 0.0) || (x[j] >= hi[j] && g[j] < 0.0);
    }
    // Gauss-Newton model on the inactive set, lightly damped.
    Eigen::MatrixXd h = obj.gauss_newton(x);
    const double damp = 1e-9 * std::max(1.0, h.diagonal().maxCoeff());
    for (int j = 0; j < n; ++j) {
      if (!active[j]) {
        h(j, j) += damp;
        continue;
      }
      h.row(j).setZero();
      h.col(j).setZero();
      h(j, j) = 1.0;
    }
    Eigen::VectorXd gm = g;
    for (int j = 0; j < n; ++j)
      if (active[j]) gm[j] = 0.0;
    Eigen::VectorXd d = -h.ldlt().solve(gm);
    if (!d.allFinite() || g.dot(d) >= 0.0) d = -gm;
    if (d.norm() > 0.5) d *= 0.5 / d.norm();

    bool accepted = false;
    Eigen::VectorXd xn;
    double fn = f;
    double t = 1.0;
    for (int ls = 0; ls < 60; ++ls, t *= 0.5) {
      xn = project(x + t * d);
      const Eigen::VectorXd s = xn - x;
      if (s.squaredNorm() == 0.0) break;
      fn = obj.value(xn);
      if (fn <= f + 1e-4 * g.dot(s) && fn < f) {
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    x = xn;
    f = fn;
    g = obj.gradient(x);
    res.history.push_back(f);
    res.iterations = it + 1;
  }
  if (!res.converged) res.converged = (x - project(x - g)).norm() < config.tol;
  res.q = x;
  res.objective = f;
  return res;
}

std::vector<std::pair<int, int>> dexpilot_pairs(const KinematicChain& chain) {
  const int wrist = require_site(chain, "wrist");
  std::array<int, 5> tips{};
  for (int i = 0; i < 5; ++i) tips[i] = require_site(chain, std::string(kFingers[i]) + "_tip");
  std::vector<std::pair<int, int>> out;
  for (int i = 0; i < 5; ++i) out.emplace_back(wrist, tips[i]);
  for (int i = 0; i < 5; ++i)
    for (int j = i + 1; j < 5; ++j) out.emplace_back(tips[i], tips[j]);
  return out;
}

std::vector<geom::Vec3> dexpilot_vectors(const GloveKeypoints& k) {
  const int tips[5] = {4, 8, 12, 16, 20};
  std::vector<geom::Vec3> out;
  for (int t : tips) out.push_back(k[t] - k[0]);
  for (int i = 0; i < 5; ++i)
    for (int j = i + 1; j < 5; ++j) out.push_back(k[tips[j]] - k[tips[i]]);
  return out;
}

SolveResult dexpilot_solve(const KinematicChain& chain, const std::vector<geom::Vec3>& human,
                           const Eigen::VectorXd& q_prev, const RetargetConfig& config) {
  const auto pairs = dexpilot_pairs(chain);
  if (human.size() != pairs.size()) throw std::invalid_argument("dexpilot_solve: expected 15 human vectors");
  std::vector<VectorTerm> terms;
  for (std::size_t i = 0; i < pairs.size(); ++i) terms.push_back({pairs[i].first, pairs[i].second, human[i]});
  return solve_vectors(chain, terms, q_prev, config);
}

double bone_angle(const geom::Vec3& a, const geom::Vec3& b, const geom::Vec3& c, const geom::Vec3& ref) {
  const geom::Vec3 u = a - b, v = c - b;
  const double nu = u.norm(), nv = v.norm();
  if (!(nu > 1e-9) || !(nv > 1e-9)) throw DegenerateKeypointError("bone shorter than 1e-9 m");
  const double theta = std::acos(std::clamp(u.dot(v) / (nu * nv), -1.0, 1.0));
  return u.cross(v).dot(ref) < 0.0 ? -theta : theta;
}

double angle_match_map(double theta_h, const AngleRange& r) {
  if (!(r.human_max > r.human_min)) throw std::invalid_argument("angle_match_map: human range is empty or inverted");
  const double t = (theta_h - r.human_min) / (r.human_max - r.human_min);
  const double out = t * (r.robot_max - r.robot_min) + r.robot_min;
  return std::clamp(out, std::min(r.robot_min, r.robot_max), std::max(r.robot_min, r.robot_max));
}

AngleMatchConfig load_angle_match(const std::filesystem::path& path, const KinematicChain& chain) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open angle-match config " + path.string());
  AngleMatchConfig cfg;
  try {
    const auto j = nlohmann::json::parse(in);
    for (const auto& e : j.at("joints")) {
      AngleJoint a;
      a.robot_joint = e.at("robot").get<std::string>();
      a.triplet = e.at("triplet").get<std::array<int, 3>>();
      if (e.contains("reference")) a.reference = vec3(e.at("reference"));
      a.unwrap = e.value("unwrap", false);
      a.range.human_min = e.at("human").at(0).get<double>();
      a.range.human_max = e.at("human").at(1).get<double>();
      a.range.robot_min = e.at("robot_range").at(0).get<double>();
      a.range.robot_max = e.at("robot_range").at(1).get<double>();
      if (chain.joint_index(a.robot_joint) < 0) throw ConfigError("unknown robot joint '" + a.robot_joint + "'");
      for (int t : a.triplet)
        if (t < 0 || t >= 21) throw ConfigError("keypoint index out of range for '" + a.robot_joint + "'");
      if (!(a.range.human_max > a.range.human_min)) throw ConfigError("inverted human range for '" + a.robot_joint + "'");
      cfg.joints.push_back(a);
    }
    cfg.lateral_joints = j.at("lateral").get<std::vector<std::string>>();
    for (const auto& name : cfg.lateral_joints)
      if (chain.joint_index(name) < 0) throw ConfigError("unknown lateral joint '" + name + "'");
    if (j.contains("solver")) {
      const auto& s = j.at("solver");
      cfg.solver.alpha = s.value("alpha", cfg.solver.alpha);
      cfg.solver.beta = s.value("beta", cfg.solver.beta);
      cfg.solver.s_near = s.value("s_near", cfg.solver.s_near);
      cfg.solver.d_eps = s.value("d_eps", cfg.solver.d_eps);
      cfg.solver.tol = s.value("tol", cfg.solver.tol);
      cfg.solver.max_iters = s.value("max_iters", cfg.solver.max_iters);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("angle-match config: ") + e.what());
  }
  cfg.solver.validate();
  return cfg;
}

SolveResult angle_match_solve(const KinematicChain& chain, const GloveKeypoints& k, const Eigen::VectorXd& q_prev,
                              const AngleMatchConfig& config) {
  if (q_prev.size() != chain.dof()) throw std::invalid_argument("angle_match_solve: q_prev has the wrong size");
  Eigen::VectorXd q0 = q_prev.cwiseMax(lower_bounds(chain)).cwiseMin(upper_bounds(chain));
  for (const auto& a : config.joints) {
    const int idx = chain.joint_index(a.robot_joint);
    if (idx < 0) throw ConfigError("unknown robot joint '" + a.robot_joint + "'");
    double th = bone_angle(k[a.triplet[0]], k[a.triplet[1]], k[a.triplet[2]], a.reference);
    if (a.unwrap && th < 0.0) th += 2.0 * kPi;
    q0[idx] = angle_match_map(th, a.range);
  }
  std::vector<bool> free(chain.dof(), false);
  for (const auto& name : config.lateral_joints) {
    const int idx = chain.joint_index(name);
    if (idx < 0) throw ConfigError("unknown lateral joint '" + name + "'");
    free[idx] = true;
  }
  const std::vector<VectorTerm> terms{
      {require_site(chain, "wrist"), require_site(chain, "thumb_tip"), k[4] - k[0]},
      {require_site(chain, "index_root"), require_site(chain, "index_tip"), k[8] - k[5]},
  };
  return solve_vectors(chain, terms, q0, config.solver, free);
}

void JointMap::validate() const {
  std::set<std::string> robots;
  std::set<int> dims;
  for (const auto& [robot, dim] : pairs) {
    if (dim < 0 || dim >= 45) throw ConfigError("joint map index " + std::to_string(dim) + " outside [0, 45)");
    if (!robots.insert(robot).second) throw ConfigError("joint map repeats robot joint '" + robot + "'");
    if (!dims.insert(dim).second) throw ConfigError("joint map repeats dim " + std::to_string(dim));
  }
}

std::array<bool, 45> JointMap::live() const {
  validate();
  std::array<bool, 45> out{};
  for (const auto& p : pairs) out[p.second] = true;
  return out;
}

std::vector<int> JointMap::unmapped() const {
  const auto l = live();
  std::vector<int> out;
  for (int d = 0; d < 45; ++d)
    if (!l[d]) out.push_back(d);
  return out;
}

JointMap load_joint_map(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open joint map " + path.string());
  JointMap m;
  try {
    const auto j = nlohmann::json::parse(in);
    for (const auto& p : j.at("pairs")) m.pairs.emplace_back(p.at("robot").get<std::string>(), p.at("theta").get<int>());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("joint map: ") + e.what());
  }
  m.validate();
  return m;
}

RobotCommand map_human_action(const JointAngles& theta, const JointMap& map) {
  map.validate();
  RobotCommand out;
  for (const auto& [robot, dim] : map.pairs) {
    out.q.push_back(theta[dim]);
    out.mask[dim] = 1;
  }
  return out;
}

}  // namespace handvla::retarget
