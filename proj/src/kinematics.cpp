#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "handvla/errors.hpp"
#include "handvla/retarget.hpp"
#include "json.hpp"

namespace handvla::retarget {

int KinematicChain::joint_index(const std::string& name) const {
  for (int i = 0; i < dof(); ++i)
    if (joints[i].name == name) return i;
  return -1;
}

int KinematicChain::site_index(const std::string& name) const {
  for (int i = 0; i < static_cast<int>(sites.size()); ++i)
    if (sites[i].name == name) return i;
  return -1;
}

bool KinematicChain::is_ancestor(int joint, int of) const {
  for (int j = of; j >= 0; j = joints[j].parent)
    if (j == joint) return true;
  return false;
}

void KinematicChain::validate() const {
  std::set<std::string> names;
  for (int i = 0; i < dof(); ++i) {
    const auto& j = joints[i];
    if (!names.insert(j.name).second) throw ConfigError("duplicate joint name '" + j.name + "'");
    if (j.parent < -1 || j.parent >= i) throw ConfigError("joint '" + j.name + "' must follow its parent");
    if (std::abs(j.axis.norm() - 1.0) > 1e-9) throw ConfigError("joint '" + j.name + "' axis is not unit length");
    if (!(j.lower <= j.upper)) throw ConfigError("joint '" + j.name + "' has inverted limits");
  }
  std::set<std::string> site_names;
  for (const auto& s : sites) {
    if (!site_names.insert(s.name).second) throw ConfigError("duplicate site name '" + s.name + "'");
    if (s.joint < -1 || s.joint >= dof()) throw ConfigError("site '" + s.name + "' references a missing joint");
  }
}

namespace {

geom::Vec3 vec3(const nlohmann::json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }
nlohmann::json json3(const geom::Vec3& v) { return {v.x(), v.y(), v.z()}; }

}  // namespace

KinematicChain parse_chain(const std::string& text) {
  KinematicChain c;
  try {
    const auto j = nlohmann::json::parse(text);
    for (const auto& jj : j.at("joints")) {
      Joint joint;
      joint.name = jj.at("name").get<std::string>();
      if (jj.contains("parent") && !jj.at("parent").is_null()) {
        const auto p = jj.at("parent").get<std::string>();
        joint.parent = c.joint_index(p);
        if (joint.parent < 0) throw ConfigError("joint '" + joint.name + "' has unknown parent '" + p + "'");
      }
      joint.offset.translation = jj.contains("xyz") ? vec3(jj.at("xyz")) : geom::Vec3::Zero();
      if (jj.contains("euler")) joint.offset.rotation = geom::Rotation::from_euler(vec3(jj.at("euler")));
      joint.axis = vec3(jj.at("axis"));
      if (!(joint.axis.norm() > 0.0)) throw ConfigError("joint '" + joint.name + "' has a zero axis");
      joint.axis.normalize();
      joint.lower = jj.at("limits").at(0).get<double>();
      joint.upper = jj.at("limits").at(1).get<double>();
      c.joints.push_back(std::move(joint));
    }
    for (const auto& sj : j.at("sites")) {
      Site s;
      s.name = sj.at("name").get<std::string>();
      if (sj.contains("joint") && !sj.at("joint").is_null()) {
        const auto p = sj.at("joint").get<std::string>();
        s.joint = c.joint_index(p);
        if (s.joint < 0) throw ConfigError("site '" + s.name + "' has unknown joint '" + p + "'");
      }
      s.offset = sj.contains("xyz") ? vec3(sj.at("xyz")) : geom::Vec3::Zero();
      c.sites.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("chain config: ") + e.what());
  }
  c.validate();
  return c;
}

KinematicChain load_chain(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open chain config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_chain(ss.str());
}

std::string chain_to_json(const KinematicChain& c) {
  nlohmann::json joints = nlohmann::json::array(), sites = nlohmann::json::array();
  for (const auto& j : c.joints) {
    joints.push_back({{"name", j.name},
                      {"parent", j.parent < 0 ? nlohmann::json(nullptr) : nlohmann::json(c.joints[j.parent].name)},
                      {"xyz", json3(j.offset.translation)},
                      {"euler", json3(j.offset.rotation.euler())},
                      {"axis", json3(j.axis)},
                      {"limits", {j.lower, j.upper}}});
  }
  for (const auto& s : c.sites) {
    sites.push_back({{"name", s.name},
                     {"joint", s.joint < 0 ? nlohmann::json(nullptr) : nlohmann::json(c.joints[s.joint].name)},
                     {"xyz", json3(s.offset)}});
  }
  return nlohmann::json{{"joints", joints}, {"sites", sites}}.dump(1);
}

FkResult forward_kinematics(const KinematicChain& chain, const Eigen::VectorXd& q) {
  if (q.size() != chain.dof()) {
    throw std::invalid_argument("forward_kinematics: expected " + std::to_string(chain.dof()) + " joint values, got " +
                                std::to_string(q.size()));
  }
  FkResult r;
  r.joints.resize(chain.joints.size());
  for (int i = 0; i < chain.dof(); ++i) {
    const Joint& j = chain.joints[i];
    double qi = q[i];
    if (qi < j.lower || qi > j.upper) {
      qi = std::clamp(qi, j.lower, j.upper);
      r.clamped = true;
    }
    const geom::Pose parent = j.parent < 0 ? geom::Pose::identity() : r.joints[j.parent];
    const geom::Pose rot{geom::Rotation::from_axis_angle(j.axis, qi), geom::Vec3::Zero()};
    r.joints[i] = parent * j.offset * rot;
  }
  for (const auto& s : chain.sites) r.sites.push_back(s.joint < 0 ? s.offset : r.joints[s.joint] * s.offset);
  return r;
}

Eigen::Matrix<double, 3, Eigen::Dynamic> fk_jacobian(const KinematicChain& chain, const Eigen::VectorXd& q, int site) {
  if (site < 0 || site >= static_cast<int>(chain.sites.size())) throw std::invalid_argument("fk_jacobian: bad site");
  const FkResult fk = forward_kinematics(chain, q);
  Eigen::Matrix<double, 3, Eigen::Dynamic> jac = Eigen::Matrix<double, 3, Eigen::Dynamic>::Zero(3, chain.dof());
  const int owner = chain.sites[site].joint;
  const geom::Vec3& p = fk.sites[site];
  for (int j = owner; j >= 0; j = chain.joints[j].parent) {
    // The joint rotation does not move its own origin or axis.
    const geom::Pose& frame = fk.joints[j];
    const geom::Vec3 axis = frame.rotation * chain.joints[j].axis;
    jac.col(j) = axis.cross(p - frame.translation);
  }
  return jac;
}

MirroredChain mirror_chain(const KinematicChain& chain) {
  const geom::Mat3 m = geom::Vec3(-1.0, 1.0, 1.0).asDiagonal();
  MirroredChain out;
  out.chain = chain;
  out.angle_sign.assign(chain.joints.size(), 1);
  for (std::size_t i = 0; i < chain.joints.size(); ++i) {
    const Joint& src = chain.joints[i];
    Joint& dst = out.chain.joints[i];
    dst.offset.rotation = geom::Rotation::from_matrix(m * src.offset.rotation.matrix() * m, 1e-9);
    dst.offset.translation = m * src.offset.translation;
    // M Rot(a, q) M = Rot(-M a, q) = Rot(M a, -q).
    const geom::Vec3 keep = -(m * src.axis);
    if (keep.dot(src.axis) >= 0.0) {
      dst.axis = keep;
    } else {
      dst.axis = m * src.axis;
      dst.lower = -src.upper;
      dst.upper = -src.lower;
      out.angle_sign[i] = -1;
    }
  }
  for (auto& s : out.chain.sites) s.offset = m * s.offset;
  return out;
}

}  // namespace handvla::retarget
