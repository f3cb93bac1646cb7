#include <cmath>

#include "handvla/retarget.hpp"

namespace handvla::retarget {

namespace {

constexpr double kPi = 3.14159265358979323846;

struct FingerGeometry {
  const char* name;
  geom::Vec3 root;
  double yaw;
  std::array<double, 3> lengths;  // root->knuckle 2, knuckle 2->3, knuckle 3->tip
};

// Wrist frame: +x toward the fingers, +y toward the thumb (right hand), +z dorsal.
// Listed in joint-angle layout order.
const std::array<FingerGeometry, 5>& mano_fingers() {
  static const std::array<FingerGeometry, 5> f{{
      {"index", {0.090, 0.025, 0.0}, 0.05, {0.040, 0.025, 0.020}},
      {"middle", {0.095, 0.000, 0.0}, 0.0, {0.045, 0.028, 0.022}},
      {"little", {0.080, -0.040, 0.0}, -0.10, {0.030, 0.020, 0.018}},
      {"ring", {0.090, -0.020, 0.0}, -0.05, {0.042, 0.026, 0.020}},
      {"thumb", {0.025, 0.020, -0.010}, 0.80, {0.035, 0.030, 0.025}},
  }};
  return f;
}

geom::Pose at(const geom::Vec3& t, double yaw = 0.0) {
  return {geom::Rotation::from_axis_angle(geom::Vec3::UnitZ(), yaw), t};
}

int add_joint(KinematicChain& c, std::string name, int parent, const geom::Pose& offset, const geom::Vec3& axis,
              double lo, double hi) {
  c.joints.push_back({std::move(name), parent, offset, axis, lo, hi});
  return c.dof() - 1;
}

}  // namespace

KinematicChain mano15(Hand hand) {
  KinematicChain c;
  c.sites.push_back({"wrist", -1, geom::Vec3::Zero()});
  const char axes[3] = {'x', 'y', 'z'};
  for (const auto& f : mano_fingers()) {
    int parent = -1;
    for (int j = 0; j < 3; ++j) {
      const geom::Pose offset = j == 0 ? at(f.root, f.yaw) : at({f.lengths[j - 1], 0.0, 0.0});
      for (int a = 0; a < 3; ++a) {
        const std::string name = std::string(f.name) + std::to_string(j + 1) + "_" + axes[a];
        parent = add_joint(c, name, parent, a == 0 ? offset : geom::Pose::identity(), geom::Vec3::Unit(a), -kPi / 2,
                           kPi / 2);
      }
    }
    c.sites.push_back({std::string(f.name) + "_tip", parent, {f.lengths[2], 0.0, 0.0}});
  }
  c.validate();
  if (hand == Hand::Left) return mirror_chain(c).chain;
  return c;
}

GloveKeypoints keypoints_from_mano(const JointAngles& theta, Hand hand) {
  const KinematicChain c = mano15(hand);
  const FkResult fk = forward_kinematics(c, Eigen::Map<const Eigen::VectorXd>(theta.data(), 45));
  GloveKeypoints k;
  k[0] = fk.sites[0];
  // Glove order is thumb, index, middle, ring, little; layout slots are index, middle, little, ring, thumb.
  const int slot_of[5] = {4, 0, 1, 3, 2};
  for (int g = 0; g < 5; ++g) {
    const int slot = slot_of[g];
    for (int j = 0; j < 3; ++j) k[1 + 4 * g + j] = fk.joints[slot * 9 + j * 3].translation;
    k[4 + 4 * g] = fk.sites[c.site_index(std::string(kFingers[g]) + "_tip")];
  }
  return k;
}

KinematicChain xhand12() {
  KinematicChain c;
  const geom::Vec3 y = geom::Vec3::UnitY(), z = geom::Vec3::UnitZ();
  int j = add_joint(c, "thumb_abd", -1, at({0.025, 0.020, -0.010}, 0.80), z, -0.30, 1.20);
  j = add_joint(c, "thumb_flex1", j, at({0.035, 0.0, 0.0}), y, -0.20, 1.60);
  j = add_joint(c, "thumb_flex2", j, at({0.030, 0.0, 0.0}), y, 0.0, 1.60);
  c.sites.push_back({"thumb_tip", j, {0.025, 0.0, 0.0}});

  j = add_joint(c, "index_abd", -1, at({0.090, 0.025, 0.0}, 0.05), z, -0.35, 0.35);
  j = add_joint(c, "index_flex1", j, geom::Pose::identity(), y, 0.0, 1.60);
  j = add_joint(c, "index_flex2", j, at({0.040, 0.0, 0.0}), y, 0.0, 1.60);
  c.sites.push_back({"index_tip", j, {0.045, 0.0, 0.0}});

  struct Two {
    const char* name;
    geom::Vec3 root;
    double yaw, l1, tip;
  };
  for (const Two& f : {Two{"middle", {0.095, 0.0, 0.0}, 0.0, 0.045, 0.050},
                       Two{"ring", {0.090, -0.020, 0.0}, -0.05, 0.042, 0.046},
                       Two{"little", {0.080, -0.040, 0.0}, -0.10, 0.030, 0.038}}) {
    j = add_joint(c, std::string(f.name) + "_flex1", -1, at(f.root, f.yaw), y, 0.0, 1.60);
    j = add_joint(c, std::string(f.name) + "_flex2", j, at({f.l1, 0.0, 0.0}), y, 0.0, 1.60);
    c.sites.push_back({std::string(f.name) + "_tip", j, {f.tip, 0.0, 0.0}});
  }
  c.sites.push_back({"wrist", -1, geom::Vec3::Zero()});
  c.sites.push_back({"index_root", -1, {0.090, 0.025, 0.0}});
  c.validate();
  return c;
}

JointMap xhand12_joint_map() {
  // Joint-angle dim = (layout joint) * 3 + axis; y is flexion, z is abduction.
  return {{{"thumb_abd", 38},
           {"thumb_flex1", 40},
           {"thumb_flex2", 43},
           {"index_abd", 2},
           {"index_flex1", 1},
           {"index_flex2", 4},
           {"middle_flex1", 10},
           {"middle_flex2", 13},
           {"ring_flex1", 28},
           {"ring_flex2", 31},
           {"little_flex1", 19},
           {"little_flex2", 22}}};
}

AngleMatchConfig default_angle_match(const KinematicChain& xhand) {
  AngleMatchConfig cfg;
  struct Row {
    const char* joint;
    std::array<int, 3> triplet;
  };
  const Row rows[] = {{"thumb_flex1", {1, 2, 3}},  {"thumb_flex2", {2, 3, 4}},   {"index_flex1", {0, 5, 6}},
                      {"index_flex2", {5, 6, 7}},  {"middle_flex1", {0, 9, 10}}, {"middle_flex2", {9, 10, 11}},
                      {"ring_flex1", {0, 13, 14}}, {"ring_flex2", {13, 14, 15}}, {"little_flex1", {0, 17, 18}},
                      {"little_flex2", {17, 18, 19}}};
  for (const Row& r : rows) {
    const int idx = xhand.joint_index(r.joint);
    if (idx < 0) continue;
    const Joint& jt = xhand.joints[idx];
    AngleJoint a;
    a.robot_joint = r.joint;
    a.triplet = r.triplet;
    a.reference = -geom::Vec3::UnitY();
    a.unwrap = true;
    // A straight finger reads pi and maps to the lower limit.
    a.range = {kPi - jt.upper, kPi - jt.lower, jt.upper, jt.lower};
    cfg.joints.push_back(a);
  }
  cfg.lateral_joints = {"thumb_abd", "index_abd"};
  return cfg;
}

}  // namespace handvla::retarget
