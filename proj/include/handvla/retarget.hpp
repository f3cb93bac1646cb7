#pragma once

#include <Eigen/Core>
#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "handvla/geom.hpp"
#include "handvla/tracks.hpp"

namespace handvla::retarget {

// Joint j moves with T_j = T_parent(j) * offset_j * Rot(axis_j, q_j).
struct Joint {
  std::string name;
  int parent = -1;  // -1 is the chain base; otherwise < own index
  geom::Pose offset;
  geom::Vec3 axis = geom::Vec3::UnitZ();
  double lower = -3.14159265358979323846;
  double upper = 3.14159265358979323846;
};

struct Site {
  std::string name;
  int joint = -1;  // -1 attaches to the base
  geom::Vec3 offset = geom::Vec3::Zero();
};

struct KinematicChain {
  std::vector<Joint> joints;
  std::vector<Site> sites;

  int dof() const { return static_cast<int>(joints.size()); }
  // -1 when absent.
  int joint_index(const std::string& name) const;
  int site_index(const std::string& name) const;
  // Throws ConfigError on forward parent references, non-unit axes, inverted limits or duplicate names.
  void validate() const;
  bool is_ancestor(int joint, int of_joint) const;  // joint == of_joint counts
};

// {"joints":[{"name","parent":name|null,"xyz":[3],"euler":[3],"axis":[3],"limits":[lo,hi]}],
//  "sites":[{"name","joint":name|null,"xyz":[3]}]}
KinematicChain load_chain(const std::filesystem::path& path);
KinematicChain parse_chain(const std::string& json_text);
std::string chain_to_json(const KinematicChain& chain);

struct FkResult {
  std::vector<geom::Pose> joints;  // frame after the joint rotation
  std::vector<geom::Vec3> sites;
  bool clamped = false;  // q was outside the limits and got clamped
};

// Throws std::invalid_argument when q.size() != dof.
FkResult forward_kinematics(const KinematicChain& chain, const Eigen::VectorXd& q);

// 3 x dof position Jacobian of one site.
Eigen::Matrix<double, 3, Eigen::Dynamic> fk_jacobian(const KinematicChain& chain, const Eigen::VectorXd& q, int site);

struct MirroredChain {
  KinematicChain chain;
  std::vector<int> angle_sign;  // q_mirror = sign * q reproduces the reflected pose
};

// Reflection through the plane x = 0 (M = diag(-1, 1, 1)). Axes keep their
// direction where possible, with the angle sign flipped instead.
MirroredChain mirror_chain(const KinematicChain& chain);

// XHand-like 12-DoF right hand.
KinematicChain xhand12();
// 15 joints x (x, y, z) revolute DoF in the joint-angle layout order:
// index, middle, little, ring, thumb; three joints each, axes x, y, z.
KinematicChain mano15(Hand hand = Hand::Right);

inline constexpr const char* kFingers[5] = {"thumb", "index", "middle", "ring", "little"};

// 21 glove keypoints: wrist, then per finger (thumb, index, middle, ring, little) root, two
// knuckles and the tip.
using GloveKeypoints = std::array<geom::Vec3, 21>;

// Keypoints of the mano15 hand at joint angles theta, in its wrist frame.
GloveKeypoints keypoints_from_mano(const JointAngles& theta, Hand hand = Hand::Right);

struct RetargetConfig {
  double alpha = 1.0;
  double beta = 4e-3;
  double s_near = 200.0;
  double d_eps = 0.03;  // m
  double tol = 1e-6;    // projected-gradient norm
  int max_iters = 200;

  void validate() const;  // ConfigError unless alpha > 0, beta >= 0, s_near >= 1
};

double switching_weight(double d, const RetargetConfig& config = {});

struct SolveResult {
  Eigen::VectorXd q;
  bool converged = false;
  int iterations = 0;
  double objective = 0.0;
  std::vector<double> history;  // objective after each accepted step, starting value first
};

// Target vectors v_r = p(site_to) - p(site_from).
struct VectorTerm {
  int site_from = -1;
  int site_to = -1;
  geom::Vec3 human = geom::Vec3::Zero();
};

// min sum s(|v_h|) |alpha v_h - v_r(q)|^2 + beta |q - q_prev|^2 over the box,
// moving only joints with free[j] (all when empty).
SolveResult solve_vectors(const KinematicChain& chain, const std::vector<VectorTerm>& terms,
                          const Eigen::VectorXd& q_prev, const RetargetConfig& config,
                          const std::vector<bool>& free = {});

// Five wrist-to-tip vectors then the ten tip pairs (i < j), finger order as kFingers.
std::vector<std::pair<int, int>> dexpilot_pairs(const KinematicChain& chain);
std::vector<geom::Vec3> dexpilot_vectors(const GloveKeypoints& k);

SolveResult dexpilot_solve(const KinematicChain& chain, const std::vector<geom::Vec3>& human_vectors,
                           const Eigen::VectorXd& q_prev, const RetargetConfig& config = {});

// Signed angle at B: arccos of the normalized dot product, sign of ((A-B) x (C-B)) . ref.
// Throws DegenerateKeypointError when a bone is shorter than 1e-9.
double bone_angle(const geom::Vec3& a, const geom::Vec3& b, const geom::Vec3& c, const geom::Vec3& ref);

struct AngleRange {
  double human_min = 0.0;
  double human_max = 1.0;
  double robot_min = 0.0;
  double robot_max = 1.0;
};

// Affine map from the human range onto the robot range, clipped to it.
// Throws std::invalid_argument unless human_max > human_min.
double angle_match_map(double theta_h, const AngleRange& range);

struct AngleJoint {
  std::string robot_joint;
  std::array<int, 3> triplet{};  // keypoint indices A, B, C
  geom::Vec3 reference = geom::Vec3::UnitY();
  bool unwrap = false;  // negative bone angles read as angle + 2 pi (hyperextension past straight)
  AngleRange range;
};

struct AngleMatchConfig {
  std::vector<AngleJoint> joints;           // directly mapped joints
  std::vector<std::string> lateral_joints;  // optimized joints
  RetargetConfig solver;
};

AngleMatchConfig default_angle_match(const KinematicChain& xhand);
AngleMatchConfig load_angle_match(const std::filesystem::path& path, const KinematicChain& chain);

// Mapped joints from bone angles; lateral joints from the thumb-wrist and
// index tip-root vectors with every other joint held fixed.
SolveResult angle_match_solve(const KinematicChain& chain, const GloveKeypoints& k, const Eigen::VectorXd& q_prev,
                              const AngleMatchConfig& config);

struct JointMap {
  std::vector<std::pair<std::string, int>> pairs;  // robot joint -> joint-angle dim

  // ConfigError on an index outside [0, 45) or a repeated robot joint or dim.
  void validate() const;
  std::array<bool, 45> live() const;
  std::vector<int> unmapped() const;
};

// {"pairs":[{"robot":name,"theta":index}]}
JointMap load_joint_map(const std::filesystem::path& path);
JointMap xhand12_joint_map();  // illustrative correspondence

struct RobotCommand {
  std::vector<double> q;  // in JointMap pair order
  std::array<std::uint8_t, 45> mask{};
};

RobotCommand map_human_action(const JointAngles& theta, const JointMap& map);

}  // namespace handvla::retarget
