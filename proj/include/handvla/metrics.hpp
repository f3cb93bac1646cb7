#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "handvla/geom.hpp"
#include "handvla/retarget.hpp"

namespace handvla::metrics {

// Unit-norm embedding rows.
struct FeatureSet {
  int dim = 0;
  std::vector<std::string> ids;
  std::vector<float> data;  // count x dim

  int count() const { return dim > 0 ? static_cast<int>(data.size() / dim) : 0; }
  // Throws std::invalid_argument on shape errors or a row norm off 1 by more than tol.
  void validate(double tol = 1e-6) const;
};

// First line: {"dim":D,"count":N,"ids":[...]} ; then N*D little-endian float32.
FeatureSet load_features(const std::filesystem::path& path);
void save_features(const std::filesystem::path& path, const FeatureSet& features);

struct Diversity {
  double avg_max_cos = 0.0;
  double recall_at_05 = 0.0;  // fraction of queries with max similarity > 0.5
};

// Throws std::invalid_argument on empty sets or a dimension mismatch.
Diversity visual_diversity(const FeatureSet& queries, const FeatureSet& targets);

struct CurvePoint {
  int count = 0;
  Diversity value;
};

// Targets drawn as prefixes of one seeded permutation, so larger counts see supersets.
std::vector<CurvePoint> diversity_curve(const FeatureSet& queries, const FeatureSet& targets,
                                        const std::vector<int>& counts, std::uint64_t seed);

struct WordStats {
  std::map<std::string, std::map<std::string, int>> by_pos;  // "noun" | "verb" | "adjective" -> word -> count
};

// {"noun":{"cup":12,...},"verb":{...},"adjective":{...}}; counts must be >= 1.
WordStats load_word_stats(const std::filesystem::path& path);

struct InstructionDiversity {
  std::vector<std::pair<std::string, int>> rank_frequency;  // count descending, then word
  int h_index = 0;
  int i100 = 0;
};

// Throws std::invalid_argument on an empty map.
InstructionDiversity instruction_diversity(const std::map<std::string, int>& counts);
int h_index(std::vector<int> counts);

struct HandTrajectory {
  std::vector<geom::Pose> wrists;    // camera frame
  std::vector<JointAngles> joints;   // mano15 angles
};

// Fingertip positions of the given sites at one timestep.
std::vector<geom::Vec3> fingertips(const retarget::KinematicChain& chain, const geom::Pose& wrist,
                                   const JointAngles& joints, const std::vector<int>& sites);

// min over (timestep, fingertip, cloud point) of the Euclidean distance.
double hand_object_distance(const retarget::KinematicChain& chain, const HandTrajectory& trajectory,
                            const std::vector<geom::Vec3>& cloud, const std::vector<std::string>& tip_sites);

struct GraspCase {
  std::string id;
  std::string image;
  std::string instruction;
  Hand hand = Hand::Right;
  std::vector<geom::Vec3> cloud;  // camera frame, m
  geom::Pose wrist;
  JointAngles joints{};
  std::vector<std::string> tip_sites{"thumb_tip", "index_tip", "middle_tip", "ring_tip", "little_tip"};
};

// One JSON object per line: id, image, instruction, hand, cloud [[x,y,z]...],
// wrist {xyz, euler}, joints [45].
std::vector<GraspCase> load_grasp_cases(const std::filesystem::path& path);
void save_grasp_cases(const std::filesystem::path& path, const std::vector<GraspCase>& cases);

// Cases whose nearest fingertip sits `distance` m from the object cloud, reached by
// moving the hand from the object toward the camera.
std::vector<GraspCase> make_grasp_fixtures(int n, std::uint64_t seed, double distance = 0.20);

class TrajectorySource {
 public:
  virtual ~TrajectorySource() = default;
  // Throws on a failed trial.
  virtual HandTrajectory generate(const GraspCase& c, int trial, std::uint64_t seed) = 0;
};

// Holds the initial pose for `steps` steps.
std::unique_ptr<TrajectorySource> zero_motion_source(int steps = 16);
// Translates the hand so the nearest fingertip ends on the nearest object point.
std::unique_ptr<TrajectorySource> touch_source(int steps = 16);
// JSON lines {case, trial, wrists [[x,y,z,ex,ey,ez]...], joints [[45]...]}.
std::unique_ptr<TrajectorySource> file_source(const std::filesystem::path& path);

struct CaseResult {
  std::string id;
  std::vector<double> trial_m;
  double mean_m = 0.0;
  bool failed = false;
  std::string error;
};

struct GraspReport {
  std::vector<CaseResult> cases;
  double average_cm = 0.0;  // NaN when every case failed
  double median_cm = 0.0;
  int failed_cases = 0;
};

GraspReport grasp_eval(const std::vector<GraspCase>& cases, TrajectorySource& source, int trials = 4,
                       std::uint64_t seed = 0);
double median(std::vector<double> v);

std::string report_table(const GraspReport& report);
std::string report_json(const GraspReport& report);

}  // namespace handvla::metrics
