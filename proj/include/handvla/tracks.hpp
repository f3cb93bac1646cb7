#pragma once

#include <array>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "handvla/geom.hpp"

namespace handvla {

enum class Hand { Left = 0, Right = 1 };

std::string_view to_string(Hand h);
Hand parse_hand(std::string_view s);  // throws std::invalid_argument
inline Hand other(Hand h) { return h == Hand::Left ? Hand::Right : Hand::Left; }

// 15 joints x (x, y, z) Euler angles in radians, joint-major.
using JointAngles = std::array<double, 45>;

}  // namespace handvla

namespace handvla::tracks {

struct HandTrackFrame {
  int frame_index = 0;
  Hand hand = Hand::Left;
  geom::Pose wrist_pose_cam;
  JointAngles joint_angles{};
  bool valid = true;
  double confidence = 1.0;
};

struct CameraTrackFrame {
  int frame_index = 0;
  geom::Pose world_from_cam;
  geom::CameraIntrinsics intrinsics;
};

struct FlowStats {
  int frame_index = 0;
  double median_background_flow = 0.0;  // px / frame
};

// Contents of one per-video track file, sorted by frame index.
struct TrackFile {
  double fps = 0.0;
  geom::CameraIntrinsics intrinsics;
  std::vector<CameraTrackFrame> cameras;
  std::vector<HandTrackFrame> hands;
  std::vector<FlowStats> flow;
};

TrackFile load_track(const std::filesystem::path& path);
TrackFile parse_track(std::istream& in);
void write_track(std::ostream& out, const TrackFile& track);
void save_track(const std::filesystem::path& path, const TrackFile& track);

// Rounds to 9 significant digits, the precision of the text formats.
double round_sig9(double v);

enum class CameraMotion { Static, Moving };

// Moving iff the median over frames of the per-frame median flow exceeds threshold_px.
CameraMotion classify_camera_motion(std::span<const FlowStats> flow, double threshold_px = 1.0);

struct HandSample {
  geom::Pose wrist;
  JointAngles joints{};
  bool valid = false;
};

// One hand over a contiguous frame range; missing frames carry valid = false.
struct HandTrack {
  Hand hand = Hand::Left;
  double fps = 30.0;
  int first_frame = 0;
  std::vector<HandSample> samples;

  int size() const { return static_cast<int>(samples.size()); }
  int end_frame() const { return first_frame + size(); }
  const HandSample& at_frame(int f) const { return samples.at(static_cast<std::size_t>(f - first_frame)); }
};

struct HandPair {
  HandTrack left;
  HandTrack right;
  HandTrack& operator[](Hand h) { return h == Hand::Left ? left : right; }
  const HandTrack& operator[](Hand h) const { return h == Hand::Left ? left : right; }
};

// World wrist = world_from_cam * wrist_cam. Tracks span the camera frame range.
// Throws AlignmentError when a valid hand frame has no camera frame.
HandPair fuse_to_world(std::span<const HandTrackFrame> hands, std::span<const CameraTrackFrame> cameras,
                       double fps);

// Re-expresses every pose in the camera frame of `camera`.
HandTrack world_to_camera(const HandTrack& world, const CameraTrackFrame& camera);

// Valid runs [begin, end) of sample indices.
std::vector<std::pair<int, int>> valid_spans(const HandTrack& track);

// Cubic smoothing spline (Reinsch) on equally spaced samples:
// minimises sum (y_i - g_i)^2 + lambda * integral g''^2, spacing dt seconds.
// Fewer than 3 samples are returned unchanged.
std::vector<Eigen::Vector3d> smoothing_spline(std::span<const Eigen::Vector3d> values, double dt, double lambda);

struct SmoothConfig {
  double spline_lambda = 1e-4;
  double rotation_sigma_s = 0.1;  // quaternion window half-width
  double hull_window_s = 0.1;     // smoothed translations stay in the local raw hull
};

struct SmoothResult {
  HandTrack track;
  int short_spans = 0;  // spans under 4 frames passed through unchanged
};

SmoothResult smooth_track(const HandTrack& track, const SmoothConfig& config = {});

struct OutlierConfig {
  double z_thresh = 4.0;
  double window_s = 0.5;            // rolling median half-width
  double sigma_floor_mps = 0.05;    // robust sigma never drops below this
};

// Frames whose wrist speed deviates from the rolling median by more than
// z_thresh robust sigmas are invalidated; repeats until nothing changes.
HandTrack remove_outliers(const HandTrack& track, const OutlierConfig& config = {});

struct FrameSpan {
  int begin = 0;  // inclusive
  int end = 0;    // exclusive
  bool operator==(const FrameSpan&) const = default;
};

// Overlapping fixed-length chunks covering [0, frame_count).
// Throws std::invalid_argument unless 0 <= overlap_s < chunk_s.
std::vector<FrameSpan> chop_video(int frame_count, double fps, double chunk_s = 20.0, double overlap_s = 5.0);

}  // namespace handvla::tracks
