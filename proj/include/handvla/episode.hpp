#pragma once

// Episode assembly. Per-hand 51-dim block layout, left block first:
//   [dt(3), dr(3), theta(45)]      actions: dt, dr between frames k and k+1
//                                  in the camera of frame k; theta of frame k+1
//   [t(3),  r(3),  theta(45)]      states: wrist pose in the camera of frame k
// Rotations are XYZ-intrinsic Euler angles. Joint angles are absolute.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "handvla/geom.hpp"
#include "handvla/kernels.hpp"
#include "handvla/tracks.hpp"

namespace handvla::episode {

inline constexpr int kHandDim = 51;
inline constexpr int kActionDim = 102;
inline constexpr int kThetaDim = 45;
inline constexpr int kThetaOffset = 6;  // within a hand block

using ActionVector = std::array<double, kActionDim>;
using ActionMask = std::array<std::uint8_t, kActionDim>;

inline int hand_offset(Hand h) { return h == Hand::Left ? 0 : kHandDim; }

struct ActionSequence {
  std::vector<ActionVector> actions;
  std::vector<ActionMask> masks;
};

// Fills one hand block of `out` from two consecutive poses expressed in the same camera frame.
void encode_step(const geom::Pose& from, const geom::Pose& to, const JointAngles& joints_to, Hand hand,
                 ActionVector& out);

// Both tracks in one camera frame, same frame range. A hand missing at k or
// k+1 has its block zeroed with mask 0 for step k.
ActionSequence build_actions(const tracks::HandTrack& left_cam, const tracks::HandTrack& right_cam);

// Wrist poses of one hand reconstructed from start and the action deltas.
std::vector<geom::Pose> integrate_actions(const geom::Pose& start, const ActionSequence& seq, Hand hand);

inline constexpr const char* kNoneToken = "None";

struct Instruction {
  std::optional<std::string> left;
  std::optional<std::string> right;

  // "Left hand: <left>. Right hand: <right>."
  std::string render() const;
  bool operator==(const Instruction&) const = default;
};

// Trailing punctuation and whitespace are stripped; empty captions become None.
Instruction format_instruction(std::optional<std::string> left, std::optional<std::string> right);

struct Episode {
  std::string id;
  std::string video;
  Hand primary_hand = Hand::Left;
  int start_frame = 0;
  int end_frame = 0;  // exclusive
  double fps = 30.0;
  geom::FieldOfView fov;
  Instruction instruction;
  std::vector<std::string> caption_variants;

  // Row-major float32 tensors.
  std::vector<float> states;        // frames x 102
  std::vector<float> state_valid;   // frames x 102, 0 or 1
  std::vector<float> actions;       // frames-1 x 102
  std::vector<float> action_mask;   // frames-1 x 102, 0 or 1
  std::vector<float> cam_rotation;  // frames x 9, world_from_cam rotation, row-major

  int frames() const { return end_frame - start_frame; }
  int steps() const { return std::max(0, frames() - 1); }
  std::span<const float> action(int k) const { return {actions.data() + static_cast<std::size_t>(k) * kActionDim, kActionDim}; }
  std::span<const float> mask(int k) const { return {action_mask.data() + static_cast<std::size_t>(k) * kActionDim, kActionDim}; }

  // Throws std::invalid_argument on size or mask-zero violations.
  void validate() const;
  bool operator==(const Episode&) const = default;
};

struct EpisodeInput {
  std::string id;
  std::string video;
  Hand primary_hand = Hand::Left;
  int start_frame = 0;
  int end_frame = 0;
  double fps = 30.0;
  geom::CameraIntrinsics intrinsics;
  const tracks::HandPair* world = nullptr;
  std::span<const tracks::CameraTrackFrame> cameras;  // sorted by frame index
  Instruction instruction;
  std::vector<std::string> caption_variants;
  // Frame ranges where each hand's actions are labelled (live). Steps whose
  // both frames fall inside a labelled range, with the hand tracked, get mask 1.
  std::array<std::vector<tracks::FrameSpan>, 2> labelled;
};

Episode build_episode(const EpisodeInput& input);

struct Chunk {
  int start = 0;
  int size = 0;
  std::vector<float> actions;             // size x 102
  std::vector<float> mask;                // size x 102
  std::vector<std::uint8_t> step_valid;   // size
};

// Actions t..t+n-1 re-expressed in the camera of frame t. Steps past the
// episode end are zero with validity 0.
Chunk chunk_at(const Episode& ep, int t, int n = 16);
// Chunks at t = 0, stride, 2*stride, ... covering every step. Requires 1 <= stride <= n.
std::vector<Chunk> make_chunks(const Episode& ep, int n = 16, int stride = 1);

// Zeroes theta dims (both hands) whose live flag is false, in actions and mask.
void mask_theta(Episode& ep, const std::array<bool, kThetaDim>& live);

inline constexpr double kVarianceFloor = 1e-8;

struct DimStats {
  std::array<double, kActionDim> mean{};
  std::array<double, kActionDim> var{};
  std::array<double, kActionDim> count{};
  std::array<bool, kActionDim> flagged{};  // zero variance or no valid entries

  static DimStats from_moments(const kernels::Moments& m);
};

struct NormStats {
  DimStats state;
  DimStats action;
};

// One-pass streaming statistics over valid entries. Throws on an empty set.
NormStats compute_norm_stats(std::span<const Episode> episodes);
NormStats compute_norm_stats(std::span<const Episode* const> episodes);

// mu = sum w mu_d, var = sum w (var_d + mu_d^2) - mu^2. Weights >= 0 summing to 1 within 1e-9.
NormStats pool_norm_stats(std::span<const NormStats> stats, std::span<const double> weights);

ActionVector normalize(const ActionVector& v, const DimStats& s);
ActionVector denormalize(const ActionVector& v, const DimStats& s);

void save_norm_stats(const std::filesystem::path& path, const NormStats& stats);
NormStats load_norm_stats(const std::filesystem::path& path);

// Container: 8-byte magic, u32 version, u32 header length, JSON header,
// zero padding to 64 bytes, float32 LE tensors, u64 FNV-1a checksum.
inline constexpr std::uint32_t kEpisodeVersion = 1;

std::vector<std::uint8_t> serialize_episode(const Episode& ep);
Episode deserialize_episode(std::span<const std::uint8_t> bytes);
// Writes atomically via a temporary sibling file.
void save_episode(const std::filesystem::path& path, const Episode& ep);
Episode load_episode(const std::filesystem::path& path);

struct DatasetEntry {
  std::string name;
  std::optional<double> weight;  // frame-count fraction when absent
  std::vector<std::filesystem::path> episodes;
};

// {"datasets":[{"name":..,"weight":..,"episodes":[paths relative to the index]}]}
std::vector<DatasetEntry> load_dataset_index(const std::filesystem::path& path);

}  // namespace handvla::episode
