#pragma once

// Crop-and-warp as a virtual camera: the new camera shares the optical
// centre, is rotated by R_aug (new-cam -> old-cam) so its axis points along
// the crop ray, and has an isotropic focal length with a centred principal point.

#include <cstdint>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "handvla/episode.hpp"
#include "handvla/geom.hpp"
#include "handvla/image.hpp"

namespace handvla::augment {

struct ColorJitter {
  double brightness = 0.0;  // additive, fraction of 255
  double contrast = 1.0;    // about mid-grey
  double saturation = 1.0;  // about per-pixel luma
};

struct AugmentParams {
  double target_hfov_rad = 0.0;
  double aspect = 1.0;  // width / height of the output
  geom::Vec3 center_ray = geom::Vec3::UnitZ();
  int output_width = 0;  // 0 keeps the source width
  bool flip = false;
  std::optional<ColorJitter> jitter;
  std::uint64_t seed = 0;

  // Source FoV, source aspect, optical axis, no flip.
  static AugmentParams identity(const geom::CameraIntrinsics& source);
};

struct WarpSpec {
  geom::Rotation r_aug;  // new-cam -> old-cam
  geom::CameraIntrinsics k_src;
  geom::CameraIntrinsics k_new;

  // Homography taking output pixels to source pixels.
  geom::Mat3 new_to_src() const;
};

// Throws std::invalid_argument when the target FoV exceeds the source FoV,
// on a non-positive aspect, or a zero crop ray.
WarpSpec warp_spec(const geom::CameraIntrinsics& source, const AugmentParams& params);

Image warp_image(const Image& image, const WarpSpec& spec);

std::vector<geom::Pose> transform_poses(std::span<const geom::Pose> poses_src_cam, const WarpSpec& spec);
geom::Vec3 transform_point(const geom::Vec3& p_src_cam, const WarpSpec& spec);

// States, actions and camera rotations re-expressed in the virtual camera.
episode::Episode transform_episode(const episode::Episode& ep, const WarpSpec& spec);

// True iff every palm point in front of the source camera projects inside
// the output frame of the warped view.
bool contain_trajectory(const AugmentParams& params, std::span<const geom::Vec3> palm_src_cam,
                        const geom::CameraIntrinsics& source);

struct SamplerConfig {
  double fov_scale_min = 0.6;
  double fov_scale_max = 1.0;
  double aspect_min = 0.75;
  double aspect_max = 1.33;
  double center_margin = 0.2;  // crop centre pixel drawn from the inner (1 - 2 margin) of the source
  int max_attempts = 20;
  double flip_probability = 0.5;
  double jitter_probability = 0.5;
};

struct SampleResult {
  AugmentParams params;
  int attempts = 0;
  bool fallback = false;  // every attempt rejected; identity crop used
};

// Crop geometry only; flip and jitter are drawn separately by sample_augment.
SampleResult sample_crop(std::mt19937_64& rng, const geom::CameraIntrinsics& source,
                         std::span<const geom::Vec3> palm_src_cam, const SamplerConfig& config = {});

SampleResult sample_augment(std::uint64_t seed, const geom::CameraIntrinsics& source,
                            std::span<const geom::Vec3> palm_src_cam, const std::string& instruction,
                            const std::set<std::string>& lexicon, const SamplerConfig& config = {});

// Mirror about the vertical image axis. Hands swap; rotations become M R M
// with M = diag(-1, 1, 1), i.e. Euler (a, b, c) -> (a, -b, -c); joint angles
// (x, y, z) -> (x, -y, -z); the words left and right swap in all text.
episode::Episode flip_episode(const episode::Episode& ep);
std::string swap_left_right(const std::string& text);

const std::set<std::string>& default_color_lexicon();
std::set<std::string> load_lexicon(const std::string& path);

// False iff a case-folded word of the instruction is in the lexicon.
bool jitter_gate(const std::string& instruction, const std::set<std::string>& lexicon);

ColorJitter sample_jitter(std::mt19937_64& rng);
Image apply_jitter(const Image& image, const ColorJitter& jitter);

}  // namespace handvla::augment
