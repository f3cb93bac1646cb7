#pragma once

// Deterministic synthetic data: hand tracks with planted speed valleys,
// whole track files for pipeline runs, and random episodes.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "handvla/episode.hpp"
#include "handvla/tracks.hpp"

namespace handvla::synth {

// 10 t^3 - 15 t^4 + 6 t^5: zero velocity and acceleration at both ends.
double min_jerk(double t);

struct PlantedTrack {
  tracks::HandTrack track;  // world frame
  std::vector<int> valleys;  // frames where the wrist comes to rest between reaches
};

// Consecutive minimum-jerk reaches between random waypoints; valleys at the junctions.
PlantedTrack reach_sequence(std::uint64_t seed, int reaches = 2, double fps = 30.0, double noise_m = 5e-4,
                            Hand hand = Hand::Right);

// Random-walk wrist poses and joint angles, every frame valid.
tracks::HandTrack random_wrist_track(std::uint64_t seed, int frames, double fps = 30.0);

struct VideoSpec {
  int frames = 300;
  double fps = 30.0;
  bool moving_camera = false;
  int width = 320;
  int height = 240;
};

tracks::TrackFile synth_video(std::uint64_t seed, const VideoSpec& spec);

// Writes <dir>/video_NNN.jsonl track files; odd-numbered videos have a moving camera.
std::vector<std::filesystem::path> write_corpus(const std::filesystem::path& dir, int videos, std::uint64_t seed);

// Episode over a synthetic two-hand clip with a moving camera; both hands labelled.
episode::Episode random_episode(std::uint64_t seed, int frames);

}  // namespace handvla::synth
