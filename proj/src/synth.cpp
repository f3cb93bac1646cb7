#include "handvla/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>
#include <stdexcept>

namespace handvla::synth {

using geom::Pose;
using geom::Rotation;
using geom::Vec3;

double min_jerk(double t) {
  t = std::clamp(t, 0.0, 1.0);
  return t * t * t * (10.0 + t * (-15.0 + 6.0 * t));
}

namespace {

Vec3 uniform_box(std::mt19937_64& rng, const Vec3& lo, const Vec3& hi) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  return {lo.x() + u(rng) * (hi.x() - lo.x()), lo.y() + u(rng) * (hi.y() - lo.y()),
          lo.z() + u(rng) * (hi.z() - lo.z())};
}

Eigen::Quaterniond random_orientation(std::mt19937_64& rng, double spread) {
  std::uniform_real_distribution<double> u(-spread, spread);
  // Palm roughly facing the camera.
  const Rotation base = Rotation::from_euler(Vec3(std::numbers::pi / 2, 0.0, 0.0));
  return (base * Rotation::from_euler(Vec3(u(rng), u(rng), u(rng)))).quaternion();
}

JointAngles random_joints(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> flex(-0.1, 0.9), side(-0.15, 0.15);
  JointAngles j{};
  for (int k = 0; k < 15; ++k) {
    j[3 * k] = side(rng);
    j[3 * k + 1] = side(rng);
    j[3 * k + 2] = flex(rng);
  }
  return j;
}

struct Keyframe {
  Vec3 p;
  Eigen::Quaterniond q;
  JointAngles j;
};

Keyframe random_keyframe(std::mt19937_64& rng) {
  return {uniform_box(rng, Vec3(-0.25, -0.18, 0.35), Vec3(0.25, 0.18, 0.75)), random_orientation(rng, 0.5),
          random_joints(rng)};
}

tracks::HandSample blend(const Keyframe& a, const Keyframe& b, double s) {
  tracks::HandSample out;
  out.valid = true;
  out.wrist.translation = a.p + s * (b.p - a.p);
  out.wrist.rotation = Rotation::from_quaternion(a.q.slerp(s, b.q));
  for (int k = 0; k < 45; ++k) out.joints[k] = a.j[k] + s * (b.j[k] - a.j[k]);
  return out;
}

// Reaches back to back from `start`, each followed by a hold of 0..max_hold frames,
// until `frames` samples exist. Junction frames (hold centres) go to `valleys`.
std::vector<tracks::HandSample> reach_chain(std::mt19937_64& rng, int frames, double fps, int max_hold,
                                            std::vector<int>* valleys, int max_reaches = 1 << 30) {
  std::uniform_real_distribution<double> dur(0.9, 1.6);
  std::uniform_int_distribution<int> hold(0, max_hold);
  std::vector<tracks::HandSample> out;
  Keyframe from = random_keyframe(rng);
  out.push_back(blend(from, from, 0.0));
  int reaches = 0;
  while ((frames <= 0 || static_cast<int>(out.size()) < frames) && reaches < max_reaches) {
    Keyframe to = random_keyframe(rng);
    // Reaches should be visible motions, not jitter.
    while ((to.p - from.p).norm() < 0.15) to = random_keyframe(rng);
    const int n = std::max(4, static_cast<int>(std::lround(dur(rng) * fps)));
    for (int i = 1; i <= n; ++i) out.push_back(blend(from, to, min_jerk(static_cast<double>(i) / n)));
    ++reaches;
    if (reaches == max_reaches) break;
    const int h = hold(rng);
    for (int i = 0; i < h; ++i) out.push_back(out.back());
    if (valleys) valleys->push_back(static_cast<int>(out.size()) - 1 - h / 2);
    from = to;
  }
  if (frames > 0 && static_cast<int>(out.size()) > frames) out.resize(static_cast<std::size_t>(frames));
  if (valleys) {
    std::erase_if(*valleys, [&](int v) { return v >= static_cast<int>(out.size()) - 1; });
  }
  return out;
}

void add_noise(std::mt19937_64& rng, std::vector<tracks::HandSample>& samples, double sigma) {
  if (sigma <= 0.0) return;
  std::normal_distribution<double> n(0.0, sigma);
  for (auto& s : samples) s.wrist.translation += Vec3(n(rng), n(rng), n(rng));
}

}  // namespace

PlantedTrack reach_sequence(std::uint64_t seed, int reaches, double fps, double noise_m, Hand hand) {
  if (reaches < 1) throw std::invalid_argument("reach_sequence: need at least one reach");
  std::mt19937_64 rng(seed);
  PlantedTrack out;
  auto samples = reach_chain(rng, 0, fps, 2, &out.valleys, reaches);
  add_noise(rng, samples, noise_m);
  out.track.hand = hand;
  out.track.fps = fps;
  out.track.samples = std::move(samples);
  return out;
}

tracks::HandTrack random_wrist_track(std::uint64_t seed, int frames, double fps) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  tracks::HandTrack t;
  t.hand = Hand::Right;
  t.fps = fps;
  Pose p;
  p.translation = Vec3(0.0, 0.0, 0.5);
  p.rotation = Rotation::from_quaternion(random_orientation(rng, 1.0));
  Vec3 vel = Vec3::Zero();
  JointAngles j = random_joints(rng);
  for (int i = 0; i < frames; ++i) {
    tracks::HandSample s;
    s.valid = true;
    s.wrist = p;
    s.joints = j;
    t.samples.push_back(s);
    vel = 0.9 * vel + 0.004 * Vec3(n(rng), n(rng), n(rng));
    p.translation += vel;
    const Vec3 w(n(rng), n(rng), n(rng));
    p.rotation = p.rotation * Rotation::from_axis_angle(w.normalized(), 0.04 * std::abs(n(rng)));
    for (double& a : j) a = std::clamp(a + 0.02 * n(rng), -1.2, 1.2);
  }
  return t;
}

tracks::TrackFile synth_video(std::uint64_t seed, const VideoSpec& spec) {
  if (spec.frames < 2 || !(spec.fps > 0.0)) throw std::invalid_argument("synth_video: bad spec");
  std::mt19937_64 rng(seed);
  tracks::TrackFile tf;
  tf.fps = spec.fps;
  tf.intrinsics = geom::intrinsics_from_fov({60.0 * std::numbers::pi / 180.0, 2.0 * std::atan(std::tan(30.0 * std::numbers::pi / 180.0) * spec.height / spec.width)},
                                            spec.width, spec.height);

  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  const double ph = phase(rng);
  for (int f = 0; f < spec.frames; ++f) {
    tracks::CameraTrackFrame c;
    c.frame_index = f;
    c.intrinsics = tf.intrinsics;
    if (spec.moving_camera) {
      const double t = f / spec.fps;
      c.world_from_cam.translation = Vec3(0.05 * std::sin(0.7 * t + ph), 0.02 * std::sin(0.4 * t), 0.03 * std::sin(0.5 * t));
      c.world_from_cam.rotation = Rotation::from_euler(Vec3(0.04 * std::sin(0.3 * t), 0.08 * std::sin(0.6 * t + ph), 0.0));
    }
    tf.cameras.push_back(c);
    tf.flow.push_back({f, spec.moving_camera ? 2.5 + 0.5 * std::sin(0.1 * f) : 0.2});
  }

  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (Hand h : {Hand::Left, Hand::Right}) {
    auto samples = reach_chain(rng, spec.frames, spec.fps, 8, nullptr);
    // Left hand works on the left of the image.
    for (auto& s : samples) s.wrist.translation.x() += h == Hand::Left ? -0.1 : 0.1;
    add_noise(rng, samples, 2e-4);
    while (static_cast<int>(samples.size()) < spec.frames) samples.push_back(samples.back());

    // Occasionally the hand leaves the view for a while.
    int gap_begin = -1, gap_end = -1;
    if (u(rng) < 0.5) {
      gap_begin = static_cast<int>(u(rng) * (spec.frames - 30));
      gap_end = gap_begin + 8 + static_cast<int>(u(rng) * 12);
    }
    for (int f = 0; f < spec.frames; ++f) {
      tracks::HandTrackFrame r;
      r.frame_index = f;
      r.hand = h;
      r.valid = !(f >= gap_begin && f < gap_end);
      r.confidence = r.valid ? 0.95 : 0.0;
      r.wrist_pose_cam = tf.cameras[static_cast<std::size_t>(f)].world_from_cam.inverse() * samples[static_cast<std::size_t>(f)].wrist;
      r.joint_angles = samples[static_cast<std::size_t>(f)].joints;
      tf.hands.push_back(r);
    }
  }
  std::stable_sort(tf.hands.begin(), tf.hands.end(), [](const auto& a, const auto& b) { return a.frame_index < b.frame_index; });
  return tf;
}

std::vector<std::filesystem::path> write_corpus(const std::filesystem::path& dir, int videos, std::uint64_t seed) {
  if (videos < 1) throw std::invalid_argument("write_corpus: need at least one video");
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> out;
  for (int v = 0; v < videos; ++v) {
    VideoSpec spec;
    spec.moving_camera = v % 2 == 1;
    spec.frames = 240 + 30 * (v % 4);
    char name[32];
    std::snprintf(name, sizeof name, "video_%03d.jsonl", v);
    const auto path = dir / name;
    tracks::save_track(path, synth_video(seed * 1000003ULL + static_cast<std::uint64_t>(v), spec));
    out.push_back(path);
  }
  return out;
}

episode::Episode random_episode(std::uint64_t seed, int frames) {
  VideoSpec spec;
  spec.frames = frames;
  spec.moving_camera = true;
  const auto tf = synth_video(seed, spec);
  const auto world = tracks::fuse_to_world(tf.hands, tf.cameras, tf.fps);
  episode::EpisodeInput in;
  in.id = "synthetic_" + std::to_string(seed);
  in.video = "synthetic";
  in.primary_hand = seed % 2 ? Hand::Left : Hand::Right;
  in.start_frame = 0;
  in.end_frame = frames;
  in.fps = tf.fps;
  in.intrinsics = tf.intrinsics;
  in.world = &world;
  in.cameras = tf.cameras;
  in.instruction = episode::format_instruction("pick up the cup", "hold the plate");
  in.labelled = {std::vector<tracks::FrameSpan>{{0, frames}}, std::vector<tracks::FrameSpan>{{0, frames}}};
  return episode::build_episode(in);
}

}  // namespace handvla::synth
