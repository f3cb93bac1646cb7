#include "handvla/episode.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <stdexcept>

namespace handvla::episode {

namespace {

constexpr std::size_t kRow = kActionDim;

geom::Rotation cam_rotation_at(const Episode& ep, int k) {
  geom::Mat3 m;
  const float* r = ep.cam_rotation.data() + static_cast<std::size_t>(k) * 9;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) m(i, j) = r[3 * i + j];
  return geom::Rotation::nearest(m);
}

const tracks::CameraTrackFrame* find_camera(std::span<const tracks::CameraTrackFrame> cams, int frame) {
  auto it = std::lower_bound(cams.begin(), cams.end(), frame,
                             [](const tracks::CameraTrackFrame& c, int f) { return c.frame_index < f; });
  if (it == cams.end() || it->frame_index != frame) return nullptr;
  return &*it;
}

bool covered(const std::vector<tracks::FrameSpan>& spans, int a, int b) {
  for (const auto& s : spans)
    if (a >= s.begin && b < s.end) return true;
  return false;
}

std::string strip_caption(std::string s) {
  while (!s.empty() && (std::ispunct(static_cast<unsigned char>(s.back())) ||
                        std::isspace(static_cast<unsigned char>(s.back())))) {
    s.pop_back();
  }
  std::size_t i = 0;
  while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
  return s.substr(i);
}

}  // namespace

void encode_step(const geom::Pose& from, const geom::Pose& to, const JointAngles& joints_to, Hand hand,
                 ActionVector& out) {
  const int o = hand_offset(hand);
  const auto d = geom::relative_delta(from, to);
  for (int i = 0; i < 3; ++i) {
    out[o + i] = d.translation[i];
    out[o + 3 + i] = d.rotation[i];
  }
  for (int j = 0; j < kThetaDim; ++j) out[o + kThetaOffset + j] = joints_to[j];
}

ActionSequence build_actions(const tracks::HandTrack& left_cam, const tracks::HandTrack& right_cam) {
  if (left_cam.first_frame != right_cam.first_frame || left_cam.size() != right_cam.size()) {
    throw std::invalid_argument("build_actions: hand tracks must cover the same frames");
  }
  ActionSequence seq;
  const int n = std::max(0, left_cam.size() - 1);
  seq.actions.assign(n, ActionVector{});
  seq.masks.assign(n, ActionMask{});
  for (Hand h : {Hand::Left, Hand::Right}) {
    const auto& tr = h == Hand::Left ? left_cam : right_cam;
    const int o = hand_offset(h);
    for (int k = 0; k < n; ++k) {
      const auto& a = tr.samples[k];
      const auto& b = tr.samples[k + 1];
      if (!a.valid || !b.valid) continue;
      encode_step(a.wrist, b.wrist, b.joints, h, seq.actions[k]);
      std::fill_n(seq.masks[k].begin() + o, kHandDim, std::uint8_t{1});
    }
  }
  return seq;
}

std::vector<geom::Pose> integrate_actions(const geom::Pose& start, const ActionSequence& seq, Hand hand) {
  const int o = hand_offset(hand);
  std::vector<geom::PoseDelta> deltas(seq.actions.size());
  for (std::size_t k = 0; k < deltas.size(); ++k) {
    const auto& a = seq.actions[k];
    deltas[k].translation = {a[o], a[o + 1], a[o + 2]};
    deltas[k].rotation = {a[o + 3], a[o + 4], a[o + 5]};
  }
  return geom::integrate_deltas(start, deltas);
}

std::string Instruction::render() const {
  return "Left hand: " + left.value_or(kNoneToken) + ". Right hand: " + right.value_or(kNoneToken) + ".";
}

Instruction format_instruction(std::optional<std::string> left, std::optional<std::string> right) {
  auto clean = [](std::optional<std::string> s) -> std::optional<std::string> {
    if (!s) return std::nullopt;
    auto t = strip_caption(*s);
    if (t.empty() || t == kNoneToken) return std::nullopt;
    return t;
  };
  return {clean(std::move(left)), clean(std::move(right))};
}

void Episode::validate() const {
  const int f = frames();
  if (f < 1) throw std::invalid_argument("episode must hold at least one frame");
  const auto fr = static_cast<std::size_t>(f);
  const auto st = static_cast<std::size_t>(steps());
  if (states.size() != fr * kRow || state_valid.size() != fr * kRow || actions.size() != st * kRow ||
      action_mask.size() != st * kRow || cam_rotation.size() != fr * 9) {
    throw std::invalid_argument("episode tensor sizes do not match the frame range");
  }
  auto check = [](const std::vector<float>& v, const std::vector<float>& m, const char* what) {
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (m[i] != 0.0f && m[i] != 1.0f) throw std::invalid_argument(std::string(what) + " mask entry not 0/1");
      if (!std::isfinite(v[i])) throw std::invalid_argument(std::string(what) + " entry not finite");
      if (m[i] == 0.0f && v[i] != 0.0f) throw std::invalid_argument(std::string(what) + " masked entry non-zero");
    }
  };
  check(states, state_valid, "state");
  check(actions, action_mask, "action");
}

Episode build_episode(const EpisodeInput& in) {
  if (!in.world) throw std::invalid_argument("build_episode: no hand tracks");
  if (in.end_frame <= in.start_frame) throw std::invalid_argument("build_episode: empty frame range");
  Episode ep;
  ep.id = in.id;
  ep.video = in.video;
  ep.primary_hand = in.primary_hand;
  ep.start_frame = in.start_frame;
  ep.end_frame = in.end_frame;
  ep.fps = in.fps;
  ep.fov = geom::field_of_view(in.intrinsics);
  ep.instruction = in.instruction;
  ep.caption_variants = in.caption_variants;

  const int f = ep.frames();
  ep.states.assign(static_cast<std::size_t>(f) * kRow, 0.0f);
  ep.state_valid.assign(ep.states.size(), 0.0f);
  ep.actions.assign(static_cast<std::size_t>(ep.steps()) * kRow, 0.0f);
  ep.action_mask.assign(ep.actions.size(), 0.0f);
  ep.cam_rotation.assign(static_cast<std::size_t>(f) * 9, 0.0f);

  auto sample = [&](Hand h, int frame) -> const tracks::HandSample* {
    const auto& tr = (*in.world)[h];
    if (frame < tr.first_frame || frame >= tr.end_frame()) return nullptr;
    const auto& s = tr.at_frame(frame);
    return s.valid ? &s : nullptr;
  };

  for (int i = 0; i < f; ++i) {
    const int frame = in.start_frame + i;
    const auto* cam = find_camera(in.cameras, frame);
    const geom::Mat3 rm = cam ? cam->world_from_cam.rotation.matrix() : geom::Mat3::Identity();
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) ep.cam_rotation[static_cast<std::size_t>(i) * 9 + 3 * r + c] = static_cast<float>(rm(r, c));
    if (!cam) continue;
    const geom::Pose cam_from_world = cam->world_from_cam.inverse();

    for (Hand h : {Hand::Left, Hand::Right}) {
      const int o = hand_offset(h);
      if (const auto* s = sample(h, frame)) {
        const geom::Pose p = cam_from_world * s->wrist;
        const geom::Vec3 e = p.rotation.euler();
        float* row = ep.states.data() + static_cast<std::size_t>(i) * kRow + o;
        for (int a = 0; a < 3; ++a) {
          row[a] = static_cast<float>(p.translation[a]);
          row[3 + a] = static_cast<float>(e[a]);
        }
        for (int j = 0; j < kThetaDim; ++j) row[kThetaOffset + j] = static_cast<float>(s->joints[j]);
        std::fill_n(ep.state_valid.begin() + static_cast<std::ptrdiff_t>(i * kRow + o), kHandDim, 1.0f);
      }
      if (i + 1 >= f) continue;
      const auto* s0 = sample(h, frame);
      const auto* s1 = sample(h, frame + 1);
      if (!s0 || !s1 || !covered(in.labelled[static_cast<int>(h)], frame, frame + 1)) continue;
      ActionVector v{};
      encode_step(cam_from_world * s0->wrist, cam_from_world * s1->wrist, s1->joints, h, v);
      float* row = ep.actions.data() + static_cast<std::size_t>(i) * kRow;
      for (int d = o; d < o + kHandDim; ++d) row[d] = static_cast<float>(v[d]);
      std::fill_n(ep.action_mask.begin() + static_cast<std::ptrdiff_t>(i * kRow + o), kHandDim, 1.0f);
    }
  }
  return ep;
}

Chunk chunk_at(const Episode& ep, int t, int n) {
  if (n < 1) throw std::invalid_argument("chunk size must be >= 1");
  if (t < 0 || t >= std::max(1, ep.steps())) throw std::out_of_range("chunk start outside the episode");
  Chunk c;
  c.start = t;
  c.size = n;
  c.actions.assign(static_cast<std::size_t>(n) * kRow, 0.0f);
  c.mask.assign(c.actions.size(), 0.0f);
  c.step_valid.assign(static_cast<std::size_t>(n), 0);
  const geom::Rotation rt_inv = cam_rotation_at(ep, t).inverse();
  for (int j = 0; j < n; ++j) {
    const int k = t + j;
    if (k >= ep.steps()) break;
    c.step_valid[j] = 1;
    float* dst = c.actions.data() + static_cast<std::size_t>(j) * kRow;
    const auto src = ep.action(k);
    const auto m = ep.mask(k);
    std::copy(m.begin(), m.end(), c.mask.begin() + static_cast<std::ptrdiff_t>(j * kRow));
    if (k == t) {
      std::copy(src.begin(), src.end(), dst);
      continue;
    }
    // Camera-k deltas re-expressed in the camera of frame t.
    const geom::Rotation q = rt_inv * cam_rotation_at(ep, k);
    for (Hand h : {Hand::Left, Hand::Right}) {
      const int o = hand_offset(h);
      if (m[o] == 0.0f) continue;
      const geom::Vec3 dt = q * geom::Vec3(src[o], src[o + 1], src[o + 2]);
      const geom::Rotation dr = geom::Rotation::from_euler({src[o + 3], src[o + 4], src[o + 5]});
      const geom::Vec3 e = (q * dr * q.inverse()).euler();
      for (int a = 0; a < 3; ++a) {
        dst[o + a] = static_cast<float>(dt[a]);
        dst[o + 3 + a] = static_cast<float>(e[a]);
      }
      for (int d = kThetaOffset; d < kHandDim; ++d) dst[o + d] = src[o + d];
    }
  }
  return c;
}

std::vector<Chunk> make_chunks(const Episode& ep, int n, int stride) {
  if (n < 1) throw std::invalid_argument("chunk size must be >= 1");
  if (stride < 1 || stride > n) throw std::invalid_argument("chunk stride must be in [1, n]");
  std::vector<Chunk> out;
  for (int t = 0; t < ep.steps(); t += stride) out.push_back(chunk_at(ep, t, n));
  return out;
}

void mask_theta(Episode& ep, const std::array<bool, kThetaDim>& live) {
  for (int k = 0; k < ep.steps(); ++k) {
    for (int o : {0, kHandDim}) {
      for (int j = 0; j < kThetaDim; ++j) {
        if (live[j]) continue;
        const std::size_t idx = static_cast<std::size_t>(k) * kRow + o + kThetaOffset + j;
        ep.actions[idx] = 0.0f;
        ep.action_mask[idx] = 0.0f;
      }
    }
  }
}

}  // namespace handvla::episode
