#include "handvla/tracks.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "handvla/errors.hpp"

namespace handvla::tracks {

namespace {

double median_of(std::vector<double> v) {
  const std::size_t n = v.size();
  const std::size_t mid = n / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  const double hi = v[mid];
  if (n % 2 == 1) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + mid);
  return 0.5 * (lo + hi);
}

int frames_for(double seconds, double fps) { return std::max(0, static_cast<int>(std::lround(seconds * fps))); }

}  // namespace

CameraMotion classify_camera_motion(std::span<const FlowStats> flow, double threshold_px) {
  if (flow.empty()) throw std::invalid_argument("classify_camera_motion: no flow records");
  std::vector<double> values;
  values.reserve(flow.size());
  for (const auto& f : flow) values.push_back(f.median_background_flow);
  return median_of(std::move(values)) > threshold_px ? CameraMotion::Moving : CameraMotion::Static;
}

HandPair fuse_to_world(std::span<const HandTrackFrame> hands, std::span<const CameraTrackFrame> cameras,
                       double fps) {
  if (!(fps > 0.0)) throw std::invalid_argument("fps must be positive");
  std::map<int, const CameraTrackFrame*> cam_at;
  for (const auto& c : cameras) cam_at[c.frame_index] = &c;

  std::vector<int> missing;
  for (const auto& h : hands) {
    if (h.valid && !cam_at.contains(h.frame_index)) missing.push_back(h.frame_index);
  }
  if (!missing.empty()) {
    std::sort(missing.begin(), missing.end());
    missing.erase(std::unique(missing.begin(), missing.end()), missing.end());
    throw AlignmentError(std::move(missing));
  }

  HandPair out;
  out.left.hand = Hand::Left;
  out.right.hand = Hand::Right;
  const int first = cam_at.empty() ? 0 : cam_at.begin()->first;
  const int count = cam_at.empty() ? 0 : cam_at.rbegin()->first - first + 1;
  for (HandTrack* t : {&out.left, &out.right}) {
    t->fps = fps;
    t->first_frame = first;
    t->samples.assign(static_cast<std::size_t>(count), HandSample{});
  }
  for (const auto& h : hands) {
    if (!h.valid) continue;
    const CameraTrackFrame& cam = *cam_at.at(h.frame_index);
    HandSample& s = out[h.hand].samples[static_cast<std::size_t>(h.frame_index - first)];
    s.wrist = cam.world_from_cam * h.wrist_pose_cam;
    s.joints = h.joint_angles;
    s.valid = true;
  }
  return out;
}

HandTrack world_to_camera(const HandTrack& world, const CameraTrackFrame& camera) {
  const geom::Pose cam_from_world = camera.world_from_cam.inverse();
  HandTrack out = world;
  for (auto& s : out.samples) {
    if (s.valid) s.wrist = cam_from_world * s.wrist;
  }
  return out;
}

std::vector<std::pair<int, int>> valid_spans(const HandTrack& track) {
  std::vector<std::pair<int, int>> spans;
  int i = 0;
  const int n = track.size();
  while (i < n) {
    while (i < n && !track.samples[i].valid) ++i;
    const int b = i;
    while (i < n && track.samples[i].valid) ++i;
    if (i > b) spans.emplace_back(b, i);
  }
  return spans;
}

std::vector<Eigen::Vector3d> smoothing_spline(std::span<const Eigen::Vector3d> values, double dt, double lambda) {
  const int n = static_cast<int>(values.size());
  std::vector<Eigen::Vector3d> out(values.begin(), values.end());
  if (n < 3 || lambda <= 0.0) return out;
  if (!(dt > 0.0)) throw std::invalid_argument("smoothing_spline: spacing must be positive");

  // Reinsch form: (R + lambda Q^T Q) gamma = Q^T y, g = y - lambda Q gamma.
  const int m = n - 2;
  using Sparse = Eigen::SparseMatrix<double>;
  std::vector<Eigen::Triplet<double>> qt, rt;
  for (int j = 0; j < m; ++j) {
    qt.emplace_back(j, j, 1.0 / dt);
    qt.emplace_back(j + 1, j, -2.0 / dt);
    qt.emplace_back(j + 2, j, 1.0 / dt);
    rt.emplace_back(j, j, 2.0 * dt / 3.0);
    if (j + 1 < m) {
      rt.emplace_back(j, j + 1, dt / 6.0);
      rt.emplace_back(j + 1, j, dt / 6.0);
    }
  }
  Sparse q(n, m), r(m, m);
  q.setFromTriplets(qt.begin(), qt.end());
  r.setFromTriplets(rt.begin(), rt.end());
  Sparse a = r + lambda * Sparse(q.transpose() * q);
  Eigen::SimplicialLDLT<Sparse> solver(a);
  if (solver.info() != Eigen::Success) throw std::runtime_error("smoothing_spline: factorization failed");

  Eigen::MatrixXd y(n, 3);
  for (int i = 0; i < n; ++i) y.row(i) = values[i].transpose();
  const Eigen::MatrixXd gamma = solver.solve(q.transpose() * y);
  const Eigen::MatrixXd g = y - lambda * (q * gamma);
  for (int i = 0; i < n; ++i) out[i] = g.row(i).transpose();
  return out;
}

SmoothResult smooth_track(const HandTrack& track, const SmoothConfig& config) {
  SmoothResult res{track, 0};
  const double dt = 1.0 / track.fps;
  const int rot_half = std::max(1, frames_for(config.rotation_sigma_s, track.fps));
  const int hull_half = std::max(1, frames_for(config.hull_window_s, track.fps));

  for (auto [b, e] : valid_spans(track)) {
    const int n = e - b;
    if (n < 4) {
      ++res.short_spans;
      continue;
    }
    std::vector<Eigen::Vector3d> raw(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) raw[i] = track.samples[b + i].wrist.translation;
    auto smooth = smoothing_spline(raw, dt, config.spline_lambda);

    for (int i = 0; i < n; ++i) {
      const int lo = std::max(0, i - hull_half), hi = std::min(n - 1, i + hull_half);
      for (int a = 0; a < 3; ++a) {
        double mn = raw[lo][a], mx = raw[lo][a];
        for (int j = lo + 1; j <= hi; ++j) {
          mn = std::min(mn, raw[j][a]);
          mx = std::max(mx, raw[j][a]);
        }
        smooth[i][a] = std::clamp(smooth[i][a], mn, mx);
      }
      res.track.samples[b + i].wrist.translation = smooth[i];
    }

    // Windowed quaternion mean, hemisphere-aligned to the window centre.
    for (int i = 0; i < n; ++i) {
      const Eigen::Quaterniond centre = track.samples[b + i].wrist.rotation.quaternion();
      Eigen::Vector4d acc = Eigen::Vector4d::Zero();
      for (int j = std::max(0, i - rot_half); j <= std::min(n - 1, i + rot_half); ++j) {
        Eigen::Quaterniond qj = track.samples[b + j].wrist.rotation.quaternion();
        if (qj.dot(centre) < 0.0) qj.coeffs() = -qj.coeffs();
        acc += qj.coeffs();
      }
      Eigen::Quaterniond mean;
      mean.coeffs() = acc;
      res.track.samples[b + i].wrist.rotation = geom::Rotation::from_quaternion(mean);
    }
  }
  return res;
}

namespace {

struct FrameSpeed {
  double value = -1.0;  // negative for invalid frames
  int links = 0;
};

// Speed of a valid frame: the slower of its links to the neighbouring valid
// frames. An isolated spike is fast on both links.
std::vector<FrameSpeed> frame_speeds(const HandTrack& t) {
  const int n = t.size();
  std::vector<FrameSpeed> speed(static_cast<std::size_t>(n));
  std::vector<int> valid;
  for (int i = 0; i < n; ++i)
    if (t.samples[i].valid) valid.push_back(i);
  auto link = [&](int a, int b) {
    return (t.samples[b].wrist.translation - t.samples[a].wrist.translation).norm() * t.fps / (b - a);
  };
  for (std::size_t k = 0; k < valid.size(); ++k) {
    const int i = valid[k];
    const bool has_in = k > 0, has_out = k + 1 < valid.size();
    if (has_in && has_out) {
      speed[i] = {std::min(link(valid[k - 1], i), link(i, valid[k + 1])), 2};
    } else if (has_in) {
      speed[i] = {link(valid[k - 1], i), 1};
    } else if (has_out) {
      speed[i] = {link(i, valid[k + 1]), 1};
    }
  }
  return speed;
}

}  // namespace

HandTrack remove_outliers(const HandTrack& track, const OutlierConfig& config) {
  HandTrack out = track;
  const int half = std::max(1, frames_for(config.window_s, track.fps));
  for (;;) {
    const auto speed = frame_speeds(out);
    const int n = out.size();
    std::vector<int> flagged;
    // Interior frames first; a one-link frame is only judged once no
    // interior spike remains, since it shares its single link with a neighbour.
    for (int links : {2, 1}) {
      for (int i = 0; i < n; ++i) {
        if (speed[i].links != links) continue;
        std::vector<double> window;
        for (int j = std::max(0, i - half); j <= std::min(n - 1, i + half); ++j)
          if (speed[j].links > 0) window.push_back(speed[j].value);
        if (window.size() < 3) continue;
        const double med = median_of(window);
        std::vector<double> dev;
        dev.reserve(window.size());
        for (double v : window) dev.push_back(std::abs(v - med));
        const double sigma = std::max(1.4826 * median_of(std::move(dev)), config.sigma_floor_mps);
        if (std::abs(speed[i].value - med) > config.z_thresh * sigma) flagged.push_back(i);
      }
      if (!flagged.empty()) break;
    }
    if (flagged.empty()) return out;
    for (int i : flagged) out.samples[i].valid = false;
  }
}

std::vector<FrameSpan> chop_video(int frame_count, double fps, double chunk_s, double overlap_s) {
  if (!(fps > 0.0) || !(chunk_s > 0.0) || overlap_s < 0.0 || overlap_s >= chunk_s) {
    throw std::invalid_argument("chop_video: need 0 <= overlap < chunk and fps > 0");
  }
  std::vector<FrameSpan> spans;
  if (frame_count <= 0) return spans;
  const int chunk = std::max(1, frames_for(chunk_s, fps));
  const int step = std::max(1, chunk - frames_for(overlap_s, fps));
  for (int b = 0;; b += step) {
    const int e = std::min(frame_count, b + chunk);
    spans.push_back({b, e});
    if (e == frame_count) break;
  }
  return spans;
}

}  // namespace handvla::tracks
