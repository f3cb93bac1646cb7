#include "handvla/segment.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <deque>
#include <stdexcept>

#include "handvla/errors.hpp"
#include "json.hpp"

namespace handvla::segment {

namespace {

std::vector<Eigen::Vector3d> gaussian_smooth(const std::vector<Eigen::Vector3d>& p, double sigma_frames) {
  if (sigma_frames < 1e-6) return p;
  const int half = static_cast<int>(std::ceil(3.0 * sigma_frames));
  std::vector<double> w(static_cast<std::size_t>(2 * half + 1));
  for (int j = -half; j <= half; ++j) w[j + half] = std::exp(-0.5 * (j / sigma_frames) * (j / sigma_frames));
  const int n = static_cast<int>(p.size());
  std::vector<Eigen::Vector3d> out(p.size());
  for (int i = 0; i < n; ++i) {
    Eigen::Vector3d acc = Eigen::Vector3d::Zero();
    double norm = 0.0;
    for (int j = std::max(0, i - half); j <= std::min(n - 1, i + half); ++j) {
      acc += w[j - i + half] * p[j];
      norm += w[j - i + half];
    }
    out[i] = acc / norm;
  }
  return out;
}

}  // namespace

SpeedSeries wrist_speed(const tracks::HandTrack& track, double sigma_s) {
  int valid = 0;
  for (const auto& s : track.samples) valid += s.valid ? 1 : 0;
  if (track.size() < 2 || valid < 2) throw std::invalid_argument("wrist_speed: need at least 2 valid frames");
  if (!(track.fps > 0.0)) throw std::invalid_argument("wrist_speed: fps must be positive");

  SpeedSeries out;
  out.fps = track.fps;
  out.speed.assign(static_cast<std::size_t>(track.size() - 1), 0.0);
  out.valid.assign(static_cast<std::size_t>(track.size() - 1), false);
  for (auto [b, e] : tracks::valid_spans(track)) {
    std::vector<Eigen::Vector3d> p;
    for (int i = b; i < e; ++i) p.push_back(track.samples[i].wrist.translation);
    const auto sm = gaussian_smooth(p, sigma_s * track.fps);
    for (int i = b; i + 1 < e; ++i) {
      out.speed[i] = track.fps * (sm[i + 1 - b] - sm[i - b]).norm();
      out.valid[i] = true;
    }
  }
  return out;
}

int window_frames(double window_s, double fps) {
  int w = static_cast<int>(std::lround(window_s * fps));
  if (w % 2 == 0) ++w;
  return w;
}

std::vector<int> detect_speed_minima(const SpeedSeries& series, double window_s) {
  const int w = window_frames(window_s, series.fps);
  if (w < 3) throw std::invalid_argument("detect_speed_minima: window shorter than 3 frames");
  const int half = w / 2;
  const int n = series.size();
  std::vector<int> cuts;
  if (n < 3) return cuts;

  // Sliding-window earliest argmin over valid entries via a monotone deque:
  // values are non-decreasing front to back and ties keep the earlier index.
  std::deque<int> dq;
  int next = 0;
  for (int k = 0; k < n; ++k) {
    const int hi = std::min(n - 1, k + half);
    for (; next <= hi; ++next) {
      if (!series.valid[next]) continue;
      while (!dq.empty() && series.speed[dq.back()] > series.speed[next]) dq.pop_back();
      dq.push_back(next);
    }
    while (!dq.empty() && dq.front() < k - half) dq.pop_front();
    if (k == 0 || k == n - 1 || !series.valid[k] || dq.empty()) continue;
    if (dq.front() == k) cuts.push_back(k);
  }
  return cuts;
}

std::vector<Segment> segment_track(const tracks::HandTrack& track, const std::string& video,
                                   const SegmentConfig& config) {
  std::vector<Segment> out;
  const auto spans = tracks::valid_spans(track);
  if (spans.empty()) return out;
  const int min_len = static_cast<int>(std::ceil(config.min_len_s * track.fps - 1e-9));

  SpeedSeries speed;
  const bool have_speed = std::any_of(spans.begin(), spans.end(), [](auto s) { return s.second - s.first >= 2; });
  if (have_speed) speed = wrist_speed(track, config.sigma_s);
  std::vector<int> cuts;
  if (have_speed && window_frames(config.window_s, track.fps) >= 3 && speed.size() >= 3) {
    cuts = detect_speed_minima(speed, config.window_s);
  }

  for (auto [b, e] : spans) {
    std::vector<int> bounds{b};
    for (int k : cuts)
      if (k > b && k < e - 1) bounds.push_back(k);
    bounds.push_back(e);
    for (std::size_t i = 0; i + 1 < bounds.size(); ++i) {
      Segment s{video, track.hand, track.first_frame + bounds[i], track.first_frame + bounds[i + 1]};
      if (s.length() >= std::max(1, min_len)) out.push_back(s);
    }
  }
  return out;
}

std::string normalize_caption(const std::string& caption) {
  std::string out;
  bool space = false;
  for (unsigned char c : caption) {
    if (std::isspace(c)) {
      space = !out.empty();
      continue;
    }
    if (space) out += ' ';
    space = false;
    out += static_cast<char>(std::tolower(c));
  }
  while (!out.empty() && (std::ispunct(static_cast<unsigned char>(out.back())) || out.back() == ' ')) {
    out.pop_back();
  }
  return out;
}

std::vector<CaptionedSegment> merge_segments(std::vector<CaptionedSegment> segs, double fps, double merge_gap_s) {
  std::stable_sort(segs.begin(), segs.end(), [](const CaptionedSegment& a, const CaptionedSegment& b) {
    return std::tie(a.segment.video, a.segment.hand, a.segment.start_frame) <
           std::tie(b.segment.video, b.segment.hand, b.segment.start_frame);
  });
  std::vector<CaptionedSegment> out;
  for (auto& s : segs) {
    if (!out.empty()) {
      auto& cur = out.back();
      const double gap_s = (s.segment.start_frame - cur.segment.end_frame) / fps;
      if (cur.segment.video == s.segment.video && cur.segment.hand == s.segment.hand && gap_s >= 0.0 &&
          gap_s < merge_gap_s && normalize_caption(cur.caption) == normalize_caption(s.caption)) {
        cur.segment.end_frame = s.segment.end_frame;
        continue;
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

void write_segments(std::ostream& out, const std::vector<Segment>& segments) {
  for (const auto& s : segments) {
    out << nlohmann::json{{"video", s.video},
                          {"hand", std::string(to_string(s.hand))},
                          {"start_frame", s.start_frame},
                          {"end_frame", s.end_frame}}
               .dump()
        << '\n';
  }
}

std::vector<Segment> read_segments(std::istream& in) {
  std::vector<Segment> out;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(text);
      Segment s{j.at("video").get<std::string>(), parse_hand(j.at("hand").get<std::string>()),
                j.at("start_frame").get<int>(), j.at("end_frame").get<int>()};
      if (s.end_frame <= s.start_frame) throw ParseError(line, "segment end must exceed start");
      out.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(line, e.what());
    } catch (const std::invalid_argument& e) {
      throw ParseError(line, e.what());
    }
  }
  return out;
}

}  // namespace handvla::segment
