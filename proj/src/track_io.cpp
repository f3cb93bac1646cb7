// Track file: one JSON object per line.
//   {"fps":30,"width":640,"height":480,"fx":..,"fy":..,"cx":..,"cy":..}
//   {"frame":0,"kind":"cam","payload":{"translation":[3],"rotation":[9]}}
//   {"frame":0,"kind":"hand","payload":{"hand":"left","translation":[3],"rotation":[9],
//                                       "joints":[45],"confidence":0.9,"valid":true}}
//   {"frame":0,"kind":"flow","payload":{"median_flow":0.4}}
// Rotations are row-major. Floats are written with 9 significant digits.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "handvla/errors.hpp"
#include "handvla/tracks.hpp"
#include "json.hpp"

namespace handvla {

std::string_view to_string(Hand h) { return h == Hand::Left ? "left" : "right"; }

Hand parse_hand(std::string_view s) {
  if (s == "left") return Hand::Left;
  if (s == "right") return Hand::Right;
  throw std::invalid_argument("unknown hand '" + std::string(s) + "'");
}

}  // namespace handvla

namespace handvla::tracks {

using nlohmann::json;

namespace {

double number(const json& obj, const char* key, std::size_t line) {
  auto it = obj.find(key);
  if (it == obj.end()) throw ParseError(line, std::string("missing '") + key + "'");
  if (!it->is_number()) throw ParseError(line, std::string("'") + key + "' is not a number");
  const double v = it->get<double>();
  if (!std::isfinite(v)) throw ParseError(line, std::string("'") + key + "' is not finite");
  return v;
}

template <std::size_t N>
std::array<double, N> number_array(const json& obj, const char* key, std::size_t line) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_array() || it->size() != N) {
    throw ParseError(line, std::string("'") + key + "' must be an array of " + std::to_string(N) + " numbers");
  }
  std::array<double, N> out{};
  for (std::size_t i = 0; i < N; ++i) {
    const json& v = (*it)[i];
    if (!v.is_number() || !std::isfinite(v.get<double>())) {
      throw ParseError(line, std::string("'") + key + "' has a non-finite entry");
    }
    out[i] = v.get<double>();
  }
  return out;
}

geom::Pose pose_from(const json& payload, std::size_t line) {
  const auto t = number_array<3>(payload, "translation", line);
  const auto r = number_array<9>(payload, "rotation", line);
  geom::Mat3 m;
  m << r[0], r[1], r[2], r[3], r[4], r[5], r[6], r[7], r[8];
  try {
    geom::Rotation::from_matrix(m, 1e-6);
  } catch (const std::invalid_argument&) {
    throw ParseError(line, "rotation is not orthonormal");
  }
  return {geom::Rotation::nearest(m), {t[0], t[1], t[2]}};
}

json rounded(double v) { return round_sig9(v); }

json pose_json(const geom::Pose& p) {
  json t = json::array(), r = json::array();
  for (int i = 0; i < 3; ++i) t.push_back(rounded(p.translation[i]));
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r.push_back(rounded(p.rotation.matrix()(i, j)));
  return {{"translation", t}, {"rotation", r}};
}

int frame_of(const json& rec, std::size_t line) {
  auto it = rec.find("frame");
  if (it == rec.end() || !it->is_number_integer()) throw ParseError(line, "missing integer 'frame'");
  const auto f = it->get<long long>();
  if (f < 0 || f > 1'000'000'000) throw ParseError(line, "frame index out of range");
  return static_cast<int>(f);
}

}  // namespace

double round_sig9(double v) {
  if (v == 0.0 || !std::isfinite(v)) return v;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return std::strtod(buf, nullptr);
}

TrackFile parse_track(std::istream& in) {
  TrackFile out;
  bool have_header = false;
  std::set<std::pair<int, int>> seen_hands;
  std::set<int> seen_cams;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    json rec;
    try {
      rec = json::parse(text);
    } catch (const json::exception& e) {
      throw ParseError(line, std::string("malformed record: ") + e.what());
    }
    if (!rec.is_object()) throw ParseError(line, "record is not an object");
    try {
      if (!have_header) {
        if (!rec.contains("fps")) throw SchemaError("track header is missing 'fps'");
        out.fps = number(rec, "fps", line);
        if (!(out.fps > 0.0)) throw SchemaError("fps must be positive");
        auto& k = out.intrinsics;
        const double w = number(rec, "width", line), h = number(rec, "height", line);
        if (w != std::floor(w) || h != std::floor(h) || w <= 0 || h <= 0 || w > 1e6 || h > 1e6) {
          throw SchemaError("image size must be positive integers");
        }
        k.width = static_cast<int>(w);
        k.height = static_cast<int>(h);
        k.focal_x = number(rec, "fx", line);
        k.focal_y = number(rec, "fy", line);
        k.principal_x = number(rec, "cx", line);
        k.principal_y = number(rec, "cy", line);
        try {
          k.validate();
        } catch (const std::invalid_argument& e) {
          throw SchemaError(e.what());
        }
        have_header = true;
        continue;
      }
      const int frame = frame_of(rec, line);
      auto kind_it = rec.find("kind");
      auto payload_it = rec.find("payload");
      if (kind_it == rec.end() || !kind_it->is_string()) throw ParseError(line, "missing string 'kind'");
      if (payload_it == rec.end() || !payload_it->is_object()) throw ParseError(line, "missing object 'payload'");
      const auto kind = kind_it->get<std::string>();
      const json& payload = *payload_it;
      if (kind == "cam") {
        if (!seen_cams.insert(frame).second) throw DuplicateRecordError(line, "duplicate camera frame");
        out.cameras.push_back({frame, pose_from(payload, line), out.intrinsics});
      } else if (kind == "hand") {
        HandTrackFrame h;
        h.frame_index = frame;
        auto hand_it = payload.find("hand");
        if (hand_it == payload.end() || !hand_it->is_string()) throw ParseError(line, "missing string 'hand'");
        try {
          h.hand = parse_hand(hand_it->get<std::string>());
        } catch (const std::invalid_argument& e) {
          throw ParseError(line, e.what());
        }
        if (!seen_hands.insert({frame, static_cast<int>(h.hand)}).second) {
          throw DuplicateRecordError(line, "duplicate hand record for frame " + std::to_string(frame));
        }
        h.wrist_pose_cam = pose_from(payload, line);
        h.joint_angles = number_array<45>(payload, "joints", line);
        h.confidence = number(payload, "confidence", line);
        if (h.confidence < 0.0 || h.confidence > 1.0) throw ParseError(line, "confidence outside [0, 1]");
        if (auto v = payload.find("valid"); v != payload.end()) {
          if (!v->is_boolean()) throw ParseError(line, "'valid' must be boolean");
          h.valid = v->get<bool>();
        }
        out.hands.push_back(h);
      } else if (kind == "flow") {
        const double f = number(payload, "median_flow", line);
        if (f < 0.0) throw ParseError(line, "negative flow");
        out.flow.push_back({frame, f});
      } else {
        throw ParseError(line, "unknown record kind '" + kind + "'");
      }
    } catch (const json::exception& e) {
      throw ParseError(line, e.what());
    }
  }
  if (!have_header) throw SchemaError("track file has no header record (fps missing)");
  auto by_frame = [](const auto& a, const auto& b) { return a.frame_index < b.frame_index; };
  std::stable_sort(out.cameras.begin(), out.cameras.end(), by_frame);
  std::stable_sort(out.hands.begin(), out.hands.end(), [](const HandTrackFrame& a, const HandTrackFrame& b) {
    return std::pair(a.frame_index, a.hand) < std::pair(b.frame_index, b.hand);
  });
  std::stable_sort(out.flow.begin(), out.flow.end(), by_frame);
  return out;
}

TrackFile load_track(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open track file " + path.string());
  return parse_track(in);
}

void write_track(std::ostream& out, const TrackFile& t) {
  const auto& k = t.intrinsics;
  out << json{{"fps", rounded(t.fps)},       {"width", k.width},          {"height", k.height},
              {"fx", rounded(k.focal_x)},    {"fy", rounded(k.focal_y)}, {"cx", rounded(k.principal_x)},
              {"cy", rounded(k.principal_y)}}
             .dump()
      << '\n';
  for (const auto& c : t.cameras) {
    out << json{{"frame", c.frame_index}, {"kind", "cam"}, {"payload", pose_json(c.world_from_cam)}}.dump() << '\n';
  }
  for (const auto& h : t.hands) {
    json p = pose_json(h.wrist_pose_cam);
    p["hand"] = std::string(to_string(h.hand));
    json joints = json::array();
    for (double a : h.joint_angles) joints.push_back(rounded(a));
    p["joints"] = joints;
    p["confidence"] = rounded(h.confidence);
    p["valid"] = h.valid;
    out << json{{"frame", h.frame_index}, {"kind", "hand"}, {"payload", p}}.dump() << '\n';
  }
  for (const auto& f : t.flow) {
    out << json{{"frame", f.frame_index}, {"kind", "flow"}, {"payload", {{"median_flow", rounded(f.median_background_flow)}}}}
               .dump()
        << '\n';
  }
}

void save_track(const std::filesystem::path& path, const TrackFile& track) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_track(out, track);
}

}  // namespace handvla::tracks
