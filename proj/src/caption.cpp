#include "handvla/caption.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cmath>
#include <fstream>
#include <thread>

#include "handvla/errors.hpp"
#include "handvla/hash.hpp"
#include "handvla/segment.hpp"
#include "json.hpp"

namespace handvla::caption {

using nlohmann::json;

std::vector<int> sample_frames(int length, int n) {
  if (length < 1 || n < 1) throw std::invalid_argument("sample_frames: length and n must be positive");
  std::vector<int> out(static_cast<std::size_t>(n), 0);
  if (n == 1) return out;
  for (int i = 0; i < n; ++i) {
    out[i] = static_cast<int>(std::floor(static_cast<double>(i) * (length - 1) / (n - 1) + 0.5));
  }
  return out;
}

geom::Vec3 palm_point(const geom::Pose& wrist, const geom::Vec3& offset) { return wrist * offset; }

namespace {

// Liang-Barsky clip of a->b to [0, w-1] x [0, h-1]; returns false if fully outside.
bool clip_segment(OverlayVertex& a, OverlayVertex& b, double w, double h) {
  const geom::Vec2 d = b.px - a.px;
  double t0 = 0.0, t1 = 1.0;
  const double p[4] = {-d.x(), d.x(), -d.y(), d.y()};
  const double q[4] = {a.px.x(), w - 1.0 - a.px.x(), a.px.y(), h - 1.0 - a.px.y()};
  for (int i = 0; i < 4; ++i) {
    if (p[i] == 0.0) {
      if (q[i] < 0.0) return false;
      continue;
    }
    const double r = q[i] / p[i];
    if (p[i] < 0.0) {
      t0 = std::max(t0, r);
    } else {
      t1 = std::min(t1, r);
    }
    if (t0 > t1) return false;
  }
  const OverlayVertex a0 = a;
  if (t0 > 0.0) a = {a0.px + t0 * d, a0.t + t0 * (b.t - a0.t)};
  if (t1 < 1.0) b = {a0.px + t1 * d, a0.t + t1 * (b.t - a0.t)};
  return true;
}

bool inside(const geom::Vec2& p, double w, double h) {
  return p.x() >= 0.0 && p.y() >= 0.0 && p.x() <= w - 1.0 && p.y() <= h - 1.0;
}

// Purple to yellow.
std::array<double, 3> ramp(double t) {
  t = std::clamp(t, 0.0, 1.0);
  return {68.0 + t * (253.0 - 68.0), 1.0 + t * (231.0 - 1.0), 84.0 + t * (37.0 - 84.0)};
}

void blend(Image& img, int x, int y, const std::array<double, 3>& c, double alpha) {
  std::uint8_t* px = img.at(x, y);
  for (int k = 0; k < 3; ++k) {
    px[k] = static_cast<std::uint8_t>(std::clamp(std::lround(px[k] * (1.0 - alpha) + c[k] * alpha), 0L, 255L));
  }
}

// Anti-aliased capsule from a to b with radius r.
void draw_capsule(Image& img, const OverlayVertex& a, const OverlayVertex& b, double r) {
  const int x0 = std::max(0, static_cast<int>(std::floor(std::min(a.px.x(), b.px.x()) - r - 1)));
  const int x1 = std::min(img.width - 1, static_cast<int>(std::ceil(std::max(a.px.x(), b.px.x()) + r + 1)));
  const int y0 = std::max(0, static_cast<int>(std::floor(std::min(a.px.y(), b.px.y()) - r - 1)));
  const int y1 = std::min(img.height - 1, static_cast<int>(std::ceil(std::max(a.px.y(), b.px.y()) + r + 1)));
  const geom::Vec2 d = b.px - a.px;
  const double len2 = d.squaredNorm();
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const geom::Vec2 p(x, y);
      const double s = len2 > 0.0 ? std::clamp((p - a.px).dot(d) / len2, 0.0, 1.0) : 0.0;
      const double dist = (p - (a.px + s * d)).norm();
      const double cover = std::clamp(r + 0.5 - dist, 0.0, 1.0);
      if (cover > 0.0) blend(img, x, y, ramp(a.t + s * (b.t - a.t)), cover);
    }
  }
}

}  // namespace

OverlayFrame render_overlay(const Image& frame, const tracks::HandTrack& world_track, int frame_index,
                            int tail_end, const tracks::CameraTrackFrame& camera,
                            const geom::CameraIntrinsics& k, const OverlayConfig& config) {
  OverlayFrame out;
  out.frame_index = frame_index;
  out.image = frame;
  const geom::Pose cam_from_world = camera.world_from_cam.inverse();
  const int last = std::min(tail_end, world_track.end_frame()) - 1;
  const double span = std::max(1, last - frame_index);

  std::vector<int> source;  // frame of each vertex, to break strokes at dropped points
  for (int f = std::max(frame_index, world_track.first_frame); f <= last; ++f) {
    const auto& s = world_track.at_frame(f);
    if (!s.valid) continue;
    const geom::Vec3 pc = cam_from_world * palm_point(s.wrist, config.palm_offset);
    if (!(pc.z() > 0.0)) continue;
    out.vertices.push_back({geom::project(k, pc), (f - frame_index) / span});
    source.push_back(f);
  }

  const double w = frame.width, h = frame.height;
  std::vector<OverlayVertex> stroke;
  auto flush = [&] {
    if (!stroke.empty()) out.strokes.push_back(std::move(stroke));
    stroke.clear();
  };
  for (std::size_t i = 0; i < out.vertices.size(); ++i) {
    const bool connected = i > 0 && source[i] == source[i - 1] + 1;
    if (!connected) {
      flush();
      if (inside(out.vertices[i].px, w, h)) stroke.push_back(out.vertices[i]);
      continue;
    }
    OverlayVertex a = out.vertices[i - 1], b = out.vertices[i];
    if (!clip_segment(a, b, w, h)) {
      flush();
      continue;
    }
    if (stroke.empty() || (stroke.back().px - a.px).norm() > 1e-9) {
      flush();
      stroke.push_back(a);
    }
    if ((b.px - stroke.back().px).norm() > 1e-9) stroke.push_back(b);
    if ((b.px - out.vertices[i].px).norm() > 1e-9) flush();
  }
  flush();

  const double r = config.line_width_px / 2.0;
  for (const auto& st : out.strokes) {
    if (st.size() == 1) {
      draw_capsule(out.image, st[0], st[0], r);
      continue;
    }
    for (std::size_t i = 0; i + 1 < st.size(); ++i) draw_capsule(out.image, st[i], st[i + 1], r);
  }
  return out;
}

const std::string& default_system_prompt() {
  static const std::string prompt =
      "You label egocentric video clips of everyday hand activity. The images are frames sampled in "
      "temporal order from one short clip. On every frame a curve shows where the palm of the target hand "
      "travels from that frame until the end of the clip, colored from purple (now) to yellow (end). "
      "Using both the image content and the drawn curve, describe what the target hand does in this clip "
      "as one short instruction in imperative form, for example \"pick up the cup\" or \"open the drawer\". "
      "If the target hand performs no semantically meaningful action in the clip, reply exactly N/A. "
      "Reply with the instruction only.";
  return prompt;
}

const std::string& default_rephrase_prompt() {
  static const std::string prompt =
      "Rewrite the following hand-action instruction in five different ways without changing its meaning. "
      "Keep the imperative form. Put each version on its own line, without numbering.";
  return prompt;
}

std::string CaptionRequest::to_json() const {
  json images = json::array();
  for (const auto& png : images_png) images.push_back({{"format", "png"}, {"data", base64_encode(png)}});
  return json{{"model", model}, {"system", system_text}, {"user", user_text}, {"images", images}}.dump();
}

CaptionRequest build_prompt(const std::vector<Image>& frames, Hand hand, const CaptionConfig& config,
                            const std::string& segment_id) {
  if (frames.empty()) throw std::invalid_argument("build_prompt: no frames");
  CaptionRequest req;
  req.kind = RequestKind::Caption;
  req.segment_id = segment_id;
  req.model = config.model;
  req.system_text = config.system_prompt.empty() ? default_system_prompt() : config.system_prompt;
  for (const auto& f : frames) req.images_png.push_back(encode_png(f));
  req.user_text = "Target hand: " + std::string(to_string(hand)) + ". " + std::to_string(frames.size()) +
                  " frames follow in temporal order.";
  return req;
}

CaptionRequest build_rephrase_request(const std::string& caption, const CaptionConfig& config,
                                      const std::string& segment_id) {
  CaptionRequest req;
  req.kind = RequestKind::Rephrase;
  req.segment_id = segment_id;
  req.model = config.model;
  req.system_text = config.rephrase_prompt.empty() ? default_rephrase_prompt() : config.rephrase_prompt;
  req.user_text = caption;
  return req;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string clean_line(std::string s) {
  s = trim(s);
  // List markers: "1.", "2)", "-", "*".
  std::size_t i = 0;
  while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i;
  if (i > 0 && i < s.size() && (s[i] == '.' || s[i] == ')')) s = trim(s.substr(i + 1));
  if (!s.empty() && (s[0] == '-' || s[0] == '*')) s = trim(s.substr(1));
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = trim(s.substr(1, s.size() - 2));
  return s;
}

void backoff(const RetryPolicy& retry, int attempt) {
  const double delay = retry.base_delay_s * std::pow(2.0, attempt - 1);
  if (retry.sleep) {
    retry.sleep(delay);
  } else {
    std::this_thread::sleep_for(std::chrono::duration<double>(delay));
  }
}

}  // namespace

std::string synthetic_caption(const std::string& segment_id) {
  static const char* verbs[] = {"pick up", "put down", "push", "pull", "open", "close", "wipe", "rotate", "lift",
                                "move"};
  static const char* objects[] = {"the cup", "the drawer", "the bottle", "the towel", "the lid", "the bowl",
                                  "the phone", "the book", "the box", "the spoon", "the door", "the plate"};
  const std::uint64_t h = fnv1a(segment_id);
  if (h % 8 == 0) return "N/A";
  return std::string(verbs[(h / 8) % 10]) + " " + objects[(h / 80) % 12];
}

std::map<std::string, MockCaptionClient::TranscriptEntry> MockCaptionClient::load_transcript(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open transcript " + path.string());
  std::map<std::string, TranscriptEntry> out;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (trim(text).empty()) continue;
    try {
      const auto j = json::parse(text);
      TranscriptEntry e{j.at("caption").get<std::string>(), {}};
      if (j.contains("rephrasings")) e.rephrasings = j.at("rephrasings").get<std::vector<std::string>>();
      out[j.at("segment").get<std::string>()] = std::move(e);
    } catch (const json::exception& e) {
      throw ParseError(line, e.what());
    }
  }
  return out;
}

std::string MockCaptionClient::complete(const CaptionRequest& request) {
  std::lock_guard lock(mu_);
  ++calls_;
  if (next_ < script_.size()) {
    const Outcome& o = script_[next_++];
    if (std::holds_alternative<Failure>(o)) throw TransientError("scripted failure");
    return std::get<std::string>(o);
  }
  if (auto it = transcript_.find(request.segment_id); it != transcript_.end()) {
    if (request.kind == RequestKind::Caption) return it->second.caption;
    std::string joined;
    for (const auto& r : it->second.rephrasings) joined += r + "\n";
    return joined;
  }
  if (request.kind == RequestKind::Caption) return synthetic_caption(request.segment_id);
  const std::string& c = request.user_text;
  return c + "\nplease " + c + "\n" + c + " now\ngo ahead and " + c + "\n" + c + " carefully\n";
}

int MockCaptionClient::calls() const {
  std::lock_guard lock(mu_);
  return calls_;
}

bool is_not_action(const std::string& text) {
  std::string s;
  for (unsigned char c : text) {
    if (!std::isspace(c) && c != '"' && c != '\'' && c != '.') s += static_cast<char>(std::tolower(c));
  }
  return s == "n/a" || s == "na";
}

CaptionResult request_caption(const CaptionRequest& request, CaptionClient& client, const RetryPolicy& retry) {
  CaptionResult res;
  res.segment_id = request.segment_id;
  for (int attempt = 1; attempt <= retry.max_attempts; ++attempt) {
    try {
      const std::string body = trim(client.complete(request));
      const std::string first = clean_line(body.substr(0, body.find('\n')));
      if (first.empty()) {
        res.error = "empty response";
      } else if (is_not_action(first)) {
        res.status = CaptionStatus::NotAction;
        res.error.clear();
        return res;
      } else {
        res.status = CaptionStatus::Ok;
        res.caption = first;
        res.error.clear();
        return res;
      }
    } catch (const TransientError& e) {
      res.error = e.what();
    }
    if (attempt < retry.max_attempts) backoff(retry, attempt);
  }
  res.status = CaptionStatus::Failed;
  return res;
}

std::vector<std::string> request_rephrasings(const CaptionRequest& request, CaptionClient& client,
                                             const RetryPolicy& retry, int limit) {
  std::string error = "no attempts";
  for (int attempt = 1; attempt <= retry.max_attempts; ++attempt) {
    try {
      const std::string body = client.complete(request);
      std::vector<std::string> out;
      std::vector<std::string> seen;
      std::size_t pos = 0;
      while (pos <= body.size() && static_cast<int>(out.size()) < limit) {
        const auto nl = body.find('\n', pos);
        const std::string line = clean_line(body.substr(pos, nl == std::string::npos ? std::string::npos : nl - pos));
        pos = nl == std::string::npos ? body.size() + 1 : nl + 1;
        if (line.empty() || is_not_action(line)) continue;
        const std::string key = segment::normalize_caption(line);
        if (std::find(seen.begin(), seen.end(), key) != seen.end()) continue;
        seen.push_back(key);
        out.push_back(line);
      }
      if (!out.empty()) return out;
      error = "empty response";
    } catch (const TransientError& e) {
      error = e.what();
    }
    if (attempt < retry.max_attempts) backoff(retry, attempt);
  }
  throw std::runtime_error("rephrasing failed: " + error);
}

std::vector<CaptionResult> caption_batch(const std::vector<CaptionRequest>& requests, CaptionClient& client,
                                         InflightLimiter& limiter, const CaptionConfig& config,
                                         const RetryPolicy& retry) {
  std::vector<CaptionResult> results(requests.size());
  std::atomic<std::size_t> next{0};

  // One limiter slot per wire call.
  struct Slot {
    InflightLimiter& l;
    explicit Slot(InflightLimiter& lim) : l(lim) { l.acquire(); }
    ~Slot() { l.release(); }
  };
  class LimitedClient : public CaptionClient {
   public:
    LimitedClient(CaptionClient& inner, InflightLimiter& lim) : inner_(inner), lim_(lim) {}
    std::string complete(const CaptionRequest& r) override {
      Slot s(lim_);
      return inner_.complete(r);
    }

   private:
    CaptionClient& inner_;
    InflightLimiter& lim_;
  } limited(client, limiter);

  auto worker = [&] {
    for (std::size_t i = next++; i < requests.size(); i = next++) {
      CaptionResult r = request_caption(requests[i], limited, retry);
      if (r.status == CaptionStatus::Ok && config.rephrasings > 0) {
        try {
          r.rephrasings = request_rephrasings(build_rephrase_request(r.caption, config, r.segment_id), limited, retry,
                                              config.rephrasings);
        } catch (const std::runtime_error& e) {
          r.error = e.what();
        }
      }
      results[i] = std::move(r);
    }
  };
  const std::size_t n_workers = std::min<std::size_t>(requests.size(), limiter.capacity());
  std::vector<std::jthread> pool;
  for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
  pool.clear();
  return results;
}

}  // namespace handvla::caption
