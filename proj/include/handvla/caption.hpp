#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <variant>
#include <vector>

#include "handvla/image.hpp"
#include "handvla/tracks.hpp"

namespace handvla::caption {

// n offsets in [0, length) evenly spaced, first and last included.
std::vector<int> sample_frames(int length, int n = 8);

struct OverlayVertex {
  geom::Vec2 px;
  double t = 0.0;  // 0 at the current frame, 1 at the end of the tail
};

struct OverlayFrame {
  int frame_index = 0;
  Image image;
  // Projections of every in-front palm point, in time order.
  std::vector<OverlayVertex> vertices;
  // The same polyline clipped to the image rectangle; one stroke per visible run.
  std::vector<std::vector<OverlayVertex>> strokes;
};

struct OverlayConfig {
  geom::Vec3 palm_offset{0.0, 0.0, 0.08};  // in the wrist frame, metres
  double line_width_px = 3.0;
};

geom::Vec3 palm_point(const geom::Pose& wrist, const geom::Vec3& offset);

// Projects the palm from frame_index up to tail_end (exclusive) into the
// camera at frame_index and draws it over `frame`.
OverlayFrame render_overlay(const Image& frame, const tracks::HandTrack& world_track, int frame_index,
                            int tail_end, const tracks::CameraTrackFrame& camera,
                            const geom::CameraIntrinsics& intrinsics, const OverlayConfig& config = {});

enum class RequestKind { Caption, Rephrase };

struct CaptionConfig {
  std::string model = "gpt-4.1";
  std::string system_prompt;    // empty selects default_system_prompt()
  std::string rephrase_prompt;  // empty selects default_rephrase_prompt()
  int frames = 8;
  int rephrasings = 5;
  OverlayConfig overlay;
};

// Shipped prompt wording; a paraphrase of the production prompt, not a copy.
const std::string& default_system_prompt();
const std::string& default_rephrase_prompt();

struct CaptionRequest {
  RequestKind kind = RequestKind::Caption;
  std::string segment_id;  // routing only; not part of the wire body
  std::string model;
  std::string system_text;
  std::vector<std::vector<std::uint8_t>> images_png;
  std::string user_text;

  // Wire body: {"model","system","user","images":[{"format":"png","data":<base64>}]}.
  std::string to_json() const;
};

CaptionRequest build_prompt(const std::vector<Image>& frames, Hand hand, const CaptionConfig& config,
                            const std::string& segment_id = {});
CaptionRequest build_rephrase_request(const std::string& caption, const CaptionConfig& config,
                                      const std::string& segment_id = {});

class CaptionClient {
 public:
  virtual ~CaptionClient() = default;
  // Returns the response text body; throws TransientError on transport failure.
  virtual std::string complete(const CaptionRequest& request) = 0;
};

struct HttpClientConfig {
  std::string endpoint;  // http://host:port/path
  std::string api_key;
  double timeout_s = 60.0;
};

std::unique_ptr<CaptionClient> make_http_client(const HttpClientConfig& config);

// Offline client. Scripted outcomes are consumed first, in call order; then
// per-segment transcript entries; otherwise a deterministic caption derived
// from the segment id.
class MockCaptionClient : public CaptionClient {
 public:
  struct Failure {};
  using Outcome = std::variant<std::string, Failure>;
  struct TranscriptEntry {
    std::string caption;
    std::vector<std::string> rephrasings;
  };

  MockCaptionClient() = default;
  explicit MockCaptionClient(std::vector<Outcome> script) : script_(std::move(script)) {}

  void set_transcript(std::map<std::string, TranscriptEntry> transcript) { transcript_ = std::move(transcript); }
  // Transcript file: one {"segment","caption","rephrasings":[...]} object per line.
  static std::map<std::string, TranscriptEntry> load_transcript(const std::filesystem::path& path);

  std::string complete(const CaptionRequest& request) override;
  int calls() const;

 private:
  mutable std::mutex mu_;
  std::vector<Outcome> script_;
  std::size_t next_ = 0;
  int calls_ = 0;
  std::map<std::string, TranscriptEntry> transcript_;
};

// Synthetic caption used by the mock when nothing is scripted.
std::string synthetic_caption(const std::string& segment_id);

struct RetryPolicy {
  int max_attempts = 5;
  double base_delay_s = 0.5;
  std::function<void(double)> sleep;  // defaults to std::this_thread::sleep_for
};

enum class CaptionStatus { Ok, NotAction, Failed };

struct CaptionResult {
  std::string segment_id;
  CaptionStatus status = CaptionStatus::Failed;
  std::string caption;
  std::vector<std::string> rephrasings;
  std::string error;
};

bool is_not_action(const std::string& text);

CaptionResult request_caption(const CaptionRequest& request, CaptionClient& client, const RetryPolicy& retry = {});
// At most `limit` distinct rephrasings; throws std::runtime_error after retries.
std::vector<std::string> request_rephrasings(const CaptionRequest& request, CaptionClient& client,
                                             const RetryPolicy& retry = {}, int limit = 5);

// Caps concurrent in-flight requests across all callers sharing it.
class InflightLimiter {
 public:
  explicit InflightLimiter(int max_inflight)
      : capacity_(std::clamp(max_inflight, 1, 1024)), sem_(capacity_) {}
  void acquire() { sem_.acquire(); }
  void release() { sem_.release(); }
  int capacity() const { return capacity_; }

 private:
  int capacity_;
  std::counting_semaphore<1024> sem_;
};

// Captions then rephrases every request concurrently; results in input order.
std::vector<CaptionResult> caption_batch(const std::vector<CaptionRequest>& requests, CaptionClient& client,
                                         InflightLimiter& limiter, const CaptionConfig& config,
                                         const RetryPolicy& retry = {});

}  // namespace handvla::caption
