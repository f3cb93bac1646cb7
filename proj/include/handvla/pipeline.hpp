#pragma once

// Batch orchestration: per-video stages run in order, videos in parallel,
// with an append-only JSONL manifest that makes reruns incremental.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "handvla/caption.hpp"
#include "handvla/log.hpp"
#include "handvla/segment.hpp"
#include "handvla/tracks.hpp"
#include "json.hpp"

namespace handvla::pipeline {

enum class Stage { Ingest, Segment, Caption, Merge, BuildEpisodes, Stats };

std::string_view stage_name(Stage s);
Stage parse_stage(std::string_view name);  // throws UsageError
const std::vector<Stage>& all_stages();
std::optional<Stage> upstream(Stage s);
bool per_video(Stage s);

struct CaptionSettings {
  std::string client = "mock";  // "mock" | "http"
  std::string endpoint;
  std::filesystem::path transcript;  // mock only, optional
  caption::CaptionConfig config;
  int max_inflight = 8;
  int max_attempts = 5;
  double base_delay_s = 0.5;
  double timeout_s = 60.0;
};

struct PipelineConfig {
  std::filesystem::path tracks_dir;
  std::filesystem::path work_dir;
  std::filesystem::path frames_dir;   // optional: <frames>/<video>/<frame %06d>.ppm
  std::filesystem::path reports_dir;  // defaults to <work>/reports
  std::map<Stage, bool> enabled;      // stage toggles for run-all
  tracks::SmoothConfig smooth;
  tracks::OutlierConfig outliers;
  double chunk_s = 20.0;
  double overlap_s = 5.0;
  double flow_threshold_px = 1.0;
  segment::SegmentConfig segment;
  CaptionSettings caption;
  std::string dataset_name = "default";
  std::uint64_t seed = 0;
  int jobs = 1;

  // Parameter sections as loaded, used in stage input hashes.
  nlohmann::json sections = nlohmann::json::object();
};

// Relative paths resolve against the config file's directory. Unknown keys,
// wrong types and out-of-range values throw ConfigError.
PipelineConfig load_config(const std::filesystem::path& path);
PipelineConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir);
nlohmann::json default_config_json();

struct ManifestRecord {
  std::string video;  // "*" for corpus-level stages
  Stage stage = Stage::Ingest;
  bool ok = false;
  std::string input_hash;
  std::string output_hash;
  std::vector<std::string> outputs;  // relative to the work dir
  std::int64_t timestamp = 0;
  std::string error;
  nlohmann::json detail = nlohmann::json::object();

  nlohmann::json to_json() const;
  static ManifestRecord from_json(const nlohmann::json& j);
};

class Manifest {
 public:
  // Missing file reads as empty. Malformed lines throw ParseError.
  static Manifest load(const std::filesystem::path& path);

  const ManifestRecord* latest(const std::string& video, Stage stage) const;
  const std::vector<ManifestRecord>& records() const { return records_; }
  void add(ManifestRecord r);

 private:
  std::vector<ManifestRecord> records_;
  std::map<std::pair<std::string, Stage>, std::size_t> latest_;
};

struct RunOptions {
  std::vector<Stage> stages;
  int jobs = 0;  // 0 uses the config value
  bool strict = false;
  int abort_after = -1;  // _Exit after this many manifest appends; testing only
  std::vector<std::string> videos;  // empty means every track file
  caption::CaptionClient* client = nullptr;  // overrides the configured captioner
  log::Logger* logger = nullptr;
};

struct RunSummary {
  int ran = 0;
  int skipped = 0;
  int failed = 0;
  std::vector<std::string> failed_videos;
};

// Throws UsageError when a requested stage's prerequisite has no manifest record.
RunSummary run(const PipelineConfig& config, const RunOptions& options);

// 0 unless strict mode saw a per-video failure.
int exit_code(const RunSummary& summary, bool strict);

std::vector<std::string> discover_videos(const std::filesystem::path& tracks_dir);

// Paths inside the work dir.
std::filesystem::path manifest_path(const PipelineConfig& c);
std::filesystem::path video_dir(const PipelineConfig& c, const std::string& video);

// Writes via a temporary sibling and rename.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace handvla::pipeline
