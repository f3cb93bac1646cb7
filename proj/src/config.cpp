#include <fstream>

#include "handvla/errors.hpp"
#include "handvla/pipeline.hpp"

namespace handvla::pipeline {

using nlohmann::json;

json default_config_json() {
  return json{
      {"paths", {{"tracks", ""}, {"work", ""}, {"frames", ""}, {"reports", ""}}},
      {"stages",
       {{"ingest", true}, {"segment", true}, {"caption", true}, {"merge", true}, {"build-episodes", true}, {"stats", true}}},
      {"tracks",
       {{"spline_lambda", 1e-4},
        {"rotation_sigma_s", 0.1},
        {"hull_window_s", 0.1},
        {"outlier_z", 4.0},
        {"outlier_window_s", 0.5},
        {"outlier_sigma_floor_mps", 0.05},
        {"chunk_s", 20.0},
        {"overlap_s", 5.0},
        {"flow_threshold_px", 1.0}}},
      {"segment", {{"sigma_s", 0.1}, {"window_s", 0.5}, {"min_len_s", 0.5}, {"merge_gap_s", 0.2}}},
      {"caption",
       {{"client", "mock"},
        {"endpoint", ""},
        {"transcript", ""},
        {"model", "gpt-4.1"},
        {"system_prompt", ""},
        {"rephrase_prompt", ""},
        {"frames", 8},
        {"rephrasings", 5},
        {"max_inflight", 8},
        {"max_attempts", 5},
        {"base_delay_s", 0.5},
        {"timeout_s", 60.0},
        {"palm_offset", {0.0, 0.0, 0.08}},
        {"line_width_px", 3.0}}},
      {"episodes", {{"dataset_name", "default"}}},
      {"seed", 0},
      {"jobs", 1},
  };
}

namespace {

bool same_kind(const json& a, const json& b) {
  if (a.is_number() && b.is_number()) {
    // Integer slots reject fractional values.
    return !(a.is_number_integer() && b.is_number_float());
  }
  return a.type() == b.type();
}

void overlay(json& base, const json& user, const std::string& where) {
  if (!user.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [k, v] : user.items()) {
    const std::string path = where.empty() ? k : where + "." + k;
    auto it = base.find(k);
    if (it == base.end()) throw ConfigError("unknown config key '" + path + "'");
    if (it->is_object()) {
      overlay(*it, v, path);
    } else {
      if (!same_kind(*it, v)) throw ConfigError("config key '" + path + "' has the wrong type");
      if (it->is_array() && it->size() != v.size()) throw ConfigError("config key '" + path + "' has the wrong length");
      *it = v;
    }
  }
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  if (p.empty()) return {};
  std::filesystem::path q(p);
  return q.is_absolute() ? q : base / q;
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

}  // namespace

PipelineConfig parse_config(const json& user, const std::filesystem::path& base_dir) {
  json j = default_config_json();
  overlay(j, user, "");

  PipelineConfig c;
  const auto& p = j["paths"];
  require(!p["tracks"].get<std::string>().empty(), "paths.tracks is required");
  require(!p["work"].get<std::string>().empty(), "paths.work is required");
  c.tracks_dir = resolve(base_dir, p["tracks"]);
  c.work_dir = resolve(base_dir, p["work"]);
  c.frames_dir = resolve(base_dir, p["frames"]);
  c.reports_dir = p["reports"].get<std::string>().empty() ? c.work_dir / "reports" : resolve(base_dir, p["reports"]);

  for (Stage s : all_stages()) c.enabled[s] = j["stages"][std::string(stage_name(s))].get<bool>();

  const auto& t = j["tracks"];
  c.smooth.spline_lambda = t["spline_lambda"];
  c.smooth.rotation_sigma_s = t["rotation_sigma_s"];
  c.smooth.hull_window_s = t["hull_window_s"];
  c.outliers.z_thresh = t["outlier_z"];
  c.outliers.window_s = t["outlier_window_s"];
  c.outliers.sigma_floor_mps = t["outlier_sigma_floor_mps"];
  c.chunk_s = t["chunk_s"];
  c.overlap_s = t["overlap_s"];
  c.flow_threshold_px = t["flow_threshold_px"];
  require(c.smooth.spline_lambda >= 0.0, "tracks.spline_lambda must be >= 0");
  require(c.smooth.rotation_sigma_s >= 0.0 && c.smooth.hull_window_s >= 0.0, "tracks smoothing windows must be >= 0");
  require(c.outliers.z_thresh > 0.0 && c.outliers.window_s > 0.0 && c.outliers.sigma_floor_mps > 0.0,
          "tracks outlier parameters must be positive");
  require(c.chunk_s > 0.0 && c.overlap_s >= 0.0 && c.overlap_s < c.chunk_s, "tracks: need 0 <= overlap_s < chunk_s");

  const auto& s = j["segment"];
  c.segment.sigma_s = s["sigma_s"];
  c.segment.window_s = s["window_s"];
  c.segment.min_len_s = s["min_len_s"];
  c.segment.merge_gap_s = s["merge_gap_s"];
  require(c.segment.sigma_s >= 0.0 && c.segment.window_s > 0.0 && c.segment.min_len_s >= 0.0 && c.segment.merge_gap_s >= 0.0,
          "segment parameters out of range");

  const auto& cap = j["caption"];
  c.caption.client = cap["client"];
  require(c.caption.client == "mock" || c.caption.client == "http", "caption.client must be 'mock' or 'http'");
  c.caption.endpoint = cap["endpoint"];
  require(c.caption.client != "http" || !c.caption.endpoint.empty(), "caption.endpoint is required for the http client");
  c.caption.transcript = resolve(base_dir, cap["transcript"]);
  c.caption.config.model = cap["model"];
  c.caption.config.system_prompt = cap["system_prompt"];
  c.caption.config.rephrase_prompt = cap["rephrase_prompt"];
  c.caption.config.frames = cap["frames"];
  c.caption.config.rephrasings = cap["rephrasings"];
  const auto& po = cap["palm_offset"];
  c.caption.config.overlay.palm_offset = geom::Vec3(po[0].get<double>(), po[1].get<double>(), po[2].get<double>());
  c.caption.config.overlay.line_width_px = cap["line_width_px"];
  c.caption.max_inflight = cap["max_inflight"];
  c.caption.max_attempts = cap["max_attempts"];
  c.caption.base_delay_s = cap["base_delay_s"];
  c.caption.timeout_s = cap["timeout_s"];
  require(c.caption.config.frames >= 1, "caption.frames must be >= 1");
  require(c.caption.config.rephrasings >= 0, "caption.rephrasings must be >= 0");
  require(c.caption.config.overlay.line_width_px > 0.0, "caption.line_width_px must be positive");
  require(c.caption.max_inflight >= 1 && c.caption.max_inflight <= 1024, "caption.max_inflight must be in [1, 1024]");
  require(c.caption.max_attempts >= 1, "caption.max_attempts must be >= 1");
  require(c.caption.base_delay_s >= 0.0 && c.caption.timeout_s > 0.0, "caption delays out of range");

  c.dataset_name = j["episodes"]["dataset_name"];
  require(!c.dataset_name.empty(), "episodes.dataset_name must not be empty");
  require(j["seed"].get<long long>() >= 0, "seed must be >= 0");
  c.seed = j["seed"].get<std::uint64_t>();
  c.jobs = j["jobs"];
  require(c.jobs >= 1, "jobs must be >= 1");

  c.sections["tracks"] = j["tracks"];
  c.sections["segment"] = j["segment"];
  json content = j["caption"];
  // Transport settings do not change what a caption is.
  for (const char* k : {"client", "endpoint", "max_inflight", "max_attempts", "base_delay_s", "timeout_s"}) content.erase(k);
  c.sections["caption"] = content;
  c.sections["episodes"] = j["episodes"];
  return c;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_config(j, path.parent_path());
}

}  // namespace handvla::pipeline
