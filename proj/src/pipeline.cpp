#include "handvla/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>

#include "handvla/episode.hpp"
#include "handvla/errors.hpp"
#include "handvla/hash.hpp"

namespace handvla::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr std::pair<Stage, const char*> kNames[] = {
    {Stage::Ingest, "ingest"}, {Stage::Segment, "segment"},         {Stage::Caption, "caption"},
    {Stage::Merge, "merge"},   {Stage::BuildEpisodes, "build-episodes"}, {Stage::Stats, "stats"},
};

}  // namespace

std::string_view stage_name(Stage s) {
  for (auto [st, n] : kNames)
    if (st == s) return n;
  return "?";
}

Stage parse_stage(std::string_view name) {
  for (auto [st, n] : kNames)
    if (name == n) return st;
  throw UsageError("unknown stage '" + std::string(name) + "'");
}

const std::vector<Stage>& all_stages() {
  static const std::vector<Stage> s{Stage::Ingest, Stage::Segment, Stage::Caption,
                                    Stage::Merge,  Stage::BuildEpisodes, Stage::Stats};
  return s;
}

std::optional<Stage> upstream(Stage s) {
  switch (s) {
    case Stage::Ingest: return std::nullopt;
    case Stage::Segment: return Stage::Ingest;
    case Stage::Caption: return Stage::Segment;
    case Stage::Merge: return Stage::Caption;
    case Stage::BuildEpisodes: return Stage::Merge;
    case Stage::Stats: return Stage::BuildEpisodes;
  }
  return std::nullopt;
}

bool per_video(Stage s) { return s != Stage::Stats; }

json ManifestRecord::to_json() const {
  json j{{"video", video},
         {"stage", stage_name(stage)},
         {"status", ok ? "done" : "failed"},
         {"input_hash", input_hash},
         {"output_hash", output_hash},
         {"outputs", outputs},
         {"timestamp", timestamp},
         {"detail", detail}};
  if (!ok) j["error"] = error;
  return j;
}

ManifestRecord ManifestRecord::from_json(const json& j) {
  ManifestRecord r;
  r.video = j.at("video").get<std::string>();
  r.stage = parse_stage(j.at("stage").get<std::string>());
  const auto status = j.at("status").get<std::string>();
  if (status != "done" && status != "failed") throw SchemaError("bad manifest status '" + status + "'");
  r.ok = status == "done";
  r.input_hash = j.at("input_hash").get<std::string>();
  r.output_hash = j.at("output_hash").get<std::string>();
  r.outputs = j.at("outputs").get<std::vector<std::string>>();
  r.timestamp = j.at("timestamp").get<std::int64_t>();
  if (j.contains("error")) r.error = j["error"].get<std::string>();
  if (j.contains("detail")) r.detail = j["detail"];
  return r;
}

Manifest Manifest::load(const fs::path& path) {
  Manifest m;
  std::ifstream in(path, std::ios::binary);
  if (!in) return m;
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t pos = 0, line = 0;
  while (pos < text.size()) {
    const std::size_t nl = text.find('\n', pos);
    const bool complete = nl != std::string::npos;
    const std::string row = text.substr(pos, complete ? nl - pos : std::string::npos);
    pos = complete ? nl + 1 : text.size();
    ++line;
    if (row.empty()) continue;
    try {
      m.add(ManifestRecord::from_json(json::parse(row)));
    } catch (const std::exception& e) {
      // A torn final line from an interrupted append is dropped.
      if (!complete) break;
      throw ParseError(line, std::string("manifest: ") + e.what());
    }
  }
  return m;
}

const ManifestRecord* Manifest::latest(const std::string& video, Stage stage) const {
  auto it = latest_.find({video, stage});
  return it == latest_.end() ? nullptr : &records_[it->second];
}

void Manifest::add(ManifestRecord r) {
  latest_[{r.video, r.stage}] = records_.size();
  records_.push_back(std::move(r));
}

int exit_code(const RunSummary& s, bool strict) { return strict && s.failed > 0 ? 1 : 0; }

std::vector<std::string> discover_videos(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ConfigError("tracks directory " + dir.string() + " does not exist");
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".jsonl") out.push_back(e.path().stem().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

fs::path manifest_path(const PipelineConfig& c) { return c.work_dir / "manifest.jsonl"; }
fs::path video_dir(const PipelineConfig& c, const std::string& v) { return c.work_dir / "videos" / v; }

void write_file_atomic(const fs::path& path, std::string_view bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

namespace {

struct StageOut {
  std::vector<std::string> outputs;
  json detail = json::object();
};

std::string segment_id(const segment::Segment& s) {
  return s.video + "_" + std::string(to_string(s.hand)) + "_" + std::to_string(s.start_frame) + "_" +
         std::to_string(s.end_frame);
}

std::string rel(const std::string& video, const std::string& name) { return "videos/" + video + "/" + name; }

std::vector<json> read_jsonl(const fs::path& path) {
  std::istringstream in(read_file(path));
  std::vector<json> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(json::parse(line));
  return out;
}

std::string jsonl(const std::vector<json>& rows) {
  std::string s;
  for (const auto& r : rows) s += r.dump() + "\n";
  return s;
}

struct CleanTrack {
  tracks::TrackFile file;
  tracks::HandPair world;
  std::map<int, const tracks::CameraTrackFrame*> cams;
};

class Runner {
 public:
  Runner(const PipelineConfig& cfg, const RunOptions& opt, log::Logger& log)
      : cfg_(cfg), opt_(opt), log_(log), limiter_(cfg.caption.max_inflight) {}

  RunSummary run();

 private:
  fs::path out_path(const std::string& r) const { return cfg_.work_dir / r; }
  std::string hash_outputs(const std::vector<std::string>& outputs) const;
  bool up_to_date(const ManifestRecord* rec, const std::string& input_hash) const;
  std::string input_hash(Stage s, const std::string& video, const std::map<Stage, ManifestRecord>& known) const;
  StageOut run_stage(Stage s, const std::string& video);
  void process_video(std::size_t i);
  void commit(std::size_t i, std::vector<ManifestRecord> recs, const RunSummary& partial);
  void append(const ManifestRecord& r);
  void run_stats();
  caption::CaptionClient& client();

  CleanTrack load_clean(const std::string& video) const;
  StageOut ingest(const std::string& video);
  StageOut segment_stage(const std::string& video);
  StageOut caption_stage(const std::string& video);
  StageOut merge(const std::string& video);
  StageOut build_episodes(const std::string& video);

  const PipelineConfig& cfg_;
  const RunOptions& opt_;
  log::Logger& log_;
  caption::InflightLimiter limiter_;
  std::unique_ptr<caption::CaptionClient> owned_client_;
  std::once_flag client_once_;

  std::vector<Stage> stages_;
  std::vector<std::string> videos_;
  Manifest manifest_;
  std::vector<std::map<Stage, ManifestRecord>> known_;

  std::mutex commit_mu_;
  std::ofstream manifest_out_;
  std::vector<std::optional<std::vector<ManifestRecord>>> pending_;
  std::size_t next_commit_ = 0;
  int appended_ = 0;
  RunSummary summary_;
};

std::string Runner::hash_outputs(const std::vector<std::string>& outputs) const {
  std::uint64_t h = fnv1a("outputs");
  for (const auto& r : outputs) {
    h = fnv1a(r, h);
    h = fnv1a(std::string_view("\0", 1), h);
    h = fnv1a(read_file(out_path(r)), h);
  }
  return hex64(h);
}

bool Runner::up_to_date(const ManifestRecord* rec, const std::string& ih) const {
  if (!rec || !rec->ok || rec->input_hash != ih) return false;
  for (const auto& r : rec->outputs)
    if (!fs::is_regular_file(out_path(r))) return false;
  return hash_outputs(rec->outputs) == rec->output_hash;
}

std::string Runner::input_hash(Stage s, const std::string& video, const std::map<Stage, ManifestRecord>& known) const {
  std::uint64_t h = fnv1a(stage_name(s));
  auto mix = [&h](std::string_view v) {
    h = fnv1a(v, h);
    h = fnv1a(std::string_view("\x1f", 1), h);
  };
  auto up = [&](Stage u) { mix(known.at(u).output_hash); };
  switch (s) {
    case Stage::Ingest:
      mix(read_file(cfg_.tracks_dir / (video + ".jsonl")));
      mix(cfg_.sections["tracks"].dump());
      break;
    case Stage::Segment:
      up(Stage::Ingest);
      mix(cfg_.sections["tracks"].dump());
      mix(cfg_.sections["segment"].dump());
      break;
    case Stage::Caption: {
      up(Stage::Ingest);
      up(Stage::Segment);
      mix(cfg_.sections["caption"].dump());
      if (!cfg_.caption.transcript.empty() && fs::exists(cfg_.caption.transcript)) mix(read_file(cfg_.caption.transcript));
      const fs::path fd = cfg_.frames_dir / video;
      if (!cfg_.frames_dir.empty() && fs::is_directory(fd)) {
        std::vector<std::pair<std::string, std::uintmax_t>> files;
        for (const auto& e : fs::directory_iterator(fd))
          if (e.is_regular_file()) files.emplace_back(e.path().filename().string(), e.file_size());
        std::sort(files.begin(), files.end());
        for (const auto& [n, sz] : files) mix(n + ":" + std::to_string(sz));
      }
      break;
    }
    case Stage::Merge:
      up(Stage::Caption);
      mix(cfg_.sections["segment"].dump());
      break;
    case Stage::BuildEpisodes:
      up(Stage::Ingest);
      up(Stage::Merge);
      mix(cfg_.sections["episodes"].dump());
      break;
    case Stage::Stats:
      break;
  }
  return hex64(h);
}

caption::CaptionClient& Runner::client() {
  if (opt_.client) return *opt_.client;
  std::call_once(client_once_, [this] {
    if (cfg_.caption.client == "http") {
      const char* key = std::getenv("HANDVLA_API_KEY");
      owned_client_ = caption::make_http_client({cfg_.caption.endpoint, key ? key : "", cfg_.caption.timeout_s});
    } else {
      auto mock = std::make_unique<caption::MockCaptionClient>();
      if (!cfg_.caption.transcript.empty()) mock->set_transcript(caption::MockCaptionClient::load_transcript(cfg_.caption.transcript));
      owned_client_ = std::move(mock);
    }
  });
  return *owned_client_;
}

CleanTrack Runner::load_clean(const std::string& video) const {
  CleanTrack c;
  c.file = tracks::load_track(out_path(rel(video, "clean.jsonl")));
  c.world = tracks::fuse_to_world(c.file.hands, c.file.cameras, c.file.fps);
  for (const auto& cam : c.file.cameras) c.cams[cam.frame_index] = &cam;
  return c;
}

StageOut Runner::ingest(const std::string& video) {
  const auto tf = tracks::load_track(cfg_.tracks_dir / (video + ".jsonl"));
  auto world = tracks::fuse_to_world(tf.hands, tf.cameras, tf.fps);
  json detail = json::object();
  detail["fps"] = tf.fps;
  detail["frames"] = world.left.size();
  detail["camera_motion"] = tf.flow.empty() ? "unknown"
                            : tracks::classify_camera_motion(tf.flow, cfg_.flow_threshold_px) == tracks::CameraMotion::Moving
                                ? "moving"
                                : "static";

  std::map<std::pair<int, Hand>, double> confidence;
  for (const auto& h : tf.hands) confidence[{h.frame_index, h.hand}] = h.confidence;

  for (Hand h : {Hand::Left, Hand::Right}) {
    auto count_valid = [](const tracks::HandTrack& t) {
      return std::count_if(t.samples.begin(), t.samples.end(), [](const auto& s) { return s.valid; });
    };
    const auto before = count_valid(world[h]);
    auto cleaned = tracks::remove_outliers(world[h], cfg_.outliers);
    const auto after = count_valid(cleaned);
    auto sm = tracks::smooth_track(cleaned, cfg_.smooth);
    world[h] = std::move(sm.track);
    detail["outliers"][std::string(to_string(h))] = before - after;
    detail["short_spans"][std::string(to_string(h))] = sm.short_spans;
  }

  tracks::TrackFile out;
  out.fps = tf.fps;
  out.intrinsics = tf.intrinsics;
  out.cameras = tf.cameras;
  out.flow = tf.flow;
  for (const auto& cam : tf.cameras) {
    const geom::Pose cam_from_world = cam.world_from_cam.inverse();
    for (Hand h : {Hand::Left, Hand::Right}) {
      const auto& tr = world[h];
      if (cam.frame_index < tr.first_frame || cam.frame_index >= tr.end_frame()) continue;
      const auto& s = tr.at_frame(cam.frame_index);
      if (!s.valid) continue;
      tracks::HandTrackFrame r;
      r.frame_index = cam.frame_index;
      r.hand = h;
      r.wrist_pose_cam = cam_from_world * s.wrist;
      r.joint_angles = s.joints;
      auto it = confidence.find({cam.frame_index, h});
      r.confidence = it == confidence.end() ? 1.0 : it->second;
      out.hands.push_back(r);
    }
  }
  std::ostringstream os;
  tracks::write_track(os, out);
  write_file_atomic(out_path(rel(video, "clean.jsonl")), os.str());
  write_file_atomic(out_path(rel(video, "ingest.json")), detail.dump(2) + "\n");
  return {{rel(video, "clean.jsonl"), rel(video, "ingest.json")}, detail};
}

StageOut Runner::segment_stage(const std::string& video) {
  const auto c = load_clean(video);
  const int frames = c.world.left.size();
  const int first = c.world.left.first_frame;
  const auto chunks = tracks::chop_video(frames, c.file.fps, cfg_.chunk_s, cfg_.overlap_s);
  const int ov = chunks.size() > 1 ? chunks[0].end - chunks[1].begin : 0;

  std::vector<segment::Segment> segs;
  for (Hand h : {Hand::Left, Hand::Right}) {
    const auto& tr = c.world[h];
    for (std::size_t i = 0; i < chunks.size(); ++i) {
      tracks::HandTrack slice;
      slice.hand = h;
      slice.fps = tr.fps;
      slice.first_frame = first + chunks[i].begin;
      slice.samples.assign(tr.samples.begin() + chunks[i].begin, tr.samples.begin() + chunks[i].end);
      // Each chunk owns the frames up to the middle of its overlaps.
      const int own_b = i == 0 ? chunks[i].begin : chunks[i].begin + ov / 2;
      const int own_e = i + 1 == chunks.size() ? chunks[i].end : chunks[i + 1].begin + ov / 2;
      for (auto& s : segment::segment_track(slice, video, cfg_.segment)) {
        const int b = s.start_frame - first;
        if (b >= own_b && b < own_e) segs.push_back(s);
      }
    }
  }
  std::ostringstream os;
  segment::write_segments(os, segs);
  write_file_atomic(out_path(rel(video, "segments.jsonl")), os.str());
  json detail{{"segments", segs.size()}, {"chunks", chunks.size()}};
  return {{rel(video, "segments.jsonl")}, detail};
}

StageOut Runner::caption_stage(const std::string& video) {
  const auto c = load_clean(video);
  std::vector<segment::Segment> segs;
  {
    std::istringstream in(read_file(out_path(rel(video, "segments.jsonl"))));
    segs = segment::read_segments(in);
  }
  const auto& k = c.file.intrinsics;
  std::vector<caption::CaptionRequest> requests;
  for (const auto& s : segs) {
    std::vector<Image> images;
    for (int off : caption::sample_frames(s.length(), cfg_.caption.config.frames)) {
      const int f = s.start_frame + off;
      Image base;
      char name[32];
      std::snprintf(name, sizeof name, "%06d.ppm", f);
      const fs::path fp = cfg_.frames_dir / video / name;
      if (!cfg_.frames_dir.empty() && fs::is_regular_file(fp)) {
        base = read_ppm(fp);
      } else {
        base = Image(k.width, k.height);  // no footage: overlay on a black canvas
      }
      auto cam = c.cams.find(f);
      if (cam == c.cams.end()) {
        images.push_back(std::move(base));
        continue;
      }
      images.push_back(
          caption::render_overlay(base, c.world[s.hand], f, s.end_frame, *cam->second, k, cfg_.caption.config.overlay).image);
    }
    requests.push_back(caption::build_prompt(images, s.hand, cfg_.caption.config, segment_id(s)));
  }

  caption::RetryPolicy retry;
  retry.max_attempts = cfg_.caption.max_attempts;
  retry.base_delay_s = cfg_.caption.base_delay_s;
  const auto results = caption::caption_batch(requests, client(), limiter_, cfg_.caption.config, retry);

  std::vector<json> rows;
  int ok = 0, not_action = 0, failed = 0;
  for (std::size_t i = 0; i < segs.size(); ++i) {
    const auto& r = results[i];
    const char* status = r.status == caption::CaptionStatus::Ok          ? "ok"
                         : r.status == caption::CaptionStatus::NotAction ? "not_action"
                                                                         : "failed";
    ok += r.status == caption::CaptionStatus::Ok;
    not_action += r.status == caption::CaptionStatus::NotAction;
    failed += r.status == caption::CaptionStatus::Failed;
    json row{{"segment", r.segment_id},
             {"video", video},
             {"hand", to_string(segs[i].hand)},
             {"start_frame", segs[i].start_frame},
             {"end_frame", segs[i].end_frame},
             {"status", status},
             {"caption", r.caption},
             {"rephrasings", r.rephrasings}};
    if (!r.error.empty()) row["error"] = r.error;
    rows.push_back(std::move(row));
  }
  if (!segs.empty() && failed == static_cast<int>(segs.size())) {
    throw std::runtime_error("every caption request failed: " + results.front().error);
  }
  if (failed > 0) log_.warn("caption_partial_failure", {{"video", video}, {"failed", failed}}, log::correlation_id(video));
  write_file_atomic(out_path(rel(video, "captions.jsonl")), jsonl(rows));
  return {{rel(video, "captions.jsonl")}, {{"ok", ok}, {"not_action", not_action}, {"failed", failed}}};
}

StageOut Runner::merge(const std::string& video) {
  const auto info = json::parse(read_file(out_path(rel(video, "ingest.json"))));
  const double fps = info.at("fps").get<double>();
  std::vector<segment::CaptionedSegment> segs;
  std::map<std::pair<Hand, int>, std::vector<std::string>> rephrasings;
  for (const auto& r : read_jsonl(out_path(rel(video, "captions.jsonl")))) {
    if (r.at("status") != "ok") continue;
    segment::Segment s{video, parse_hand(r.at("hand").get<std::string>()), r.at("start_frame").get<int>(),
                       r.at("end_frame").get<int>()};
    rephrasings[{s.hand, s.start_frame}] = r.at("rephrasings").get<std::vector<std::string>>();
    segs.push_back({s, r.at("caption").get<std::string>()});
  }
  const std::size_t before = segs.size();
  const auto merged = segment::merge_segments(std::move(segs), fps, cfg_.segment.merge_gap_s);
  std::vector<json> rows;
  for (const auto& m : merged) {
    rows.push_back({{"id", segment_id(m.segment)},
                    {"video", video},
                    {"hand", to_string(m.segment.hand)},
                    {"start_frame", m.segment.start_frame},
                    {"end_frame", m.segment.end_frame},
                    {"caption", m.caption},
                    {"rephrasings", rephrasings[{m.segment.hand, m.segment.start_frame}]}});
  }
  write_file_atomic(out_path(rel(video, "merged.jsonl")), jsonl(rows));
  return {{rel(video, "merged.jsonl")}, {{"captioned", before}, {"merged", merged.size()}}};
}

StageOut Runner::build_episodes(const std::string& video) {
  const auto c = load_clean(video);
  const auto rows = read_jsonl(out_path(rel(video, "merged.jsonl")));
  struct Item {
    std::string id;
    Hand hand;
    int b, e;
    std::string caption;
    std::vector<std::string> rephrasings;
  };
  std::vector<Item> items;
  for (const auto& r : rows) {
    items.push_back({r.at("id").get<std::string>(), parse_hand(r.at("hand").get<std::string>()), r.at("start_frame").get<int>(),
                     r.at("end_frame").get<int>(), r.at("caption").get<std::string>(),
                     r.at("rephrasings").get<std::vector<std::string>>()});
  }

  StageOut out;
  std::set<std::string> written;
  fs::create_directories(out_path(rel(video, "episodes")));
  for (const auto& m : items) {
    // The other hand's instruction comes from its segment overlapping this one the most.
    const Item* partner = nullptr;
    int best = 0;
    for (const auto& o : items) {
      if (o.hand == m.hand) continue;
      const int ov = std::min(m.e, o.e) - std::max(m.b, o.b);
      if (ov > best) {
        best = ov;
        partner = &o;
      }
    }
    std::optional<std::string> mine = m.caption, theirs;
    if (partner) theirs = partner->caption;

    episode::EpisodeInput in;
    in.id = m.id;
    in.video = video;
    in.primary_hand = m.hand;
    in.start_frame = m.b;
    in.end_frame = m.e;
    in.fps = c.file.fps;
    in.intrinsics = c.file.intrinsics;
    in.world = &c.world;
    in.cameras = c.file.cameras;
    in.instruction = m.hand == Hand::Left ? episode::format_instruction(mine, theirs) : episode::format_instruction(theirs, mine);
    in.caption_variants = m.rephrasings;
    in.labelled[static_cast<int>(m.hand)] = {{m.b, m.e}};
    if (partner) in.labelled[static_cast<int>(other(m.hand))] = {{partner->b, partner->e}};
    const auto ep = episode::build_episode(in);
    ep.validate();
    const std::string r = rel(video, "episodes/" + m.id + ".hvep");
    episode::save_episode(out_path(r), ep);
    out.outputs.push_back(r);
    written.insert(m.id + ".hvep");
  }
  // Episodes from an earlier run over different inputs must not linger.
  const fs::path dir = out_path(rel(video, "episodes"));
  if (fs::is_directory(dir)) {
    for (const auto& e : fs::directory_iterator(dir))
      if (!written.contains(e.path().filename().string())) fs::remove(e.path());
  }
  json list = json::array();
  for (const auto& r : out.outputs) list.push_back(r);
  write_file_atomic(out_path(rel(video, "episodes.json")), json{{"episodes", list}}.dump(2) + "\n");
  out.outputs.push_back(rel(video, "episodes.json"));
  out.detail = {{"episodes", items.size()}};
  return out;
}

StageOut Runner::run_stage(Stage s, const std::string& video) {
  switch (s) {
    case Stage::Ingest: return ingest(video);
    case Stage::Segment: return segment_stage(video);
    case Stage::Caption: return caption_stage(video);
    case Stage::Merge: return merge(video);
    case Stage::BuildEpisodes: return build_episodes(video);
    case Stage::Stats: break;
  }
  throw std::logic_error("run_stage: corpus stage");
}

void Runner::append(const ManifestRecord& r) {
  manifest_out_ << r.to_json().dump() << '\n';
  manifest_out_.flush();
  manifest_.add(r);
  ++appended_;
  if (opt_.abort_after >= 0 && appended_ >= opt_.abort_after) {
    log_.warn("abort_after", {{"records", appended_}});
    std::_Exit(75);
  }
}

void Runner::commit(std::size_t i, std::vector<ManifestRecord> recs, const RunSummary& partial) {
  std::lock_guard lock(commit_mu_);
  summary_.ran += partial.ran;
  summary_.skipped += partial.skipped;
  summary_.failed += partial.failed;
  pending_[i] = std::move(recs);
  // Records land in video order regardless of which worker finishes first.
  while (next_commit_ < pending_.size() && pending_[next_commit_]) {
    for (const auto& r : *pending_[next_commit_]) append(r);
    ++next_commit_;
  }
}

void Runner::process_video(std::size_t i) {
  const std::string& video = videos_[i];
  const std::string corr = log::correlation_id(video);
  auto& known = known_[i];
  std::vector<ManifestRecord> recs;
  RunSummary part;
  for (Stage s : stages_) {
    if (!per_video(s)) continue;
    if (auto u = upstream(s)) {
      auto it = known.find(*u);
      if (it == known.end() || !it->second.ok) {
        log_.warn("stage_blocked", {{"video", video}, {"stage", stage_name(s)}, {"needs", stage_name(*u)}}, corr);
        break;
      }
    }
    ManifestRecord rec;
    rec.video = video;
    rec.stage = s;
    try {
      rec.input_hash = input_hash(s, video, known);
      auto prev = known.find(s);
      if (up_to_date(prev == known.end() ? nullptr : &prev->second, rec.input_hash)) {
        ++part.skipped;
        log_.info("stage_skipped", {{"video", video}, {"stage", stage_name(s)}}, corr);
        continue;
      }
      log_.debug("stage_start", {{"video", video}, {"stage", stage_name(s)}}, corr);
      auto out = run_stage(s, video);
      rec.ok = true;
      rec.outputs = std::move(out.outputs);
      rec.output_hash = hash_outputs(rec.outputs);
      rec.detail = std::move(out.detail);
      rec.timestamp = log::timestamp();
      ++part.ran;
      log_.info("stage_done", {{"video", video}, {"stage", stage_name(s)}, {"detail", rec.detail}}, corr);
    } catch (const std::exception& e) {
      rec.ok = false;
      rec.error = e.what();
      rec.timestamp = log::timestamp();
      ++part.failed;
      part.failed_videos.push_back(video);
      log_.error("stage_failed", {{"video", video}, {"stage", stage_name(s)}, {"error", rec.error}}, corr);
    }
    known[s] = rec;
    recs.push_back(rec);
    if (!rec.ok) break;
  }
  {
    std::lock_guard lock(commit_mu_);
    for (auto& v : part.failed_videos) summary_.failed_videos.push_back(v);
  }
  part.failed_videos.clear();
  commit(i, std::move(recs), part);
}

void Runner::run_stats() {
  std::vector<std::string> files;
  std::uint64_t h = fnv1a("stats");
  for (std::size_t i = 0; i < videos_.size(); ++i) {
    auto it = known_[i].find(Stage::BuildEpisodes);
    if (it == known_[i].end() || !it->second.ok) continue;
    h = fnv1a(it->second.output_hash, h);
    for (const auto& r : it->second.outputs)
      if (r.ends_with(".hvep")) files.push_back(r);
  }
  if (files.empty()) {
    log_.info("stats_skipped", {{"reason", "no episodes"}});
    return;
  }
  h = fnv1a(cfg_.sections["episodes"].dump(), h);
  ManifestRecord rec;
  rec.video = "*";
  rec.stage = Stage::Stats;
  rec.input_hash = hex64(h);
  if (up_to_date(manifest_.latest("*", Stage::Stats), rec.input_hash)) {
    ++summary_.skipped;
    log_.info("stage_skipped", {{"video", "*"}, {"stage", "stats"}});
    return;
  }
  try {
    std::vector<episode::Episode> eps(files.size());
    for (std::size_t i = 0; i < files.size(); ++i) eps[i] = episode::load_episode(out_path(files[i]));
    const auto stats = episode::compute_norm_stats(std::span<const episode::Episode>(eps));
    const fs::path tmp = cfg_.work_dir / "norm_stats.json.tmp";
    episode::save_norm_stats(tmp, stats);
    fs::rename(tmp, cfg_.work_dir / "norm_stats.json");
    json idx{{"datasets", json::array({json{{"name", cfg_.dataset_name}, {"episodes", files}}})}};
    write_file_atomic(cfg_.work_dir / "dataset_index.json", idx.dump(2) + "\n");
    rec.ok = true;
    rec.outputs = {"dataset_index.json", "norm_stats.json"};
    rec.output_hash = hash_outputs(rec.outputs);
    rec.detail = {{"episodes", files.size()}};
    ++summary_.ran;
    log_.info("stage_done", {{"video", "*"}, {"stage", "stats"}, {"detail", rec.detail}});
  } catch (const std::exception& e) {
    rec.ok = false;
    rec.error = e.what();
    ++summary_.failed;
    summary_.failed_videos.push_back("*");
    log_.error("stage_failed", {{"video", "*"}, {"stage", "stats"}, {"error", rec.error}});
  }
  rec.timestamp = log::timestamp();
  append(rec);
}

RunSummary Runner::run() {
  stages_ = opt_.stages;
  std::sort(stages_.begin(), stages_.end());
  stages_.erase(std::unique(stages_.begin(), stages_.end()), stages_.end());

  videos_ = discover_videos(cfg_.tracks_dir);
  if (!opt_.videos.empty()) {
    for (const auto& v : opt_.videos)
      if (!std::binary_search(videos_.begin(), videos_.end(), v)) throw UsageError("no track file for video '" + v + "'");
    std::vector<std::string> sel = opt_.videos;
    std::sort(sel.begin(), sel.end());
    sel.erase(std::unique(sel.begin(), sel.end()), sel.end());
    videos_ = std::move(sel);
  }

  fs::create_directories(cfg_.work_dir);
  manifest_ = Manifest::load(manifest_path(cfg_));

  // Prerequisites outside this run must already have a manifest record.
  for (Stage s : stages_) {
    const auto u = upstream(s);
    if (!u || std::binary_search(stages_.begin(), stages_.end(), *u)) continue;
    std::vector<std::string> missing;
    for (const auto& v : videos_)
      if (!manifest_.latest(v, *u)) missing.push_back(v);
    if (!missing.empty()) {
      std::string list;
      for (std::size_t i = 0; i < missing.size() && i < 5; ++i) list += (i ? ", " : "") + missing[i];
      throw UsageError("stage '" + std::string(stage_name(s)) + "' needs '" + std::string(stage_name(*u)) +
                       "' first (missing for " + list + (missing.size() > 5 ? ", ..." : "") + ")");
    }
  }

  known_.assign(videos_.size(), {});
  for (std::size_t i = 0; i < videos_.size(); ++i)
    for (Stage s : all_stages())
      if (const auto* r = manifest_.latest(videos_[i], s)) known_[i][s] = *r;

  // Repair a torn final line before appending.
  {
    const fs::path mp = manifest_path(cfg_);
    if (fs::exists(mp) && fs::file_size(mp) > 0) {
      const std::string text = read_file(mp);
      if (text.back() != '\n') {
        const auto cut = text.find_last_of('\n');
        write_file_atomic(mp, cut == std::string::npos ? std::string() : text.substr(0, cut + 1));
      }
    }
  }
  manifest_out_.open(manifest_path(cfg_), std::ios::binary | std::ios::app);
  if (!manifest_out_) throw std::runtime_error("cannot open manifest " + manifest_path(cfg_).string());

  const int jobs = std::max(1, opt_.jobs > 0 ? opt_.jobs : cfg_.jobs);
  json names = json::array();
  for (Stage s : stages_) names.push_back(stage_name(s));
  log_.info("run_start", {{"stages", names}, {"videos", videos_.size()}, {"jobs", jobs}});

  pending_.assign(videos_.size(), std::nullopt);
  const int n = static_cast<int>(videos_.size());
  const bool any_video_stage = std::any_of(stages_.begin(), stages_.end(), per_video);
  if (any_video_stage) {
#pragma omp parallel for num_threads(jobs) schedule(dynamic, 1)
    for (int i = 0; i < n; ++i) process_video(static_cast<std::size_t>(i));
  }
  if (std::binary_search(stages_.begin(), stages_.end(), Stage::Stats)) run_stats();

  std::sort(summary_.failed_videos.begin(), summary_.failed_videos.end());
  summary_.failed_videos.erase(std::unique(summary_.failed_videos.begin(), summary_.failed_videos.end()),
                               summary_.failed_videos.end());
  log_.info("run_done", {{"ran", summary_.ran}, {"skipped", summary_.skipped}, {"failed", summary_.failed}});
  return summary_;
}

}  // namespace

RunSummary run(const PipelineConfig& config, const RunOptions& options) {
  log::Logger fallback(std::cerr, log::Level::Warn);
  log::Logger& lg = options.logger ? *options.logger : fallback;
  Runner r(config, options, lg);
  return r.run();
}

}  // namespace handvla::pipeline
