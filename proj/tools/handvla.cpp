#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "handvla/augment.hpp"
#include "handvla/caption.hpp"
#include "handvla/episode.hpp"
#include "handvla/errors.hpp"
#include "handvla/log.hpp"
#include "handvla/metrics.hpp"
#include "handvla/pipeline.hpp"
#include "handvla/retarget.hpp"
#include "handvla/synth.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace handvla;

namespace {

struct PipelineArgs {
  std::string config;
  int jobs = 0;
  bool strict = false;
  int abort_after = -1;
  std::vector<std::string> videos;
  std::string log_level = "info";
};

void add_pipeline_options(CLI::App* cmd, PipelineArgs& a) {
  cmd->add_option("-c,--config", a.config, "Pipeline config (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("-j,--jobs", a.jobs, "Videos processed in parallel (default: config)")->check(CLI::PositiveNumber);
  cmd->add_flag("--strict", a.strict, "Exit 1 when any video fails");
  cmd->add_option("--videos", a.videos, "Restrict to these video ids")->delimiter(',');
  cmd->add_option("--log-level", a.log_level, "debug | info | warn | error");
  // Crash simulation for resume tests.
  cmd->add_option("--abort-after", a.abort_after)->group("");
}

int run_pipeline(const PipelineArgs& a, std::vector<pipeline::Stage> stages) {
  const auto cfg = pipeline::load_config(a.config);
  log::Logger logger(std::cerr, log::parse_level(a.log_level));
  if (stages.empty()) {
    for (auto s : pipeline::all_stages())
      if (cfg.enabled.at(s)) stages.push_back(s);
  }
  pipeline::RunOptions opt;
  opt.stages = std::move(stages);
  opt.jobs = a.jobs;
  opt.strict = a.strict;
  opt.abort_after = a.abort_after;
  opt.videos = a.videos;
  opt.logger = &logger;
  const auto summary = pipeline::run(cfg, opt);
  std::cout << json{{"ran", summary.ran},
                    {"skipped", summary.skipped},
                    {"failed", summary.failed},
                    {"failed_videos", summary.failed_videos}}
                   .dump()
            << "\n";
  return pipeline::exit_code(summary, a.strict);
}

fs::path find_episode(const pipeline::PipelineConfig& cfg, const std::string& ref) {
  if (fs::is_regular_file(ref)) return ref;
  const fs::path root = cfg.work_dir / "videos";
  if (fs::is_directory(root)) {
    for (const auto& v : fs::directory_iterator(root)) {
      const fs::path p = v.path() / "episodes" / (ref + ".hvep");
      if (fs::is_regular_file(p)) return p;
    }
  }
  throw UsageError("no episode '" + ref + "'");
}

int augment_preview(const std::string& config, const std::string& episode_ref, std::uint64_t seed, int offset,
                    const std::string& lexicon_path, const std::string& out_dir) {
  const auto cfg = pipeline::load_config(config);
  const auto ep = episode::load_episode(find_episode(cfg, episode_ref));
  if (offset < 0 || offset >= ep.frames()) throw UsageError("--frame outside the episode");
  const auto tf = tracks::load_track(pipeline::video_dir(cfg, ep.video) / "clean.jsonl");
  const auto world = tracks::fuse_to_world(tf.hands, tf.cameras, tf.fps);
  const int t = ep.start_frame + offset;
  const tracks::CameraTrackFrame* cam = nullptr;
  for (const auto& c : tf.cameras)
    if (c.frame_index == t) cam = &c;
  if (!cam) throw std::runtime_error("no camera at frame " + std::to_string(t));

  const auto& track = world[ep.primary_hand];
  const geom::Pose cam_from_world = cam->world_from_cam.inverse();
  std::vector<geom::Vec3> palm;
  for (int k = t; k < ep.end_frame; ++k) {
    const auto& s = track.at_frame(k);
    if (s.valid) palm.push_back(cam_from_world * caption::palm_point(s.wrist, cfg.caption.config.overlay.palm_offset));
  }
  const auto lexicon = lexicon_path.empty() ? augment::default_color_lexicon() : augment::load_lexicon(lexicon_path);
  const std::string instruction = ep.instruction.render();
  const auto sample = augment::sample_augment(seed, tf.intrinsics, palm, instruction, lexicon);
  const auto spec = augment::warp_spec(tf.intrinsics, sample.params);

  Image base(tf.intrinsics.width, tf.intrinsics.height);
  char name[32];
  std::snprintf(name, sizeof name, "%06d.ppm", t);
  if (!cfg.frames_dir.empty() && fs::is_regular_file(cfg.frames_dir / ep.video / name)) base = read_ppm(cfg.frames_dir / ep.video / name);

  const auto& ov = cfg.caption.config.overlay;
  const Image src = caption::render_overlay(base, track, t, ep.end_frame, *cam, tf.intrinsics, ov).image;
  tracks::CameraTrackFrame virt = *cam;
  virt.world_from_cam.rotation = cam->world_from_cam.rotation * spec.r_aug;
  virt.intrinsics = spec.k_new;
  Image aug = caption::render_overlay(augment::warp_image(base, spec), track, t, ep.end_frame, virt, spec.k_new, ov).image;
  if (sample.params.jitter) aug = augment::apply_jitter(aug, *sample.params.jitter);
  auto aug_ep = augment::transform_episode(ep, spec);
  if (sample.params.flip) {
    aug = flip_horizontal(aug);
    aug_ep = augment::flip_episode(aug_ep);
  }

  const fs::path out(out_dir);
  fs::create_directories(out);
  write_png(out / "source.png", src);
  write_png(out / "augmented.png", aug);
  episode::save_episode(out / (ep.id + ".aug.hvep"), aug_ep);
  json p{{"episode", ep.id},
         {"frame", t},
         {"seed", seed},
         {"target_hfov_rad", sample.params.target_hfov_rad},
         {"aspect", sample.params.aspect},
         {"center_ray", {sample.params.center_ray.x(), sample.params.center_ray.y(), sample.params.center_ray.z()}},
         {"flip", sample.params.flip},
         {"attempts", sample.attempts},
         {"fallback", sample.fallback},
         {"instruction", aug_ep.instruction.render()}};
  if (sample.params.jitter) {
    p["jitter"] = {{"brightness", sample.params.jitter->brightness},
                   {"contrast", sample.params.jitter->contrast},
                   {"saturation", sample.params.jitter->saturation}};
  }
  std::ofstream(out / "params.json") << p.dump(2) << "\n";
  std::cout << p.dump() << "\n";
  return 0;
}

int export_robot(const std::string& input, const std::string& map_ref, const std::string& out_dir) {
  const auto map = map_ref == "xhand12" ? retarget::xhand12_joint_map() : retarget::load_joint_map(map_ref);
  map.validate();
  const auto live = map.live();
  std::vector<fs::path> files;
  if (fs::is_directory(input)) {
    for (const auto& e : fs::recursive_directory_iterator(input))
      if (e.is_regular_file() && e.path().extension() == ".hvep") files.push_back(e.path());
  } else {
    files.push_back(input);
  }
  std::sort(files.begin(), files.end());
  fs::create_directories(out_dir);
  for (const auto& f : files) {
    auto ep = episode::load_episode(f);
    episode::mask_theta(ep, live);
    episode::save_episode(fs::path(out_dir) / f.filename(), ep);
  }
  std::cout << json{{"episodes", files.size()}, {"mapped_dims", map.pairs.size()}, {"unmapped_dims", map.unmapped()}}.dump()
            << "\n";
  return 0;
}

int retarget_cmd(const std::string& input, const std::string& method, const std::string& chain_path,
                 const std::string& angle_cfg, double beta, const std::string& output) {
  const auto chain = chain_path.empty() ? retarget::xhand12() : retarget::load_chain(chain_path);
  retarget::RetargetConfig rc;
  rc.beta = beta;
  rc.validate();
  auto am = angle_cfg.empty() ? retarget::default_angle_match(chain) : retarget::load_angle_match(angle_cfg, chain);
  am.solver.beta = beta;
  if (method != "dexpilot" && method != "angle") throw UsageError("--method must be dexpilot or angle");

  std::ifstream in(input);
  if (!in) throw std::runtime_error("cannot open " + input);
  std::ofstream file;
  if (!output.empty()) file.open(output);
  std::ostream& out = output.empty() ? std::cout : file;

  Eigen::VectorXd q(chain.dof());
  for (int j = 0; j < chain.dof(); ++j) q[j] = std::clamp(0.0, chain.joints[j].lower, chain.joints[j].upper);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = json::parse(line);
    const auto& kp = j.at("keypoints");
    if (kp.size() != 21) throw SchemaError("keypoints must hold 21 points");
    retarget::GloveKeypoints k;
    for (int i = 0; i < 21; ++i) k[i] = geom::Vec3(kp[i][0].get<double>(), kp[i][1].get<double>(), kp[i][2].get<double>());
    const auto r = method == "dexpilot" ? retarget::dexpilot_solve(chain, retarget::dexpilot_vectors(k), q, rc)
                                        : retarget::angle_match_solve(chain, k, q, am);
    q = r.q;
    json row{{"frame", j.value("frame", n)},
             {"q", std::vector<double>(r.q.data(), r.q.data() + r.q.size())},
             {"converged", r.converged},
             {"iterations", r.iterations},
             {"objective", r.objective}};
    out << row.dump() << "\n";
    ++n;
  }
  return 0;
}

int diversity_cmd(const std::string& q, const std::string& t, const std::vector<int>& counts, std::uint64_t seed) {
  const auto queries = metrics::load_features(q);
  const auto targets = metrics::load_features(t);
  const auto d = metrics::visual_diversity(queries, targets);
  json out{{"queries", queries.count()},
           {"targets", targets.count()},
           {"avg_max_cos", d.avg_max_cos},
           {"recall_at_0.5", d.recall_at_05}};
  if (!counts.empty()) {
    json curve = json::array();
    for (const auto& p : metrics::diversity_curve(queries, targets, counts, seed))
      curve.push_back({{"count", p.count}, {"avg_max_cos", p.value.avg_max_cos}, {"recall_at_0.5", p.value.recall_at_05}});
    out["curve"] = curve;
  }
  std::cout << out.dump(2) << "\n";
  return 0;
}

int word_stats_cmd(const std::string& input, int top) {
  const auto ws = metrics::load_word_stats(input);
  json out = json::object();
  for (const auto& [pos, counts] : ws.by_pos) {
    if (counts.empty()) continue;
    const auto d = metrics::instruction_diversity(counts);
    json ranks = json::array();
    for (int i = 0; i < top && i < static_cast<int>(d.rank_frequency.size()); ++i)
      ranks.push_back({d.rank_frequency[i].first, d.rank_frequency[i].second});
    out[pos] = {{"words", counts.size()}, {"h_index", d.h_index}, {"i100", d.i100}, {"top", ranks}};
  }
  std::cout << out.dump(2) << "\n";
  return 0;
}

int eval_grasp_cmd(const std::string& cases_path, int fixtures, const std::string& write_fixtures,
                   const std::string& source, int trials, std::uint64_t seed, const std::string& json_out) {
  std::vector<metrics::GraspCase> cases;
  if (!cases_path.empty()) {
    cases = metrics::load_grasp_cases(cases_path);
  } else if (fixtures > 0) {
    cases = metrics::make_grasp_fixtures(fixtures, seed);
  } else {
    throw UsageError("give --cases or --fixtures");
  }
  if (!write_fixtures.empty()) metrics::save_grasp_cases(write_fixtures, cases);
  std::unique_ptr<metrics::TrajectorySource> src;
  if (source == "zero") {
    src = metrics::zero_motion_source();
  } else if (source == "touch") {
    src = metrics::touch_source();
  } else {
    src = metrics::file_source(source);
  }
  const auto report = metrics::grasp_eval(cases, *src, trials, seed);
  std::cout << metrics::report_table(report);
  if (!json_out.empty()) std::ofstream(json_out) << metrics::report_json(report) << "\n";
  return 0;
}

int synth_corpus(const std::string& out, int videos, std::uint64_t seed) {
  const fs::path root(out);
  const auto files = synth::write_corpus(root / "tracks", videos, seed);
  json cfg{{"paths", {{"tracks", "tracks"}, {"work", "work"}}}, {"episodes", {{"dataset_name", "synthetic"}}}, {"seed", seed}};
  std::ofstream(root / "handvla.json") << cfg.dump(2) << "\n";
  std::cout << json{{"videos", files.size()}, {"config", (root / "handvla.json").string()}}.dump() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hand-video to VLA episode toolkit"};
  app.require_subcommand(1);

  PipelineArgs pa;
  std::map<CLI::App*, std::vector<pipeline::Stage>> pipeline_cmds;
  for (auto s : pipeline::all_stages()) {
    auto* cmd = app.add_subcommand(std::string(pipeline::stage_name(s)), "Run the " + std::string(pipeline::stage_name(s)) + " stage");
    add_pipeline_options(cmd, pa);
    pipeline_cmds[cmd] = {s};
  }
  auto* run_all = app.add_subcommand("run-all", "Run every enabled stage in order");
  add_pipeline_options(run_all, pa);
  pipeline_cmds[run_all] = {};

  std::string config, episode_ref, lexicon, out_dir, input, map_ref = "xhand12", method = "dexpilot", chain_path,
                                                         angle_cfg, output, queries, targets, cases_path, write_fixtures,
                                                         source = "zero", json_out;
  std::uint64_t seed = 0;
  int offset = 0, top = 20, fixtures = 0, trials = 4, videos = 10;
  double beta = retarget::RetargetConfig{}.beta;
  std::vector<int> counts;

  auto* aug = app.add_subcommand("augment-preview", "Sample one augmentation for an episode and render it");
  aug->add_option("-c,--config", config)->required()->check(CLI::ExistingFile);
  aug->add_option("-e,--episode", episode_ref, "Episode id or .hvep path")->required();
  aug->add_option("--seed", seed);
  aug->add_option("--frame", offset, "Frame offset within the episode");
  aug->add_option("--lexicon", lexicon, "Colour-word list, one per line");
  aug->add_option("-o,--out", out_dir)->required();

  auto* exp = app.add_subcommand("export-robot", "Mask joint-angle dims without a robot counterpart");
  exp->add_option("-i,--input", input, "Episode file or directory")->required()->check(CLI::ExistingPath);
  exp->add_option("-m,--joint-map", map_ref, "Joint map JSON or 'xhand12'");
  exp->add_option("-o,--out", out_dir)->required();

  auto* ret = app.add_subcommand("retarget", "Glove keypoints (JSONL) to robot joint angles");
  ret->add_option("-i,--input", input)->required()->check(CLI::ExistingFile);
  ret->add_option("--method", method, "dexpilot | angle");
  ret->add_option("--chain", chain_path, "Robot chain JSON (default: builtin xhand12)");
  ret->add_option("--angle-config", angle_cfg);
  ret->add_option("--beta", beta, "Temporal regularization weight")->check(CLI::NonNegativeNumber);
  ret->add_option("-o,--out", output);

  auto* div = app.add_subcommand("diversity", "Visual diversity between two feature sets");
  div->add_option("-q,--queries", queries)->required()->check(CLI::ExistingFile);
  div->add_option("-t,--targets", targets)->required()->check(CLI::ExistingFile);
  div->add_option("--counts", counts, "Target subset sizes for a curve")->delimiter(',');
  div->add_option("--seed", seed);

  auto* ws = app.add_subcommand("word-stats", "Rank-frequency, h-index and i100 per part of speech");
  ws->add_option("-i,--input", input)->required()->check(CLI::ExistingFile);
  ws->add_option("--top", top);

  auto* eg = app.add_subcommand("eval-grasp", "Hand-object distance benchmark");
  eg->add_option("--cases", cases_path)->check(CLI::ExistingFile);
  eg->add_option("--fixtures", fixtures, "Generate this many fixture cases");
  eg->add_option("--write-fixtures", write_fixtures);
  eg->add_option("--source", source, "zero | touch | trajectory JSONL");
  eg->add_option("--trials", trials)->check(CLI::PositiveNumber);
  eg->add_option("--seed", seed);
  eg->add_option("--json", json_out);

  auto* sc = app.add_subcommand("synth-corpus", "Write synthetic track files and a config");
  sc->add_option("-o,--out", out_dir)->required();
  sc->add_option("--videos", videos)->check(CLI::PositiveNumber);
  sc->add_option("--seed", seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    for (auto& [cmd, stages] : pipeline_cmds)
      if (cmd->parsed()) return run_pipeline(pa, stages);
    if (aug->parsed()) return augment_preview(config, episode_ref, seed, offset, lexicon, out_dir);
    if (exp->parsed()) return export_robot(input, map_ref, out_dir);
    if (ret->parsed()) return retarget_cmd(input, method, chain_path, angle_cfg, beta, output);
    if (div->parsed()) return diversity_cmd(queries, targets, counts, seed);
    if (ws->parsed()) return word_stats_cmd(input, top);
    if (eg->parsed()) return eval_grasp_cmd(cases_path, fixtures, write_fixtures, source, trials, seed, json_out);
    if (sc->parsed()) return synth_corpus(out_dir, videos, seed);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
