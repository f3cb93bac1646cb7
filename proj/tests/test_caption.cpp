#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <set>

#include "doctest.h"
#include "handvla/caption.hpp"
#include "handvla/errors.hpp"
#include "handvla/hash.hpp"
#include "json.hpp"

using namespace handvla;
using namespace handvla::caption;
using geom::Vec2;
using geom::Vec3;

namespace {

const std::filesystem::path kData = HANDVLA_TEST_DATA;

geom::CameraIntrinsics cam(int w = 64, int h = 48, double f = 50.0) {
  geom::CameraIntrinsics k;
  k.focal_x = k.focal_y = f;
  k.principal_x = (w - 1) / 2.0;
  k.principal_y = (h - 1) / 2.0;
  k.width = w;
  k.height = h;
  return k;
}

tracks::HandTrack track_of(const std::vector<Vec3>& p) {
  tracks::HandTrack t;
  for (const auto& x : p) {
    tracks::HandSample s;
    s.valid = true;
    s.wrist.translation = x;
    t.samples.push_back(s);
  }
  return t;
}

OverlayConfig no_offset() {
  OverlayConfig c;
  c.palm_offset = Vec3::Zero();
  return c;
}

RetryPolicy recording(std::vector<double>& delays, int attempts = 5) {
  RetryPolicy r;
  r.max_attempts = attempts;
  r.sleep = [&delays](double d) { delays.push_back(d); };
  return r;
}

// Fixture segment for the prompt golden file: a 24-frame arc on a 32x24 canvas.
std::vector<Image> fixture_frames() {
  const auto k = cam(32, 24, 20.0);
  std::vector<Vec3> p;
  for (int i = 0; i < 24; ++i) p.emplace_back(-0.3 + 0.025 * i, 0.1 * std::sin(0.2 * i), 1.0 + 0.01 * i);
  const auto track = track_of(p);
  Image canvas(32, 24);
  for (int y = 0; y < 24; ++y)
    for (int x = 0; x < 32; ++x) canvas.at(x, y)[0] = static_cast<std::uint8_t>(8 * x);
  std::vector<Image> frames;
  for (int f : sample_frames(24)) frames.push_back(render_overlay(canvas, track, f, 24, {}, k).image);
  return frames;
}

CaptionRequest fixture_request(Hand hand) { return build_prompt(fixture_frames(), hand, CaptionConfig{}, "fixture"); }

// Golden view of a request: the wire text fields plus a digest of each raw image,
// so the comparison does not depend on the zlib build.
nlohmann::json golden_view(const CaptionRequest& r, const std::vector<Image>& frames) {
  nlohmann::json j{{"model", r.model}, {"system", r.system_text}, {"user", r.user_text}};
  auto& imgs = j["image_digests"] = nlohmann::json::array();
  for (const auto& f : frames) imgs.push_back(hex64(fnv1a(f.rgb)));
  return j;
}

}  // namespace

TEST_CASE("sample_frames") {
  CHECK(sample_frames(8) == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7});
  CHECK(sample_frames(15) == std::vector<int>{0, 2, 4, 6, 8, 10, 12, 14});
  CHECK(sample_frames(1) == std::vector<int>(8, 0));
  CHECK_THROWS_AS(sample_frames(0), std::invalid_argument);
  for (int len = 1; len <= 300; ++len) {
    const auto idx = sample_frames(len);
    REQUIRE(idx.size() == 8);
    CHECK(idx.front() == 0);
    CHECK(idx.back() == len - 1);
    int lo = 1 << 30, hi = 0;
    for (std::size_t i = 1; i < idx.size(); ++i) {
      CHECK(idx[i] >= idx[i - 1]);
      lo = std::min(lo, idx[i] - idx[i - 1]);
      hi = std::max(hi, idx[i] - idx[i - 1]);
    }
    CHECK(hi - lo <= 1);
    if (len >= 8) CHECK(std::set<int>(idx.begin(), idx.end()).size() == 8);
  }
}

TEST_CASE("overlay geometry") {
  const auto k = cam();
  const Image blank(64, 48);

  SUBCASE("static palm is a single dot") {
    const auto o = render_overlay(blank, track_of(std::vector<Vec3>(10, Vec3(0.1, 0.05, 1.0))), 0, 10, {}, k, no_offset());
    REQUIRE(o.strokes.size() == 1);
    CHECK(o.strokes[0].size() == 1);
    const Vec2 px = o.strokes[0][0].px;
    CHECK((px - Vec2(31.5 + 5.0, 23.5 + 2.5)).norm() < 1e-12);
    const int cx = static_cast<int>(std::lround(px.x())), cy = static_cast<int>(std::lround(px.y()));
    CHECK(o.image.at(cx, cy)[0] != 0);
    CHECK(o.image.at(0, 0)[0] == 0);
  }

  SUBCASE("receding palm on the optical axis stays at the principal point") {
    std::vector<Vec3> p;
    for (int i = 0; i < 10; ++i) p.emplace_back(0, 0, 0.5 + 0.1 * i);
    const auto o = render_overlay(blank, track_of(p), 0, 10, {}, k, no_offset());
    for (const auto& v : o.vertices) CHECK((v.px - Vec2(31.5, 23.5)).norm() < 1e-12);
  }

  SUBCASE("circle matches its closed-form projection") {
    std::vector<Vec3> p;
    const int n = 40;
    for (int i = 0; i < n; ++i) {
      const double a = 2.0 * std::numbers::pi * i / n;
      p.emplace_back(0.2 * std::cos(a), 0.2 * std::sin(a), 2.0);
    }
    const auto o = render_overlay(blank, track_of(p), 0, n, {}, k, no_offset());
    REQUIRE(o.vertices.size() == static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      const double a = 2.0 * std::numbers::pi * i / n;
      const Vec2 expect(31.5 + 50.0 * 0.1 * std::cos(a), 23.5 + 50.0 * 0.1 * std::sin(a));
      CHECK((o.vertices[i].px - expect).norm() < 1e-9);
      CHECK(o.vertices[i].t == doctest::Approx(static_cast<double>(i) / (n - 1)));
    }
  }

  SUBCASE("moving camera agrees with project of the transformed palm point") {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-0.2, 0.2);
    std::vector<Vec3> p;
    for (int i = 0; i < 20; ++i) p.emplace_back(u(rng), u(rng), 1.5 + u(rng));
    auto t = track_of(p);
    for (auto& s : t.samples) s.wrist.rotation = geom::Rotation::from_euler(Vec3(u(rng), u(rng), u(rng)));
    tracks::CameraTrackFrame c;
    c.world_from_cam = {geom::Rotation::from_euler(Vec3(0.05, -0.1, 0.02)), Vec3(0.02, 0.01, -0.1)};
    const auto o = render_overlay(blank, t, 3, 20, c, k);
    REQUIRE(o.vertices.size() == 17);
    for (int i = 0; i < 17; ++i) {
      const Vec3 palm = t.samples[3 + i].wrist * Vec3(0, 0, 0.08);
      CHECK((o.vertices[i].px - geom::project(k, c.world_from_cam.inverse() * palm)).norm() < 1e-9);
    }
  }

  SUBCASE("behind-camera points are dropped without error") {
    const auto o = render_overlay(blank, track_of(std::vector<Vec3>(5, Vec3(0, 0, -1))), 0, 5, {}, k, no_offset());
    CHECK(o.vertices.empty());
    CHECK(o.strokes.empty());
    CHECK(o.image == blank);
  }

  SUBCASE("strokes are clipped to the image") {
    std::vector<Vec3> p;
    for (int i = 0; i < 30; ++i) p.emplace_back(-1.0 + 0.07 * i, 0.3 * std::sin(0.3 * i), 1.0);
    const auto o = render_overlay(blank, track_of(p), 0, 30, {}, k, no_offset());
    REQUIRE(!o.strokes.empty());
    for (const auto& s : o.strokes)
      for (const auto& v : s) {
        CHECK(v.px.x() >= -1e-9);
        CHECK(v.px.x() <= 63.0 + 1e-9);
        CHECK(v.px.y() >= -1e-9);
        CHECK(v.px.y() <= 47.0 + 1e-9);
      }
  }
}

TEST_CASE("prompt construction") {
  const auto a = fixture_request(Hand::Right), b = fixture_request(Hand::Right);
  CHECK(a.to_json() == b.to_json());
  const auto l = fixture_request(Hand::Left);
  CHECK(l.images_png == a.images_png);
  CHECK(l.system_text == a.system_text);
  CHECK(l.user_text != a.user_text);
  CHECK(a.user_text.find("right") != std::string::npos);
  CHECK(l.user_text.find("left") != std::string::npos);
  CHECK(a.images_png.size() == 8);
  CHECK_THROWS_AS(build_prompt({}, Hand::Left, {}), std::invalid_argument);

  const auto wire = nlohmann::json::parse(a.to_json());
  CHECK(wire.at("images").size() == 8);
  CHECK(wire.at("images")[0].at("format") == "png");
  CHECK(!wire.contains("segment_id"));
}

TEST_CASE("prompt golden file") {
  const auto path = kData / "golden" / "prompt_fixture.json";
  const auto view = golden_view(fixture_request(Hand::Right), fixture_frames());
  if (std::getenv("HANDVLA_REGEN_GOLDEN")) {
    std::ofstream(path) << view.dump(2) << "\n";
  }
  std::ifstream in(path);
  REQUIRE(in.good());
  CHECK(nlohmann::json::parse(in) == view);
}

TEST_CASE("caption requests through the mock") {
  const auto req = build_rephrase_request("x", {}, "seg");
  std::vector<double> delays;

  SUBCASE("plain caption") {
    MockCaptionClient m({std::string("  pick up the cup\n")});
    const auto r = request_caption(req, m, recording(delays));
    CHECK(r.status == CaptionStatus::Ok);
    CHECK(r.caption == "pick up the cup");
  }
  SUBCASE("N/A is a non-action") {
    for (const char* s : {"N/A", "n/a.", "\"N/A\"", " NA "}) {
      MockCaptionClient m({std::string(s)});
      CHECK(request_caption(req, m, recording(delays)).status == CaptionStatus::NotAction);
    }
  }
  SUBCASE("two failures then success") {
    MockCaptionClient m({MockCaptionClient::Failure{}, MockCaptionClient::Failure{}, std::string("open the drawer")});
    const auto r = request_caption(req, m, recording(delays));
    CHECK(r.status == CaptionStatus::Ok);
    CHECK(r.caption == "open the drawer");
    CHECK(m.calls() == 3);
    CHECK(delays == std::vector<double>{0.5, 1.0});
  }
  SUBCASE("failures exhaust the retry budget") {
    std::vector<MockCaptionClient::Outcome> script(5, MockCaptionClient::Failure{});
    MockCaptionClient m(script);
    const auto r = request_caption(req, m, recording(delays));
    CHECK(r.status == CaptionStatus::Failed);
    CHECK(m.calls() == 5);
    CHECK(delays == std::vector<double>{0.5, 1.0, 2.0, 4.0});
  }
  SUBCASE("rephrasings are de-duplicated and capped") {
    MockCaptionClient m({std::string("1. grab the cup\n2. Grab the cup.\n- take the cup\n\nlift the cup\nN/A\nraise the cup\n"
                                     "pick the cup up\nhold the cup\n")});
    const auto r = request_rephrasings(req, m, recording(delays));
    CHECK(r == std::vector<std::string>{"grab the cup", "take the cup", "lift the cup", "raise the cup", "pick the cup up"});
  }
  SUBCASE("rephrasing failure throws") {
    MockCaptionClient m(std::vector<MockCaptionClient::Outcome>(2, MockCaptionClient::Failure{}));
    CHECK_THROWS_AS(request_rephrasings(req, m, recording(delays, 2)), std::runtime_error);
  }
}

TEST_CASE("golden transcript drives a batch") {
  MockCaptionClient m;
  m.set_transcript(MockCaptionClient::load_transcript(kData / "golden" / "transcript.jsonl"));
  std::vector<CaptionRequest> reqs;
  for (const char* id : {"v_left_0_30", "v_right_0_45", "v_right_45_90"}) {
    auto r = build_rephrase_request("", {}, id);
    r.kind = RequestKind::Caption;
    reqs.push_back(r);
  }
  InflightLimiter lim(2);
  std::vector<double> delays;
  const auto res = caption_batch(reqs, m, lim, CaptionConfig{}, recording(delays));
  REQUIRE(res.size() == 3);
  CHECK(res[0].segment_id == "v_left_0_30");
  CHECK(res[0].status == CaptionStatus::Ok);
  CHECK(res[0].caption == "pick up the cup");
  CHECK(res[0].rephrasings.size() == 5);
  CHECK(res[1].status == CaptionStatus::NotAction);
  CHECK(res[1].rephrasings.empty());
  CHECK(res[2].caption == "Open the drawer.");
  CHECK(res[2].rephrasings == std::vector<std::string>{"pull the drawer open", "slide the drawer out"});
}

TEST_CASE("batch results keep input order and respect the inflight cap") {
  struct Counting : CaptionClient {
    std::atomic<int> now{0}, peak{0};
    std::string complete(const CaptionRequest& r) override {
      const int n = ++now;
      int p = peak.load();
      while (n > p && !peak.compare_exchange_weak(p, n)) {
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(2));
      --now;
      return r.kind == RequestKind::Caption ? "move " + r.segment_id : r.user_text + "\nagain " + r.user_text;
    }
  } c;
  std::vector<CaptionRequest> reqs;
  for (int i = 0; i < 12; ++i) {
    auto r = build_rephrase_request("", {}, "s" + std::to_string(i));
    r.kind = RequestKind::Caption;
    reqs.push_back(r);
  }
  InflightLimiter lim(3);
  const auto res = caption_batch(reqs, c, lim, CaptionConfig{});
  for (int i = 0; i < 12; ++i) {
    CHECK(res[i].caption == "move s" + std::to_string(i));
    CHECK(res[i].rephrasings.size() == 2);
  }
  CHECK(c.peak.load() <= 3);
}

TEST_CASE("mock fallback is deterministic") {
  CHECK(synthetic_caption("abc") == synthetic_caption("abc"));
  MockCaptionClient a, b;
  auto r = build_rephrase_request("", {}, "video_001_left_0_40");
  r.kind = RequestKind::Caption;
  CHECK(a.complete(r) == b.complete(r));
}
