#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "doctest.h"
#include "handvla/errors.hpp"
#include "handvla/synth.hpp"
#include "handvla/tracks.hpp"
#include "oracles.hpp"

using namespace handvla;
using namespace handvla::tracks;
using geom::Pose;
using geom::Rotation;
using geom::Vec3;

namespace {

const char* kMinimal =
    "{\"fps\":30,\"width\":64,\"height\":48,\"fx\":50,\"fy\":50,\"cx\":31.5,\"cy\":23.5}\n"
    "{\"frame\":1,\"kind\":\"cam\",\"payload\":{\"translation\":[1,0,0],\"rotation\":[1,0,0,0,1,0,0,0,1]}}\n"
    "{\"frame\":0,\"kind\":\"cam\",\"payload\":{\"translation\":[0,0,0],\"rotation\":[1,0,0,0,1,0,0,0,1]}}\n";

Pose random_pose(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> a(-3.0, 3.0), t(-1.0, 1.0);
  return {Rotation::from_euler(Vec3(a(rng), a(rng) / 2.2, a(rng))), Vec3(t(rng), t(rng), t(rng))};
}

HandTrack line_track(int n, double fps, const Vec3& v) {
  HandTrack t;
  t.fps = fps;
  for (int i = 0; i < n; ++i) {
    HandSample s;
    s.valid = true;
    s.wrist.translation = v * (i / fps);
    t.samples.push_back(s);
  }
  return t;
}

}  // namespace

TEST_CASE("minimal file parses, sorts frames and echoes fps") {
  std::istringstream in(kMinimal);
  const auto tf = parse_track(in);
  CHECK(tf.fps == 30.0);
  REQUIRE(tf.cameras.size() == 2);
  CHECK(tf.cameras[0].frame_index == 0);
  CHECK(tf.cameras[1].frame_index == 1);
  CHECK(tf.cameras[1].world_from_cam.translation.x() == 1.0);
  CHECK(tf.intrinsics.width == 64);
}

TEST_CASE("schema and record errors are typed") {
  std::istringstream no_header("{\"frame\":0,\"kind\":\"cam\"}\n");
  CHECK_THROWS_AS(parse_track(no_header), SchemaError);
  std::istringstream dup(std::string(kMinimal) +
                         "{\"frame\":1,\"kind\":\"cam\",\"payload\":{\"translation\":[0,0,0],\"rotation\":[1,0,0,0,1,0,0,0,1]}}\n");
  CHECK_THROWS_AS(parse_track(dup), DuplicateRecordError);
  std::istringstream bad_rot(std::string(kMinimal) +
                             "{\"frame\":2,\"kind\":\"cam\",\"payload\":{\"translation\":[0,0,0],\"rotation\":[2,0,0,0,1,0,0,0,1]}}\n");
  CHECK_THROWS_AS(parse_track(bad_rot), ParseError);
  std::istringstream nan(std::string(kMinimal) + "{\"frame\":2,\"kind\":\"flow\",\"payload\":{\"median_flow\":\"x\"}}\n");
  CHECK_THROWS_AS(parse_track(nan), ParseError);
}

TEST_CASE("write then parse round-trips at the file precision") {
  synth::VideoSpec spec;
  spec.frames = 40;
  const auto tf = synth::synth_video(7, spec);
  std::stringstream ss;
  write_track(ss, tf);
  const auto back = parse_track(ss);
  REQUIRE(back.hands.size() == tf.hands.size());
  REQUIRE(back.cameras.size() == tf.cameras.size());
  for (std::size_t i = 0; i < tf.hands.size(); ++i) {
    CHECK((back.hands[i].wrist_pose_cam.translation - tf.hands[i].wrist_pose_cam.translation).norm() < 1e-8);
    CHECK((back.hands[i].wrist_pose_cam.rotation.matrix() - tf.hands[i].wrist_pose_cam.rotation.matrix()).cwiseAbs().maxCoeff() < 1e-8);
    CHECK(back.hands[i].valid == tf.hands[i].valid);
    CHECK(back.hands[i].joint_angles == [&] {
      JointAngles j = tf.hands[i].joint_angles;
      for (double& a : j) a = round_sig9(a);
      return j;
    }());
  }
}

TEST_CASE("truncation at every byte offset parses only on line boundaries") {
  synth::VideoSpec spec;
  spec.frames = 3;
  std::stringstream ss;
  write_track(ss, synth::synth_video(3, spec));
  const std::string text = ss.str();
  int ok = 0, errors = 0;
  for (std::size_t cut = 0; cut <= text.size(); ++cut) {
    std::istringstream in(text.substr(0, cut));
    // A record cut just before its newline is still complete.
    const bool boundary = (cut > 0 && text[cut - 1] == '\n') || (cut < text.size() && text[cut] == '\n');
    try {
      parse_track(in);
      ++ok;
      CHECK(boundary);
    } catch (const ParseError&) {
      ++errors;
      CHECK(!boundary);
    } catch (const SchemaError&) {
      ++errors;
    }
  }
  CHECK(ok > 0);
  CHECK(errors > 0);
}

TEST_CASE("camera motion classification") {
  std::vector<FlowStats> zero(10), five(10), mixed;
  for (auto& f : five) f.median_background_flow = 5.0;
  CHECK(classify_camera_motion(zero) == CameraMotion::Static);
  CHECK(classify_camera_motion(five) == CameraMotion::Moving);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 2.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<FlowStats> f(static_cast<std::size_t>(1 + trial % 9));
    std::vector<double> v;
    for (auto& x : f) v.push_back(x.median_background_flow = u(rng));
    // Brute-force median: the value with as many entries above as below.
    std::sort(v.begin(), v.end());
    const double med = v.size() % 2 ? v[v.size() / 2] : 0.5 * (v[v.size() / 2 - 1] + v[v.size() / 2]);
    CHECK((classify_camera_motion(f) == CameraMotion::Moving) == (med > 1.0));
  }
  CHECK_THROWS_AS(classify_camera_motion({}), std::invalid_argument);
}

TEST_CASE("fusion into the world frame") {
  std::mt19937_64 rng(2);
  std::vector<CameraTrackFrame> cams;
  std::vector<HandTrackFrame> hands;
  for (int f = 0; f < 20; ++f) {
    CameraTrackFrame c;
    c.frame_index = f;
    c.world_from_cam = random_pose(rng);
    cams.push_back(c);
    HandTrackFrame h;
    h.frame_index = f;
    h.hand = Hand::Right;
    h.wrist_pose_cam = random_pose(rng);
    hands.push_back(h);
  }
  const auto w = fuse_to_world(hands, cams, 30.0);
  for (int f = 0; f < 20; ++f) {
    const auto& c = cams[f].world_from_cam;
    const auto& h = hands[f].wrist_pose_cam;
    const Eigen::Matrix4d oracle = oracle::homogeneous(c.rotation.matrix(), c.translation) *
                                   oracle::homogeneous(h.rotation.matrix(), h.translation);
    const auto& s = w.right.at_frame(f);
    REQUIRE(s.valid);
    CHECK((s.wrist.rotation.matrix() - oracle.topLeftCorner<3, 3>()).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((s.wrist.translation - oracle.topRightCorner<3, 1>()).norm() < 1e-9);
    CHECK(!w.left.at_frame(f).valid);
    // Back into the same camera: the input pose.
    const auto back = world_to_camera(w.right, cams[f]).at_frame(f).wrist;
    CHECK((back.translation - h.translation).norm() < 1e-9);
    CHECK((back.rotation.matrix() - h.rotation.matrix()).cwiseAbs().maxCoeff() < 1e-9);
  }

  SUBCASE("translated camera shifts world x") {
    std::vector<CameraTrackFrame> c1(1);
    c1[0].world_from_cam.translation = Vec3(1, 0, 0);
    std::vector<HandTrackFrame> h1(1);
    h1[0].wrist_pose_cam.translation = Vec3(0.2, 0.1, 0.5);
    CHECK(fuse_to_world(h1, c1, 30).left.at_frame(0).wrist.translation.x() == doctest::Approx(1.2));
  }
  SUBCASE("hand frame without a camera") {
    std::vector<HandTrackFrame> h1(1);
    h1[0].frame_index = 99;
    try {
      fuse_to_world(h1, cams, 30);
      FAIL("expected AlignmentError");
    } catch (const AlignmentError& e) {
      CHECK(e.missing_frames() == std::vector<int>{99});
    }
  }
}

TEST_CASE("smoothing spline") {
  SUBCASE("constant is unchanged") {
    std::vector<Eigen::Vector3d> c(50, Eigen::Vector3d(0.1, 0.2, 0.3));
    for (const auto& v : smoothing_spline(c, 1.0 / 30, 1.0)) CHECK((v - c[0]).norm() < 1e-12);
  }
  SUBCASE("huge lambda gives the least-squares line") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n(0.0, 0.01);
    const int N = 60;
    const double dt = 1.0 / 30;
    std::vector<Eigen::Vector3d> y;
    for (int i = 0; i < N; ++i) y.emplace_back(0.5 * i * dt + n(rng), -0.2 * i * dt + n(rng), 1.0 + n(rng));
    const auto g = smoothing_spline(y, dt, 1e12);
    // Closed-form OLS line per axis.
    for (int a = 0; a < 3; ++a) {
      double sx = 0, sy = 0, sxx = 0, sxy = 0;
      for (int i = 0; i < N; ++i) {
        const double x = i * dt;
        sx += x;
        sy += y[i][a];
        sxx += x * x;
        sxy += x * y[i][a];
      }
      const double slope = (N * sxy - sx * sy) / (N * sxx - sx * sx);
      const double icpt = (sy - slope * sx) / N;
      for (int i = 0; i < N; ++i) CHECK(std::abs(g[i][a] - (icpt + slope * i * dt)) < 1e-6);
    }
  }
  SUBCASE("noisy sine gets closer to the clean sine") {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n(0.0, 0.01);
    const double dt = 1.0 / 30;
    std::vector<Eigen::Vector3d> clean, noisy;
    for (int i = 0; i < 150; ++i) {
      const double s = 0.1 * std::sin(2.0 * std::numbers::pi * 0.5 * i * dt);
      clean.emplace_back(s, 0, 0);
      noisy.emplace_back(s + n(rng), n(rng), n(rng));
    }
    const auto g = smoothing_spline(noisy, dt, 1e-4);
    double in = 0, out = 0;
    for (int i = 0; i < 150; ++i) {
      in += (noisy[i] - clean[i]).squaredNorm();
      out += (g[i] - clean[i]).squaredNorm();
    }
    CHECK(out < in);
  }
}

TEST_CASE("smooth_track keeps translations inside the local raw hull") {
  const auto t = synth::random_wrist_track(5, 120);
  const auto r = smooth_track(t);
  for (int i = 0; i < t.size(); ++i) {
    for (int a = 0; a < 3; ++a) {
      double mn = 1e9, mx = -1e9;
      for (int j = std::max(0, i - 3); j <= std::min(t.size() - 1, i + 3); ++j) {
        mn = std::min(mn, t.samples[j].wrist.translation[a]);
        mx = std::max(mx, t.samples[j].wrist.translation[a]);
      }
      CHECK(r.track.samples[i].wrist.translation[a] >= mn);
      CHECK(r.track.samples[i].wrist.translation[a] <= mx);
    }
    CHECK(r.track.samples[i].wrist.rotation.orthonormality_error() < 1e-12);
  }
}

TEST_CASE("outlier removal") {
  SUBCASE("clean constant-speed track keeps every frame") {
    const auto t = remove_outliers(line_track(90, 30, Vec3(0.3, 0, 0)));
    for (const auto& s : t.samples) CHECK(s.valid);
  }
  SUBCASE("a single teleport is removed") {
    auto t = line_track(90, 30, Vec3(0.3, 0, 0));
    t.samples[40].wrist.translation += Vec3(1, 0, 0);
    const auto r = remove_outliers(t);
    for (int i = 0; i < 90; ++i) CHECK(r.samples[i].valid == (i != 40));
  }
  SUBCASE("planted spikes: full recall, no false positives") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      std::mt19937_64 rng(seed);
      auto t = line_track(150, 30, Vec3(0.2, 0.1, 0));
      std::set<int> planted;
      std::uniform_int_distribution<int> idx(2, 147);
      while (planted.size() < 4) {
        const int i = idx(rng);
        bool far = true;
        for (int p : planted) far &= std::abs(p - i) > 3;
        if (far) planted.insert(i);
      }
      std::uniform_real_distribution<double> mag(0.3, 1.0);
      for (int i : planted) t.samples[i].wrist.translation += Vec3(mag(rng), -mag(rng), mag(rng));
      const auto r = remove_outliers(t);
      for (int i = 0; i < 150; ++i) CHECK(r.samples[i].valid == !planted.contains(i));
    }
  }
}

TEST_CASE("video chopping") {
  CHECK(chop_video(300, 30) == std::vector<FrameSpan>{{0, 300}});
  CHECK(chop_video(1500, 30) == std::vector<FrameSpan>{{0, 600}, {450, 1050}, {900, 1500}});
  CHECK_THROWS_AS(chop_video(100, 30, 5, 5), std::invalid_argument);
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<int> len(1, 5000);
  for (int i = 0; i < 200; ++i) {
    const int n = len(rng);
    std::vector<bool> covered(static_cast<std::size_t>(n), false);
    for (auto s : chop_video(n, 30)) {
      CHECK(s.begin < s.end);
      for (int f = s.begin; f < s.end; ++f) covered[f] = true;
    }
    CHECK(std::all_of(covered.begin(), covered.end(), [](bool b) { return b; }));
  }
}
