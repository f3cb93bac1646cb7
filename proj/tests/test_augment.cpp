#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "handvla/augment.hpp"
#include "handvla/retarget.hpp"
#include "handvla/synth.hpp"
#include "oracles.hpp"

using namespace handvla;
using namespace handvla::augment;
using geom::Mat3;
using geom::Vec2;
using geom::Vec3;

namespace {

constexpr double kPi = std::numbers::pi;

geom::CameraIntrinsics source_cam(int w = 160, int h = 120) {
  return geom::intrinsics_from_fov({70.0 * kPi / 180.0, 2.0 * std::atan(std::tan(35.0 * kPi / 180.0) * h / w)}, w, h);
}

Vec2 apply_h(const Mat3& h, const Vec2& p) {
  const Vec3 q = h * Vec3(p.x(), p.y(), 1.0);
  return q.head<2>() / q.z();
}

AugmentParams random_params(std::mt19937_64& rng, const geom::CameraIntrinsics& k) {
  std::uniform_real_distribution<double> s(0.6, 1.0), a(0.75, 1.33), u(0.2, 0.8);
  AugmentParams p;
  p.target_hfov_rad = s(rng) * geom::field_of_view(k).horizontal_rad;
  p.aspect = a(rng);
  p.center_ray = Vec3((u(rng) * (k.width - 1) - k.principal_x) / k.focal_x,
                      (u(rng) * (k.height - 1) - k.principal_y) / k.focal_y, 1.0)
                     .normalized();
  return p;
}

// Dot-grid image: Gaussian blobs of radius ~2 px at the given centres.
Image blobs(int w, int h, const std::vector<Vec2>& centres) {
  Image img(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double v = 0.0;
      for (const auto& c : centres) v += std::exp(-((x - c.x()) * (x - c.x()) + (y - c.y()) * (y - c.y())) / (2.0 * 2.0 * 2.0));
      const auto b = static_cast<std::uint8_t>(std::clamp(std::lround(255.0 * v), 0L, 255L));
      img.at(x, y)[0] = img.at(x, y)[1] = img.at(x, y)[2] = b;
    }
  return img;
}

Vec2 centroid(const Image& img, const Vec2& around, double radius) {
  double sx = 0, sy = 0, sw = 0;
  for (int y = std::max(0, static_cast<int>(around.y() - radius)); y <= std::min(img.height - 1, static_cast<int>(around.y() + radius)); ++y)
    for (int x = std::max(0, static_cast<int>(around.x() - radius)); x <= std::min(img.width - 1, static_cast<int>(around.x() + radius)); ++x) {
      const double v = img.at(x, y)[0];
      sx += v * x;
      sy += v * y;
      sw += v;
    }
  return {sx / sw, sy / sw};
}

}  // namespace

TEST_CASE("warp spec") {
  const auto k = source_cam();
  SUBCASE("identity params") {
    const auto s = warp_spec(k, AugmentParams::identity(k));
    CHECK((s.r_aug.matrix() - Mat3::Identity()).norm() < 1e-15);
    CHECK(s.k_new.focal_x == doctest::Approx(k.focal_x).epsilon(1e-12));
    CHECK(s.k_new.width == k.width);
    CHECK(s.k_new.height == k.height);
    CHECK((s.new_to_src() - Mat3::Identity()).norm() < 1e-9);
  }
  SUBCASE("axis ray with half FoV is a central crop") {
    AugmentParams p = AugmentParams::identity(k);
    p.target_hfov_rad /= 2.0;
    const auto s = warp_spec(k, p);
    CHECK((s.r_aug.matrix() - Mat3::Identity()).norm() < 1e-15);
    CHECK(s.k_new.principal_x == (k.width - 1) / 2.0);
    CHECK(s.k_new.focal_x == doctest::Approx((k.width / 2.0) / std::tan(p.target_hfov_rad / 2.0)));
  }
  SUBCASE("optical axis lands on the crop ray") {
    std::mt19937_64 rng(1);
    for (int i = 0; i < 200; ++i) {
      const auto p = random_params(rng, k);
      const auto s = warp_spec(k, p);
      CHECK((s.r_aug * Vec3::UnitZ() - p.center_ray).norm() < 1e-9);
      const Vec3 axis = Vec3::UnitZ().cross(p.center_ray);
      if (axis.norm() > 1e-12) {
        const Mat3 expect = oracle::rodrigues(axis, std::acos(std::clamp(p.center_ray.z(), -1.0, 1.0)));
        CHECK((s.r_aug.matrix() - expect).cwiseAbs().maxCoeff() < 1e-9);
      }
    }
  }
  SUBCASE("invalid params") {
    AugmentParams p = AugmentParams::identity(k);
    p.target_hfov_rad *= 1.1;
    CHECK_THROWS_AS(warp_spec(k, p), std::invalid_argument);
    p = AugmentParams::identity(k);
    p.aspect = 0.0;
    CHECK_THROWS_AS(warp_spec(k, p), std::invalid_argument);
    p = AugmentParams::identity(k);
    p.center_ray = Vec3::Zero();
    CHECK_THROWS_AS(warp_spec(k, p), std::invalid_argument);
  }
}

TEST_CASE("image warping") {
  const auto k = source_cam();
  SUBCASE("identity warp is pixel-identical") {
    std::mt19937_64 rng(2);
    Image img(k.width, k.height);
    for (auto& b : img.rgb) b = static_cast<std::uint8_t>(rng());
    CHECK(warp_image(img, warp_spec(k, AugmentParams::identity(k))) == img);
  }
  SUBCASE("dot grid under a virtual rotation follows the homography") {
    std::vector<Vec2> centres;
    for (int y = 12; y < k.height - 8; y += 16)
      for (int x = 12; x < k.width - 8; x += 16) centres.emplace_back(x + 0.3, y + 0.6);
    const Image img = blobs(k.width, k.height, centres);
    AugmentParams p;
    p.target_hfov_rad = 0.8 * geom::field_of_view(k).horizontal_rad;
    p.aspect = 1.2;
    p.center_ray = Vec3(std::sin(0.12), 0.05, std::cos(0.12)).normalized();
    const auto s = warp_spec(k, p);
    const Image out = warp_image(img, s);
    const Mat3 src_to_new = s.new_to_src().inverse();
    int checked = 0;
    for (const auto& c : centres) {
      const Vec2 q = apply_h(src_to_new, c);
      if (q.x() < 8 || q.y() < 8 || q.x() > out.width - 9 || q.y() > out.height - 9) continue;
      CHECK((centroid(out, q, 6.0) - q).norm() < 0.5);
      ++checked;
    }
    CHECK(checked >= 20);
  }
  SUBCASE("horizontal flip twice is exact") {
    std::mt19937_64 rng(3);
    Image img(37, 11);
    for (auto& b : img.rgb) b = static_cast<std::uint8_t>(rng());
    CHECK(flip_horizontal(flip_horizontal(img)) == img);
    CHECK(flip_horizontal(img).at(0, 3)[1] == img.at(36, 3)[1]);
  }
}

TEST_CASE("pose transforms") {
  const auto k = source_cam();
  SUBCASE("identity spec leaves poses unchanged") {
    const auto s = warp_spec(k, AugmentParams::identity(k));
    const geom::Pose p{geom::Rotation::from_euler(Vec3(0.2, 0.1, -0.3)), Vec3(0.1, 0.2, 0.5)};
    const auto out = transform_poses(std::span(&p, 1), s);
    CHECK((out[0].translation - p.translation).norm() < 1e-15);
    CHECK((out[0].rotation.matrix() - p.rotation.matrix()).norm() < 1e-15);
  }
  SUBCASE("90 degree virtual yaw turns x motion into z motion") {
    WarpSpec s;
    s.k_src = s.k_new = k;
    s.r_aug = geom::Rotation::from_axis_angle(Vec3::UnitY(), kPi / 2);
    const Vec3 a = transform_point(Vec3(0, 0, 1), s), b = transform_point(Vec3(0.1, 0, 1), s);
    CHECK(((b - a) - Vec3(0, 0, 0.1)).norm() < 1e-12);
  }
  SUBCASE("rigid: inter-frame distances preserved") {
    std::mt19937_64 rng(4);
    const auto s = warp_spec(k, random_params(rng, k));
    const auto t = synth::random_wrist_track(4, 50);
    std::vector<geom::Pose> poses;
    for (const auto& x : t.samples) poses.push_back(x.wrist);
    const auto out = transform_poses(poses, s);
    for (std::size_t i = 0; i + 1 < poses.size(); ++i)
      CHECK(std::abs((out[i + 1].translation - out[i].translation).norm() - (poses[i + 1].translation - poses[i].translation).norm()) < 1e-12);
  }
  SUBCASE("reprojection: transformed points project where the warp sends them") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-0.2, 0.2), z(0.4, 1.2);
    for (int trial = 0; trial < 50; ++trial) {
      const auto s = warp_spec(k, random_params(rng, k));
      const Mat3 src_to_new = s.new_to_src().inverse();
      for (int i = 0; i < 20; ++i) {
        const Vec3 p(u(rng), u(rng), z(rng));
        const Vec2 direct = geom::project(s.k_new, transform_point(p, s));
        const Vec2 via = apply_h(src_to_new, geom::project(k, p));
        CHECK((direct - via).norm() < 1e-6);
      }
    }
  }
}

TEST_CASE("trajectory containment") {
  const auto k = source_cam();
  std::vector<Vec3> centre{Vec3(0, 0, 0.6), Vec3(0.01, 0.01, 0.6), Vec3(-0.01, 0.0, 0.65)};
  AugmentParams p = AugmentParams::identity(k);
  p.target_hfov_rad *= 0.9;
  CHECK(contain_trajectory(p, centre, k));
  auto wide = centre;
  wide.push_back(Vec3(0.40, 0.0, 0.6));  // inside the source, outside the crop
  CHECK(!contain_trajectory(p, wide, k));
  wide.back().z() = -0.6;  // behind the camera: ignored
  CHECK(contain_trajectory(p, wide, k));

  SUBCASE("sampler acceptance rate matches a brute-force grid estimate") {
    const std::vector<Vec3> traj{Vec3(0.12, 0.05, 0.6), Vec3(0.18, 0.08, 0.6), Vec3(0.22, 0.02, 0.7)};
    SamplerConfig cfg;
    // Grid over (fov scale, aspect, u, v) with the same uniform ranges as the sampler.
    int acc = 0, tot = 0;
    const double src = geom::field_of_view(k).horizontal_rad;
    const int g = 9;
    for (int a = 0; a < g; ++a)
      for (int b = 0; b < g; ++b)
        for (int c = 0; c < g; ++c)
          for (int d = 0; d < g; ++d) {
            AugmentParams q;
            q.target_hfov_rad = src * (cfg.fov_scale_min + (a + 0.5) / g * (cfg.fov_scale_max - cfg.fov_scale_min));
            q.aspect = cfg.aspect_min + (b + 0.5) / g * (cfg.aspect_max - cfg.aspect_min);
            const double px = (cfg.center_margin + (c + 0.5) / g * (1 - 2 * cfg.center_margin)) * (k.width - 1);
            const double py = (cfg.center_margin + (d + 0.5) / g * (1 - 2 * cfg.center_margin)) * (k.height - 1);
            q.center_ray = Vec3((px - k.principal_x) / k.focal_x, (py - k.principal_y) / k.focal_y, 1).normalized();
            q.output_width = k.width;
            acc += contain_trajectory(q, traj, k);
            ++tot;
          }
    const double p_grid = static_cast<double>(acc) / tot;
    REQUIRE(p_grid > 0.05);
    REQUIRE(p_grid < 0.95);
    int first = 0;
    const int n = 4000;
    std::mt19937_64 rng(6);
    for (int i = 0; i < n; ++i) {
      const auto r = sample_crop(rng, k, traj, cfg);
      first += r.attempts == 1 && !r.fallback;
      if (!r.fallback) CHECK(contain_trajectory(r.params, traj, k));
    }
    const double p_emp = static_cast<double>(first) / n;
    CHECK(std::abs(p_emp - p_grid) < 4.0 * std::sqrt(p_grid * (1 - p_grid) / n) + 0.02);
  }
  SUBCASE("impossible trajectories fall back to the identity crop") {
    const std::vector<Vec3> outside{Vec3(-0.5, 0, 0.6), Vec3(0.5, 0, 0.6)};
    std::mt19937_64 rng(7);
    const auto r = sample_crop(rng, k, outside);
    CHECK(r.fallback);
    CHECK(r.attempts == 20);
    CHECK(r.params.target_hfov_rad == geom::field_of_view(k).horizontal_rad);
  }
  SUBCASE("seeded sampling is reproducible") {
    const auto a = sample_augment(42, k, centre, "pick up the cup", default_color_lexicon());
    const auto b = sample_augment(42, k, centre, "pick up the cup", default_color_lexicon());
    CHECK(a.params.center_ray == b.params.center_ray);
    CHECK(a.params.flip == b.params.flip);
    CHECK(a.params.jitter.has_value() == b.params.jitter.has_value());
  }
}

TEST_CASE("flipping") {
  auto ep = synth::random_episode(11, 40);
  ep.instruction = episode::format_instruction("push the left door", std::nullopt);
  ep.caption_variants = {"Left hand pushes", "RIGHT side"};

  SUBCASE("flip twice is exact") {
    const auto twice = flip_episode(flip_episode(ep));
    CHECK(twice.actions == ep.actions);
    CHECK(twice.action_mask == ep.action_mask);
    CHECK(twice.states == ep.states);
    CHECK(twice.state_valid == ep.state_valid);
    CHECK(twice == ep);
  }
  SUBCASE("text") {
    const auto f = flip_episode(ep);
    CHECK(f.instruction.render() == "Left hand: None. Right hand: push the right door.");
    CHECK(f.caption_variants == std::vector<std::string>{"Right hand pushes", "LEFT side"});
    CHECK(episode::format_instruction("push", std::nullopt).render() == "Left hand: push. Right hand: None.");
    CHECK(swap_left_right("leftover rightly left") == "leftover rightly right");
  }
  SUBCASE("rotations stay proper") {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> a(-3, 3);
    const Mat3 m = Vec3(-1, 1, 1).asDiagonal();
    for (int i = 0; i < 100; ++i) {
      const Vec3 e(a(rng), a(rng) / 2, a(rng));
      const Mat3 r = oracle::euler_xyz(e);
      CHECK((m * r * m).determinant() == doctest::Approx(1.0));
      CHECK((oracle::euler_xyz(Vec3(e[0], -e[1], -e[2])) - m * r * m).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
  SUBCASE("mirrored fingertips") {
    const auto f = flip_episode(ep);
    const auto right = retarget::mano15(Hand::Right), left = retarget::mano15(Hand::Left);
    const Mat3 m = Vec3(-1, 1, 1).asDiagonal();
    int checked = 0;
    for (int i = 0; i < ep.frames(); ++i) {
      const float* src = ep.states.data() + static_cast<std::size_t>(i) * episode::kActionDim + episode::kHandDim;
      const float* dst = f.states.data() + static_cast<std::size_t>(i) * episode::kActionDim;
      if (ep.state_valid[static_cast<std::size_t>(i) * episode::kActionDim + episode::kHandDim] == 0.0f) continue;
      Eigen::VectorXd q_r(45), q_l(45);
      for (int j = 0; j < 45; ++j) {
        q_r[j] = src[episode::kThetaOffset + j];
        q_l[j] = dst[episode::kThetaOffset + j];
      }
      const geom::Pose w_r{geom::Rotation::from_euler(Vec3(src[3], src[4], src[5])), Vec3(src[0], src[1], src[2])};
      const geom::Pose w_l{geom::Rotation::from_euler(Vec3(dst[3], dst[4], dst[5])), Vec3(dst[0], dst[1], dst[2])};
      const auto tips_r = oracle::fk_sites(right, q_r), tips_l = oracle::fk_sites(left, q_l);
      for (std::size_t s = 0; s < tips_r.size(); ++s) CHECK((w_l * tips_l[s] - m * (w_r * tips_r[s])).norm() < 1e-7);
      ++checked;
    }
    CHECK(checked > 10);
  }
}

TEST_CASE("colour jitter gate") {
  const auto& lex = default_color_lexicon();
  CHECK(lex.size() == 24);
  CHECK(!jitter_gate("pick up the red cup", lex));
  CHECK(jitter_gate("pick up the cup", lex));
  CHECK(!jitter_gate("Grab the BLUE towel.", lex));
  CHECK(jitter_gate("reduce the bluetooth volume", lex));
  std::mt19937_64 rng(9);
  const std::vector<std::string> words{"pick", "up", "the", "Red", "cup", "GREEN", "bowl", "open", "drawer", "teal"};
  for (int i = 0; i < 500; ++i) {
    std::string s, upper;
    bool colour = false;
    for (int w = 0; w < 5; ++w) {
      const auto& word = words[rng() % words.size()];
      s += word + " ";
      std::string l;
      for (char c : word) l += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      colour |= lex.count(l) > 0;
    }
    for (char c : s) upper += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    CHECK(jitter_gate(s, lex) == !colour);
    CHECK(jitter_gate(upper, lex) == jitter_gate(s, lex));
  }
  Image img(4, 4);
  for (auto& b : img.rgb) b = 100;
  CHECK(apply_jitter(img, ColorJitter{}) == img);
}

TEST_CASE("augmented episodes") {
  const auto ep = synth::random_episode(12, 30);
  const auto k = geom::intrinsics_from_fov(ep.fov, 320, 240);
  const auto id = transform_episode(ep, warp_spec(k, AugmentParams::identity(k)));
  for (std::size_t i = 0; i < ep.actions.size(); ++i) CHECK(std::abs(id.actions[i] - ep.actions[i]) < 1e-6);
  std::mt19937_64 rng(10);
  const auto s = warp_spec(k, random_params(rng, k));
  const auto t = transform_episode(ep, s);
  CHECK_NOTHROW(t.validate());
  CHECK(t.fov == geom::field_of_view(s.k_new));
  for (int i = 0; i < ep.frames(); ++i) {
    const float* a = ep.states.data() + static_cast<std::size_t>(i) * episode::kActionDim;
    const float* b = t.states.data() + static_cast<std::size_t>(i) * episode::kActionDim;
    if (ep.state_valid[static_cast<std::size_t>(i) * episode::kActionDim] == 0.0f) continue;
    const Vec3 expect = s.r_aug.matrix().transpose() * Vec3(a[0], a[1], a[2]);
    CHECK((Vec3(b[0], b[1], b[2]) - expect).norm() < 1e-6);
  }
}
