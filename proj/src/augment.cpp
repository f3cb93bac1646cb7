#include "handvla/augment.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "handvla/kernels.hpp"

namespace handvla::augment {

namespace {

using episode::kActionDim;
using episode::kHandDim;
using episode::kThetaDim;
using episode::kThetaOffset;

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

float neg(float v) { return v == 0.0f ? 0.0f : -v; }

geom::Rotation rotation_at(const std::vector<float>& flat, std::size_t row) {
  geom::Mat3 m;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) m(i, j) = flat[row * 9 + 3 * i + j];
  return geom::Rotation::nearest(m);
}

void store_rotation(std::vector<float>& flat, std::size_t row, const geom::Mat3& m) {
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) flat[row * 9 + 3 * i + j] = static_cast<float>(m(i, j));
}

}  // namespace

AugmentParams AugmentParams::identity(const geom::CameraIntrinsics& source) {
  AugmentParams p;
  p.target_hfov_rad = geom::field_of_view(source).horizontal_rad;
  p.aspect = static_cast<double>(source.width) / source.height;
  p.output_width = source.width;
  return p;
}

geom::Mat3 WarpSpec::new_to_src() const {
  return k_src.matrix() * r_aug.matrix() * k_new.matrix().inverse();
}

WarpSpec warp_spec(const geom::CameraIntrinsics& source, const AugmentParams& params) {
  source.validate();
  const double src_hfov = geom::field_of_view(source).horizontal_rad;
  if (!(params.target_hfov_rad > 0.0)) throw std::invalid_argument("target FoV must be positive");
  if (params.target_hfov_rad > src_hfov + 1e-12) throw std::invalid_argument("target FoV exceeds the source FoV");
  if (!(params.aspect > 0.0) || !std::isfinite(params.aspect)) throw std::invalid_argument("aspect must be positive");
  const double n = params.center_ray.norm();
  if (!(n > 0.0) || !params.center_ray.allFinite()) throw std::invalid_argument("crop ray must be non-zero");
  const geom::Vec3 ray = params.center_ray / n;
  if (!(ray.z() > 0.0)) throw std::invalid_argument("crop ray must point in front of the camera");

  WarpSpec spec;
  spec.k_src = source;
  spec.r_aug = geom::Rotation::from_quaternion(Eigen::Quaterniond::FromTwoVectors(geom::Vec3::UnitZ(), ray));
  const int w = params.output_width > 0 ? params.output_width : source.width;
  const int h = std::max(1, static_cast<int>(std::lround(w / params.aspect)));
  const double f = (w / 2.0) / std::tan(params.target_hfov_rad / 2.0);
  spec.k_new = {f, f, (w - 1) / 2.0, (h - 1) / 2.0, w, h};
  return spec;
}

Image warp_image(const Image& image, const WarpSpec& spec) {
  Image out(spec.k_new.width, spec.k_new.height);
  kernels::warp_bilinear_omp(image, spec.new_to_src(), out);
  return out;
}

geom::Vec3 transform_point(const geom::Vec3& p, const WarpSpec& spec) { return spec.r_aug.inverse() * p; }

std::vector<geom::Pose> transform_poses(std::span<const geom::Pose> poses, const WarpSpec& spec) {
  const geom::Pose inv{spec.r_aug.inverse(), geom::Vec3::Zero()};
  std::vector<geom::Pose> out;
  out.reserve(poses.size());
  for (const auto& p : poses) out.push_back(inv * p);
  return out;
}

episode::Episode transform_episode(const episode::Episode& ep, const WarpSpec& spec) {
  episode::Episode out = ep;
  const geom::Rotation rt = spec.r_aug.inverse();
  auto rewrite = [&](std::vector<float>& rows, const std::vector<float>& mask, std::size_t n, bool delta) {
    for (std::size_t k = 0; k < n; ++k) {
      for (int o : {0, kHandDim}) {
        const std::size_t base = k * kActionDim + o;
        if (mask[base] == 0.0f) continue;
        const geom::Vec3 t = rt * geom::Vec3(rows[base], rows[base + 1], rows[base + 2]);
        const geom::Rotation r = geom::Rotation::from_euler({rows[base + 3], rows[base + 4], rows[base + 5]});
        // Absolute rotations pick up R_aug^T on the left; camera-frame deltas are conjugated.
        const geom::Vec3 e = (delta ? rt * r * spec.r_aug : rt * r).euler();
        for (int a = 0; a < 3; ++a) {
          rows[base + a] = static_cast<float>(t[a]);
          rows[base + 3 + a] = static_cast<float>(e[a]);
        }
      }
    }
  };
  rewrite(out.states, out.state_valid, static_cast<std::size_t>(ep.frames()), false);
  rewrite(out.actions, out.action_mask, static_cast<std::size_t>(ep.steps()), true);
  for (std::size_t k = 0; k < static_cast<std::size_t>(ep.frames()); ++k) {
    store_rotation(out.cam_rotation, k, (rotation_at(ep.cam_rotation, k) * spec.r_aug).matrix());
  }
  out.fov = geom::field_of_view(spec.k_new);
  return out;
}

bool contain_trajectory(const AugmentParams& params, std::span<const geom::Vec3> palm,
                        const geom::CameraIntrinsics& source) {
  const WarpSpec spec = warp_spec(source, params);
  const auto& k = spec.k_new;
  for (const auto& p : palm) {
    if (!(p.z() > 0.0)) continue;
    const geom::Vec3 q = transform_point(p, spec);
    if (!(q.z() > 0.0)) return false;
    const geom::Vec2 px = geom::project(k, q);
    if (px.x() < 0.0 || px.y() < 0.0 || px.x() > k.width - 1 || px.y() > k.height - 1) return false;
  }
  return true;
}

SampleResult sample_crop(std::mt19937_64& rng, const geom::CameraIntrinsics& source,
                         std::span<const geom::Vec3> palm, const SamplerConfig& c) {
  if (c.fov_scale_min <= 0.0 || c.fov_scale_max > 1.0 || c.fov_scale_min > c.fov_scale_max ||
      c.aspect_min <= 0.0 || c.aspect_min > c.aspect_max || c.center_margin < 0.0 || c.center_margin >= 0.5) {
    throw std::invalid_argument("sampler ranges are invalid");
  }
  const double src_hfov = geom::field_of_view(source).horizontal_rad;
  std::uniform_real_distribution<double> scale(c.fov_scale_min, c.fov_scale_max);
  std::uniform_real_distribution<double> aspect(c.aspect_min, c.aspect_max);
  std::uniform_real_distribution<double> u(c.center_margin * (source.width - 1),
                                           (1.0 - c.center_margin) * (source.width - 1));
  std::uniform_real_distribution<double> v(c.center_margin * (source.height - 1),
                                           (1.0 - c.center_margin) * (source.height - 1));
  const geom::Mat3 k_inv = source.matrix().inverse();
  for (int attempt = 1; attempt <= c.max_attempts; ++attempt) {
    AugmentParams p;
    p.target_hfov_rad = scale(rng) * src_hfov;
    p.aspect = aspect(rng);
    const double px = u(rng), py = v(rng);
    p.center_ray = (k_inv * geom::Vec3(px, py, 1.0)).normalized();
    p.output_width = source.width;
    if (contain_trajectory(p, palm, source)) return {p, attempt, false};
  }
  return {AugmentParams::identity(source), c.max_attempts, true};
}

SampleResult sample_augment(std::uint64_t seed, const geom::CameraIntrinsics& source,
                            std::span<const geom::Vec3> palm, const std::string& instruction,
                            const std::set<std::string>& lexicon, const SamplerConfig& config) {
  std::mt19937_64 rng(seed);
  SampleResult r = sample_crop(rng, source, palm, config);
  r.params.seed = seed;
  r.params.flip = std::bernoulli_distribution(config.flip_probability)(rng);
  const bool want_jitter = std::bernoulli_distribution(config.jitter_probability)(rng);
  if (want_jitter && jitter_gate(instruction, lexicon)) r.params.jitter = sample_jitter(rng);
  return r;
}

std::string swap_left_right(const std::string& text) {
  std::string out;
  std::size_t i = 0;
  while (i < text.size()) {
    if (!std::isalpha(static_cast<unsigned char>(text[i]))) {
      out += text[i++];
      continue;
    }
    std::size_t j = i;
    while (j < text.size() && std::isalpha(static_cast<unsigned char>(text[j]))) ++j;
    std::string word = text.substr(i, j - i);
    const std::string lw = lower(word);
    if (lw == "left" || lw == "right") {
      std::string repl = lw == "left" ? "right" : "left";
      const bool all_upper = std::all_of(word.begin(), word.end(), [](unsigned char c) { return std::isupper(c); });
      if (all_upper) {
        for (auto& ch : repl) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
      } else if (std::isupper(static_cast<unsigned char>(word[0]))) {
        repl[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(repl[0])));
      }
      word = repl;
    }
    out += word;
    i = j;
  }
  return out;
}

episode::Episode flip_episode(const episode::Episode& ep) {
  episode::Episode out = ep;
  out.primary_hand = other(ep.primary_hand);
  auto flip_rows = [](const std::vector<float>& src, std::vector<float>& dst, std::size_t n) {
    for (std::size_t k = 0; k < n; ++k) {
      for (int h = 0; h < 2; ++h) {
        const float* s = src.data() + k * kActionDim + h * kHandDim;
        float* d = dst.data() + k * kActionDim + (1 - h) * kHandDim;
        d[0] = neg(s[0]);
        d[1] = s[1];
        d[2] = s[2];
        d[3] = s[3];
        d[4] = neg(s[4]);
        d[5] = neg(s[5]);
        for (int j = 0; j < kThetaDim; j += 3) {
          d[kThetaOffset + j] = s[kThetaOffset + j];
          d[kThetaOffset + j + 1] = neg(s[kThetaOffset + j + 1]);
          d[kThetaOffset + j + 2] = neg(s[kThetaOffset + j + 2]);
        }
      }
    }
  };
  auto swap_rows = [](const std::vector<float>& src, std::vector<float>& dst, std::size_t n) {
    for (std::size_t k = 0; k < n; ++k) {
      const float* s = src.data() + k * kActionDim;
      float* d = dst.data() + k * kActionDim;
      std::copy(s, s + kHandDim, d + kHandDim);
      std::copy(s + kHandDim, s + kActionDim, d);
    }
  };
  const auto frames = static_cast<std::size_t>(ep.frames());
  const auto steps = static_cast<std::size_t>(ep.steps());
  flip_rows(ep.states, out.states, frames);
  swap_rows(ep.state_valid, out.state_valid, frames);
  flip_rows(ep.actions, out.actions, steps);
  swap_rows(ep.action_mask, out.action_mask, steps);
  // M R M with M = diag(-1, 1, 1): entries in row 0 xor column 0 change sign.
  for (std::size_t k = 0; k < frames; ++k) {
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        if ((i == 0) != (j == 0)) out.cam_rotation[k * 9 + 3 * i + j] = neg(ep.cam_rotation[k * 9 + 3 * i + j]);
  }
  auto swap_text = [](const std::optional<std::string>& s) -> std::optional<std::string> {
    if (!s) return std::nullopt;
    return swap_left_right(*s);
  };
  out.instruction.left = swap_text(ep.instruction.right);
  out.instruction.right = swap_text(ep.instruction.left);
  for (auto& v : out.caption_variants) v = swap_left_right(v);
  return out;
}

const std::set<std::string>& default_color_lexicon() {
  static const std::set<std::string> words{"red",     "orange", "yellow", "green",  "blue",  "purple",
                                           "pink",    "brown",  "black",  "white",  "gray",  "grey",
                                           "violet",  "cyan",   "magenta", "beige", "maroon", "navy",
                                           "teal",    "turquoise", "gold", "silver", "tan",  "lime"};
  return words;
}

std::set<std::string> load_lexicon(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open lexicon " + path);
  std::set<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos || line[b] == '#') continue;
    const auto e = line.find_last_not_of(" \t\r");
    out.insert(lower(line.substr(b, e - b + 1)));
  }
  return out;
}

bool jitter_gate(const std::string& instruction, const std::set<std::string>& lexicon) {
  std::string word;
  for (std::size_t i = 0; i <= instruction.size(); ++i) {
    const unsigned char c = i < instruction.size() ? static_cast<unsigned char>(instruction[i]) : ' ';
    if (std::isalpha(c)) {
      word += static_cast<char>(std::tolower(c));
    } else if (!word.empty()) {
      if (lexicon.count(word)) return false;
      word.clear();
    }
  }
  return true;
}

ColorJitter sample_jitter(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> b(-0.1, 0.1), c(0.8, 1.2), s(0.8, 1.2);
  ColorJitter j;
  j.brightness = b(rng);
  j.contrast = c(rng);
  j.saturation = s(rng);
  return j;
}

Image apply_jitter(const Image& image, const ColorJitter& j) {
  Image out = image;
  for (std::size_t i = 0; i + 2 < out.rgb.size(); i += 3) {
    const double r = image.rgb[i], g = image.rgb[i + 1], b = image.rgb[i + 2];
    const double luma = 0.299 * r + 0.587 * g + 0.114 * b;
    for (int c = 0; c < 3; ++c) {
      double v = luma + (image.rgb[i + c] - luma) * j.saturation;
      v = (v - 127.5) * j.contrast + 127.5 + j.brightness * 255.0;
      out.rgb[i + c] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
    }
  }
  return out;
}

}  // namespace handvla::augment
