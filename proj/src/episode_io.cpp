#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "handvla/episode.hpp"
#include "handvla/errors.hpp"
#include "handvla/hash.hpp"
#include "json.hpp"

namespace handvla::episode {

namespace {

constexpr char kMagic[8] = {'H', 'V', 'L', 'A', 'E', 'P', 'I', 'S'};
constexpr std::size_t kPrefix = 16;  // magic + version + header length
constexpr std::size_t kAlign = 64;
// Caps header-declared sizes so a corrupted header cannot request absurd allocations.
constexpr long long kMaxFrames = 1LL << 24;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
std::uint32_t get_u32(const std::uint8_t* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}
std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

void put_floats(std::vector<std::uint8_t>& out, const std::vector<float>& v) {
  for (float f : v) put_u32(out, std::bit_cast<std::uint32_t>(f));
}
std::vector<float> get_floats(const std::uint8_t*& p, std::size_t n) {
  std::vector<float> v(n);
  for (std::size_t i = 0; i < n; ++i, p += 4) v[i] = std::bit_cast<float>(get_u32(p));
  return v;
}

std::size_t padded(std::size_t n) { return (n + kAlign - 1) / kAlign * kAlign; }

nlohmann::json optional_text(const std::optional<std::string>& s) {
  return s ? nlohmann::json(*s) : nlohmann::json(nullptr);
}
std::optional<std::string> text_from(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<std::string>();
}

}  // namespace

std::vector<std::uint8_t> serialize_episode(const Episode& ep) {
  ep.validate();
  const nlohmann::json header{
      {"version", kEpisodeVersion},
      {"id", ep.id},
      {"video", ep.video},
      {"hand", std::string(to_string(ep.primary_hand))},
      {"start_frame", ep.start_frame},
      {"end_frame", ep.end_frame},
      {"fps", ep.fps},
      {"fov", {ep.fov.horizontal_rad, ep.fov.vertical_rad}},
      {"frames", ep.frames()},
      {"steps", ep.steps()},
      {"instruction", {{"left", optional_text(ep.instruction.left)}, {"right", optional_text(ep.instruction.right)}}},
      {"caption_variants", ep.caption_variants},
      {"tensors", {"states", "state_valid", "actions", "action_mask", "cam_rotation"}},
  };
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(kMagic, kMagic + 8);
  put_u32(out, kEpisodeVersion);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  out.resize(padded(out.size()), 0);
  put_floats(out, ep.states);
  put_floats(out, ep.state_valid);
  put_floats(out, ep.actions);
  put_floats(out, ep.action_mask);
  put_floats(out, ep.cam_rotation);
  put_u64(out, fnv1a(out));
  return out;
}

Episode deserialize_episode(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kPrefix) throw TruncatedError("episode file shorter than its fixed prefix");
  if (std::memcmp(bytes.data(), kMagic, 8) != 0) throw EpisodeFormatError("not an episode file (bad magic)");
  const std::uint32_t version = get_u32(bytes.data() + 8);
  if (version != kEpisodeVersion) {
    throw VersionMismatchError("episode version " + std::to_string(version) + ", expected " +
                               std::to_string(kEpisodeVersion));
  }
  const std::size_t header_len = get_u32(bytes.data() + 12);
  if (header_len > bytes.size() - kPrefix) throw TruncatedError("episode header runs past end of file");

  Episode ep;
  long long frames = 0, steps = 0;
  try {
    const auto h = nlohmann::json::parse(bytes.begin() + kPrefix, bytes.begin() + static_cast<std::ptrdiff_t>(kPrefix + header_len));
    if (h.at("version").get<std::uint32_t>() != version) throw EpisodeFormatError("header version disagrees with prefix");
    ep.id = h.at("id").get<std::string>();
    ep.video = h.at("video").get<std::string>();
    ep.primary_hand = parse_hand(h.at("hand").get<std::string>());
    ep.start_frame = h.at("start_frame").get<int>();
    ep.end_frame = h.at("end_frame").get<int>();
    ep.fps = h.at("fps").get<double>();
    const auto& fov = h.at("fov");
    ep.fov = {fov.at(0).get<double>(), fov.at(1).get<double>()};
    ep.instruction.left = text_from(h.at("instruction").at("left"));
    ep.instruction.right = text_from(h.at("instruction").at("right"));
    ep.caption_variants = h.at("caption_variants").get<std::vector<std::string>>();
    frames = h.at("frames").get<long long>();
    steps = h.at("steps").get<long long>();
  } catch (const nlohmann::json::exception& e) {
    throw EpisodeFormatError(std::string("episode header: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw EpisodeFormatError(std::string("episode header: ") + e.what());
  }
  if (frames < 1 || frames > kMaxFrames || frames != static_cast<long long>(ep.end_frame) - ep.start_frame ||
      steps != frames - 1) {
    throw EpisodeFormatError("episode header frame counts are inconsistent");
  }

  const auto fr = static_cast<std::size_t>(frames);
  const auto st = static_cast<std::size_t>(steps);
  const std::size_t floats = 2 * fr * kActionDim + 2 * st * kActionDim + 9 * fr;
  const std::size_t body = padded(kPrefix + header_len);
  const std::size_t expected = body + 4 * floats + 8;
  if (bytes.size() < expected) throw TruncatedError("episode tensor block truncated");
  if (bytes.size() > expected) throw EpisodeFormatError("trailing bytes after episode checksum");
  const std::uint64_t stored = get_u64(bytes.data() + expected - 8);
  if (fnv1a(bytes.first(expected - 8)) != stored) throw ChecksumError("episode checksum mismatch");

  const std::uint8_t* p = bytes.data() + body;
  ep.states = get_floats(p, fr * kActionDim);
  ep.state_valid = get_floats(p, fr * kActionDim);
  ep.actions = get_floats(p, st * kActionDim);
  ep.action_mask = get_floats(p, st * kActionDim);
  ep.cam_rotation = get_floats(p, fr * 9);
  try {
    ep.validate();
  } catch (const std::invalid_argument& e) {
    throw EpisodeFormatError(std::string("episode content: ") + e.what());
  }
  return ep;
}

void save_episode(const std::filesystem::path& path, const Episode& ep) {
  const auto bytes = serialize_episode(ep);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Episode load_episode(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open episode " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_episode(bytes);
}

std::vector<DatasetEntry> load_dataset_index(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset index " + path.string());
  const auto base = path.parent_path();
  std::vector<DatasetEntry> out;
  try {
    const auto j = nlohmann::json::parse(in);
    for (const auto& d : j.at("datasets")) {
      DatasetEntry e;
      e.name = d.at("name").get<std::string>();
      if (d.contains("weight") && !d.at("weight").is_null()) e.weight = d.at("weight").get<double>();
      for (const auto& p : d.at("episodes")) {
        std::filesystem::path ep = p.get<std::string>();
        e.episodes.push_back(ep.is_absolute() ? ep : base / ep);
      }
      out.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
  return out;
}

}  // namespace handvla::episode
