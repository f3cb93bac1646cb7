#include "handvla/log.hpp"

#include <chrono>
#include <cstdlib>
#include <ostream>
#include <stdexcept>

#include "handvla/hash.hpp"

namespace handvla::log {

std::string_view to_string(Level l) {
  switch (l) {
    case Level::Debug: return "debug";
    case Level::Info: return "info";
    case Level::Warn: return "warn";
    case Level::Error: return "error";
  }
  return "info";
}

Level parse_level(std::string_view s) {
  if (s == "debug") return Level::Debug;
  if (s == "info") return Level::Info;
  if (s == "warn") return Level::Warn;
  if (s == "error") return Level::Error;
  throw std::invalid_argument("unknown log level '" + std::string(s) + "'");
}

void Logger::emit(Level level, std::string_view event, const nlohmann::json& fields, std::string_view corr) {
  if (level < min_) return;
  const auto now = std::chrono::duration_cast<std::chrono::milliseconds>(
                       std::chrono::system_clock::now().time_since_epoch())
                       .count();
  nlohmann::ordered_json rec;
  rec["ts_ms"] = now;
  rec["level"] = to_string(level);
  rec["event"] = event;
  if (!corr.empty()) rec["corr"] = corr;
  if (fields.is_object()) {
    for (const auto& [k, v] : fields.items()) rec[k] = v;
  }
  const std::string line = rec.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
  std::lock_guard lock(mu_);
  *out_ << line << '\n';
  out_->flush();
}

std::string correlation_id(std::string_view video) {
  return std::string(video) + "#" + hex64(fnv1a(video)).substr(0, 8);
}

std::int64_t timestamp() {
  if (const char* s = std::getenv("SOURCE_DATE_EPOCH")) {
    char* end = nullptr;
    const long long v = std::strtoll(s, &end, 10);
    if (end != s && *end == '\0') return v;
  }
  return std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch()).count();
}

}  // namespace handvla::log
