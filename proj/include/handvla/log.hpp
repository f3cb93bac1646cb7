#pragma once

#include <cstdint>
#include <iosfwd>
#include <mutex>
#include <string>
#include <string_view>

#include "json.hpp"

namespace handvla::log {

enum class Level { Debug = 0, Info = 1, Warn = 2, Error = 3 };

std::string_view to_string(Level l);
Level parse_level(std::string_view s);  // throws std::invalid_argument

// One JSON object per line: {"ts","level","event","corr",...fields}.
class Logger {
 public:
  explicit Logger(std::ostream& out, Level min_level = Level::Info) : out_(&out), min_(min_level) {}

  void emit(Level level, std::string_view event, const nlohmann::json& fields = nlohmann::json::object(),
            std::string_view corr = {});
  void debug(std::string_view e, const nlohmann::json& f = nlohmann::json::object(), std::string_view c = {}) { emit(Level::Debug, e, f, c); }
  void info(std::string_view e, const nlohmann::json& f = nlohmann::json::object(), std::string_view c = {}) { emit(Level::Info, e, f, c); }
  void warn(std::string_view e, const nlohmann::json& f = nlohmann::json::object(), std::string_view c = {}) { emit(Level::Warn, e, f, c); }
  void error(std::string_view e, const nlohmann::json& f = nlohmann::json::object(), std::string_view c = {}) { emit(Level::Error, e, f, c); }

  void set_level(Level l) { min_ = l; }

 private:
  std::mutex mu_;
  std::ostream* out_;
  Level min_;
};

// Stable per-video id: "<video>#<8 hex digits>".
std::string correlation_id(std::string_view video);

// SOURCE_DATE_EPOCH when set and numeric, else the wall clock (seconds).
std::int64_t timestamp();

}  // namespace handvla::log
