#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace handvla {

// Malformed structured-text input. line is 1-based; 0 when not line-oriented.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DuplicateRecordError : public ParseError {
 public:
  using ParseError::ParseError;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class BehindCameraError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class DegenerateKeypointError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Hand frames without a camera frame at the same index.
class AlignmentError : public std::runtime_error {
 public:
  explicit AlignmentError(std::vector<int> missing);
  const std::vector<int>& missing_frames() const noexcept { return missing_; }

 private:
  std::vector<int> missing_;
};

// Episode container load failures.
class EpisodeFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class VersionMismatchError : public EpisodeFormatError {
 public:
  using EpisodeFormatError::EpisodeFormatError;
};
class ChecksumError : public EpisodeFormatError {
 public:
  using EpisodeFormatError::EpisodeFormatError;
};
class TruncatedError : public EpisodeFormatError {
 public:
  using EpisodeFormatError::EpisodeFormatError;
};

// Transport-level captioner failure; the retry loop treats it as transient.
class TransientError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Stage requested before its prerequisites completed.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline AlignmentError::AlignmentError(std::vector<int> missing)
    : std::runtime_error([&] {
        std::string s = "no camera frame for hand frame(s):";
        for (int f : missing) s += " " + std::to_string(f);
        return s;
      }()),
      missing_(std::move(missing)) {}

}  // namespace handvla
