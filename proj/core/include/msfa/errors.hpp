#pragma once

#include <stdexcept>
#include <string>

namespace msfa {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ValueError : public Error {
 public:
  using Error::Error;
};

// Malformed file header (magic, version, dtype).
class FormatError : public Error {
 public:
  using Error::Error;
};

// File header is valid but the payload does not match it.
class CorruptionError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// A non-finite value showed up where finite values are required.
class AnomalyError : public Error {
 public:
  AnomalyError(std::string stage, int round, const std::string& detail)
      : Error(format(stage, round, detail)), stage_(std::move(stage)), round_(round) {}

  const std::string& stage() const noexcept { return stage_; }
  // -1 when the anomaly is not tied to an interaction round.
  int round() const noexcept { return round_; }

 private:
  static std::string format(const std::string& stage, int round, const std::string& detail) {
    std::string msg = "numeric anomaly in stage '" + stage + "'";
    if (round >= 0) msg += " at round " + std::to_string(round);
    if (!detail.empty()) msg += ": " + detail;
    return msg;
  }

  std::string stage_;
  int round_;
};

}  // namespace msfa
