#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "msfa/biva.hpp"
#include "msfa/loss.hpp"
#include "msfa/phantom.hpp"
#include "msfa/train.hpp"

namespace msfa {

// Everything a command needs; sections phantom / train / loss / biva plus the top-level seed.
struct RunConfig {
  phantom::PhantomConfig phantom;
  train::TrainConfig train;
  loss::LossWeights loss;
  biva::BivaParams biva;
  std::uint64_t seed = 0;

  void validate() const;
};

// Missing keys keep their defaults; unknown keys and bad types throw ConfigError.
RunConfig parse_config(std::string_view json_text);
RunConfig load_config(const std::filesystem::path& path);

// Canonical JSON (sorted keys, every field present).
std::string to_json(const RunConfig& c, int indent = 2);

// FNV-1a 64 of the compact canonical JSON, as 16 hex digits.
std::string config_hash(const RunConfig& c);

}  // namespace msfa
