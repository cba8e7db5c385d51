#include "msfa/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "json_convert.hpp"
#include "msfa/errors.hpp"

namespace msfa {
using nlohmann::json;

void RunConfig::validate() const {
  phantom.validate();
  train.validate();
  loss.validate();
  biva.validate();
}

RunConfig parse_config(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  RunConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "phantom") {
      json_convert::merge(value, c.phantom);
    } else if (key == "train") {
      json_convert::merge(value, c.train);
    } else if (key == "loss") {
      json_convert::merge(value, c.loss);
    } else if (key == "biva") {
      json_convert::merge(value, c.biva);
    } else if (key == "seed") {
      if (!value.is_number_unsigned()) throw ConfigError("seed: expected a non-negative integer");
      c.seed = value.get<std::uint64_t>();
    } else {
      throw ConfigError(key + ": unknown key");
    }
  }
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string to_json(const RunConfig& c, int indent) {
  json j;
  j["phantom"] = json_convert::to_json(c.phantom);
  j["train"] = json_convert::to_json(c.train);
  j["loss"] = json_convert::to_json(c.loss);
  j["biva"] = json_convert::to_json(c.biva);
  j["seed"] = c.seed;
  return j.dump(indent);
}

std::string config_hash(const RunConfig& c) {
  const std::string s = to_json(c, -1);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace msfa
