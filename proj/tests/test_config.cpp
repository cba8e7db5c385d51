#include <string>

#include "doctest.h"
#include "msfa/config.hpp"
#include "msfa/errors.hpp"

using namespace msfa;

namespace {

std::string error_of(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_SUITE("config") {

TEST_CASE("empty object gives the defaults") {
  auto c = parse_config("{}");
  CHECK(to_json(c) == to_json(RunConfig{}));
  CHECK(config_hash(c) == config_hash(RunConfig{}));
  CHECK(config_hash(c).size() == 16);
}

TEST_CASE("canonical json round trips") {
  RunConfig c;
  c.seed = 42;
  c.train.epochs = 3;
  c.loss.topology = 0.25;
  c.biva.max_rounds = 2;
  c.phantom.n_cases = 7;
  auto back = parse_config(to_json(c));
  CHECK(to_json(back) == to_json(c));
  CHECK(config_hash(back) == config_hash(c));
  CHECK(back.seed == 42);
  CHECK(back.train.epochs == 3);
  CHECK(config_hash(c) != config_hash(RunConfig{}));
  // indentation does not change the hash
  CHECK(config_hash(parse_config(to_json(c, -1))) == config_hash(c));
}

TEST_CASE("unknown keys, bad types and invalid values name the field") {
  CHECK(error_of(R"({"bogus": 1})").find("bogus") != std::string::npos);
  CHECK(error_of(R"({"train": {"epoch": 3}})").find("epoch") != std::string::npos);
  CHECK(error_of(R"({"train": {"epochs": "three"}})").find("epochs") != std::string::npos);
  CHECK(error_of(R"({"seed": -1})").find("seed") != std::string::npos);
  CHECK(error_of(R"({"phantom": {"et_radius": [5.0, 6.0]}})").find("et_radius") != std::string::npos);
  CHECK(error_of(R"({"loss": {"hierarchy": -1}})").find("hierarchy") != std::string::npos);
  CHECK(error_of(R"({"biva": {"max_rounds": 0}})").find("max_rounds") != std::string::npos);
  CHECK_FALSE(error_of("[1, 2]").empty());
  CHECK_FALSE(error_of("{not json").empty());
}

TEST_CASE("missing config file is an I/O error") {
  CHECK_THROWS_AS(load_config("/nonexistent/config.json"), IoError);
}

}  // TEST_SUITE
