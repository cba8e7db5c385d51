#pragma once

#include <string>

#include "json.hpp"
#include "msfa/biva.hpp"
#include "msfa/loss.hpp"
#include "msfa/phantom.hpp"
#include "msfa/train.hpp"

namespace msfa::json_convert {

using nlohmann::json;

json to_json(const phantom::PhantomConfig& c);
json to_json(const phantom::Geometry& g);
json to_json(const train::TrainConfig& c);
json to_json(const loss::LossWeights& w);
json to_json(const biva::BivaParams& p);

// Start from `into` and override the keys present in `j`. Unknown keys and type mismatches throw
// ConfigError naming "<section>.<key>".
void merge(const json& j, phantom::PhantomConfig& into);
void merge(const json& j, train::TrainConfig& into);
void merge(const json& j, loss::LossWeights& into);
void merge(const json& j, biva::BivaParams& into);

phantom::Geometry geometry_from_json(const json& j);

}  // namespace msfa::json_convert
