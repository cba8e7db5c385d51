#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "msfa/config.hpp"
#include "msfa/metrics.hpp"
#include "msfa/model.hpp"
#include "msfa/phantom.hpp"

namespace msfa::ablation {

struct Row {
  model::Variant variant = model::Variant::full;
  metrics::MetricsReport mean;                 // averaged over seeds
  std::vector<metrics::MetricsReport> per_seed;  // held-out metrics of each seed
};

struct Options {
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::vector<model::Variant> variants{std::begin(model::kVariants), std::end(model::kVariants)};
  model::ModelConfig model;
  // Called after each (variant, seed) run.
  std::function<void(model::Variant, std::uint64_t, const metrics::MetricsReport&)> on_run;
};

// Cases scored after training: test split, plus val when it exists.
std::vector<const phantom::PhantomCase*> held_out(const phantom::Dataset& data);

// Trains every variant from scratch with each seed and scores it on the held-out cases.
std::vector<Row> run(const phantom::Dataset& data, const RunConfig& cfg, const Options& options);

// {"config_hash", "seeds", "rows":[{variant, dice_wt.., hd95_wt.., hierarchy_violation_rate, per_seed}]}
std::string to_json(const std::vector<Row>& rows, const std::vector<std::uint64_t>& seeds,
                    const std::string& config_hash);

}  // namespace msfa::ablation
