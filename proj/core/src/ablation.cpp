#include "msfa/ablation.hpp"

#include <algorithm>

#include "json.hpp"
#include "msfa/train.hpp"

namespace msfa::ablation {
using nlohmann::json;

std::vector<const phantom::PhantomCase*> held_out(const phantom::Dataset& data) {
  std::vector<std::size_t> idx = data.split.val;
  idx.insert(idx.end(), data.split.test.begin(), data.split.test.end());
  std::sort(idx.begin(), idx.end());
  return data.subset(idx);
}

std::vector<Row> run(const phantom::Dataset& data, const RunConfig& cfg, const Options& options) {
  cfg.validate();
  const auto vocab = train::build_vocab(data);
  const auto eval_cases = held_out(data);
  const std::string hash = config_hash(cfg);
  std::vector<Row> rows;
  for (auto variant : options.variants) {
    Row row;
    row.variant = variant;
    for (auto seed : options.seeds) {
      auto m = model::Model::create(options.model, variant, vocab, seed);
      train::TrainState state;
      train::TrainOptions to;
      to.seed = seed;
      to.config_hash = hash;
      train::train(m, state, data, cfg.train, cfg.loss, cfg.biva, to);
      auto rep = train::evaluate_cases(m, eval_cases, cfg.biva, cfg.train.graph_precision());
      if (options.on_run) options.on_run(variant, seed, rep);
      row.per_seed.push_back(rep);
    }
    row.mean = metrics::average(row.per_seed);
    rows.push_back(std::move(row));
  }
  return rows;
}

namespace {
json flat(const metrics::MetricsReport& m) {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  json j;
  const char* keys[3] = {"wt", "tc", "et"};
  for (int r = 0; r < 3; ++r) {
    j[std::string("dice_") + keys[r]] = m.regions[r].dice;
    j[std::string("hd95_") + keys[r]] = opt(m.regions[r].hd95);
  }
  j["dice_mean"] = m.mean_dice;
  j["hd95_mean"] = opt(m.mean_hd95);
  j["hierarchy_violation_rate"] = m.hierarchy_violation_rate;
  return j;
}
}  // namespace

std::string to_json(const std::vector<Row>& rows, const std::vector<std::uint64_t>& seeds,
                    const std::string& config_hash) {
  json out;
  out["config_hash"] = config_hash;
  out["seeds"] = seeds;
  out["rows"] = json::array();
  for (const auto& r : rows) {
    json row = flat(r.mean);
    row["variant"] = model::variant_name(r.variant);
    row["per_seed"] = json::array();
    for (const auto& s : r.per_seed) row["per_seed"].push_back(flat(s));
    out["rows"].push_back(row);
  }
  return out.dump(2);
}

}  // namespace msfa::ablation
