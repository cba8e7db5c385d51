#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "msfa/ablation.hpp"
#include "msfa/config.hpp"
#include "msfa/errors.hpp"
#include "msfa/grad_suite.hpp"
#include "msfa/model.hpp"
#include "msfa/phantom.hpp"
#include "msfa/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kFail = 1, kConfig = 2, kIo = 3, kAnomaly = 4 };

msfa::RunConfig read_config(const std::string& path) {
  if (path.empty()) return msfa::RunConfig{};
  return msfa::load_config(path);
}

void write_file(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw msfa::IoError("cannot write '" + p.string() + "'");
  out << s;
}

msfa::phantom::Dataset read_dataset(const std::string& dir) {
  if (!fs::exists(fs::path(dir) / "manifest.json")) throw msfa::IoError("no dataset at '" + dir + "'");
  return msfa::phantom::load_dataset(dir);
}

std::vector<std::size_t> split_indices(const msfa::phantom::Dataset& ds, const std::string& name) {
  if (name == "train") return ds.split.train;
  if (name == "val") return ds.split.val;
  if (name == "test") return ds.split.test;
  throw msfa::ConfigError("--split: must be train, val or test");
}

int cmd_phantom_gen(const std::string& config, const std::string& out) {
  const auto cfg = read_config(config);
  const auto hash = msfa::config_hash(cfg);
  const auto ds = msfa::phantom::make_dataset(cfg.phantom, cfg.seed, hash);
  msfa::phantom::write_dataset(out, ds, cfg.phantom, cfg.seed);
  std::cout << json{{"cases", ds.cases.size()}, {"out", out}, {"config_hash", hash}}.dump() << "\n";
  return kOk;
}

int cmd_train(const std::string& config, const std::string& data, const std::string& out, const std::string& resume,
              const std::string& variant_name, int stop_after) {
  const auto cfg = read_config(config);
  const auto hash = msfa::config_hash(cfg);
  const auto ds = read_dataset(data);
  const auto variant = msfa::model::parse_variant(variant_name);
  if (!variant) throw msfa::ConfigError("--variant: unknown variant '" + variant_name + "'");

  msfa::model::Model model;
  msfa::train::TrainState state;
  if (!resume.empty()) {
    auto ck = msfa::train::load_checkpoint(resume);
    model = std::move(ck.model);
    state = std::move(ck.state);
  } else {
    model = msfa::model::Model::create({}, *variant, msfa::train::build_vocab(ds), cfg.seed);
  }

  fs::create_directories(out);
  std::ofstream log(fs::path(out) / "train_log.jsonl", resume.empty() ? std::ios::trunc : std::ios::app);
  if (!log) throw msfa::IoError("cannot write training log in '" + out + "'");
  msfa::train::TrainOptions opts;
  opts.seed = cfg.seed;
  opts.config_hash = hash;
  opts.stop_after = stop_after;
  opts.on_epoch = [&](const std::string& line) {
    log << line << "\n";
    log.flush();
    std::cerr << line << "\n";
  };
  const auto result = msfa::train::train(model, state, ds, cfg.train, cfg.loss, cfg.biva, opts);
  msfa::train::save_checkpoint(fs::path(out) / "checkpoint", model, state, hash);

  json report = json::parse(result.val_metrics.to_json());
  report["split"] = "val";
  report["config_hash"] = hash;
  write_file(fs::path(out) / "metrics.json", report.dump(2) + "\n");
  std::cout << report.dump(2) << "\n";
  return kOk;
}

int cmd_eval(const std::string& checkpoint, const std::string& data, const std::string& split,
             const std::string& config) {
  const auto cfg = read_config(config);
  const auto ck = msfa::train::load_checkpoint(checkpoint);
  const auto ds = read_dataset(data);
  const auto cases = ds.subset(split_indices(ds, split));
  const auto rep = msfa::train::evaluate_cases(ck.model, cases, cfg.biva, cfg.train.graph_precision());
  json j = json::parse(rep.to_json());
  j["split"] = split;
  j["config_hash"] = ck.config_hash;
  std::cout << j.dump(2) << "\n";
  return kOk;
}

int cmd_gradcheck(std::uint64_t seed, std::size_t fixtures, double step, const std::string& filter) {
  msfa::grad_suite::Options o;
  o.step = step;
  o.seed = seed;
  o.fixtures = fixtures;
  o.filter = filter;
  bool ok = true;
  std::cout << "operation                 fixtures  coords skipped  max_rel_err  result\n";
  for (const auto& e : msfa::grad_suite::run(o)) {
    std::cout << std::left << std::setw(26) << e.name << std::right << std::setw(8) << e.fixtures << std::setw(8)
              << e.coords << std::setw(8) << e.skipped << std::setw(13) << std::scientific << std::setprecision(2) << e.max_rel_err
              << std::defaultfloat << "  " << (e.pass ? "PASS" : "FAIL  worst " + e.worst) << "\n";
    ok = ok && e.pass;
    std::cout.flush();
  }
  return ok ? kOk : kFail;
}

int cmd_ablate(const std::string& config, const std::string& data, std::size_t n_seeds, const std::string& out) {
  const auto cfg = read_config(config);
  const auto ds = read_dataset(data);
  msfa::ablation::Options o;
  o.seeds.clear();
  for (std::size_t k = 0; k < n_seeds; ++k) o.seeds.push_back(cfg.seed + k);
  o.on_run = [](msfa::model::Variant v, std::uint64_t seed, const msfa::metrics::MetricsReport& r) {
    std::cerr << msfa::model::variant_name(v) << " seed " << seed << ": " << r.to_json() << "\n";
  };
  const auto rows = msfa::ablation::run(ds, cfg, o);
  const auto text = msfa::ablation::to_json(rows, o.seeds, msfa::config_hash(cfg));
  if (!out.empty()) write_file(out, text + "\n");
  std::cout << text << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-modal semantic fusion segmentation on synthetic phantoms"};
  app.require_subcommand(0, 1);
  bool print_default = false;
  app.add_flag("--print-default-config", print_default, "Print the default run configuration and exit");

  std::string config, out, data, resume, checkpoint, split = "test", variant = "full", filter;
  std::uint64_t seed = 0;
  std::size_t seeds = 3, fixtures = 20;
  int stop_after = 0;
  double step = msfa::grad_suite::Options{}.step;

  auto* gen = app.add_subcommand("phantom-gen", "Generate a phantom dataset");
  gen->add_option("--config", config, "Run configuration JSON");
  gen->add_option("--out", out, "Output dataset directory")->required();

  auto* tr = app.add_subcommand("train", "Train a model");
  tr->add_option("--config", config, "Run configuration JSON");
  tr->add_option("--data", data, "Dataset directory")->required();
  tr->add_option("--out", out, "Output directory (checkpoint, log, metrics)")->required();
  tr->add_option("--resume", resume, "Checkpoint directory to continue from");
  tr->add_option("--stop-after", stop_after, "Stop after this many epochs; resume later with --resume");
  tr->add_option("--variant", variant, "full | no_semantic | no_spatial | uni_s2v | uni_v2s");

  auto* ev = app.add_subcommand("eval", "Score a checkpoint on a dataset split");
  ev->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
  ev->add_option("--data", data, "Dataset directory")->required();
  ev->add_option("--split", split, "train | val | test");
  ev->add_option("--config", config, "Run configuration JSON (interaction settings)");

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable operation");
  gc->add_option("--seed", seed, "Fixture seed");
  gc->add_option("--fixtures", fixtures, "Random fixtures per operation");
  gc->add_option("--step", step, "Initial finite-difference step");
  gc->add_option("--filter", filter, "Only operations whose name contains this text");

  auto* ab = app.add_subcommand("ablate", "Train and score every model variant");
  ab->add_option("--config", config, "Run configuration JSON");
  ab->add_option("--data", data, "Dataset directory")->required();
  ab->add_option("--seeds", seeds, "Number of seeds (config seed, +1, ...)");
  ab->add_option("--out", out, "Also write the table to this file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (print_default) {
      std::cout << msfa::to_json(msfa::RunConfig{}) << "\n";
      return kOk;
    }
    if (*gen) return cmd_phantom_gen(config, out);
    if (*tr) return cmd_train(config, data, out, resume, variant, stop_after);
    if (*ev) return cmd_eval(checkpoint, data, split, config);
    if (*gc) return cmd_gradcheck(seed, fixtures, step, filter);
    if (*ab) return cmd_ablate(config, data, seeds, out);
    std::cout << app.help();
    return kConfig;
  } catch (const msfa::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const msfa::AnomalyError& e) {
    std::cerr << "numeric anomaly: " << e.what() << "\n";
    return kAnomaly;
  } catch (const msfa::IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kIo;
  } catch (const msfa::FormatError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kIo;
  } catch (const msfa::CorruptionError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFail;
  }
}
