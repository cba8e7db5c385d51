#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "msfa/autodiff.hpp"
#include "msfa/biva.hpp"
#include "msfa/loss.hpp"
#include "msfa/metrics.hpp"
#include "msfa/model.hpp"
#include "msfa/phantom.hpp"

namespace msfa::train {

struct TrainConfig {
  double lr_min = 5e-4;
  double lr_max = 2e-3;
  double weight_decay = 1e-4;
  double dropout = 0.1;
  int epochs = 12;
  std::size_t batch_size = 2;
  double warmup_fraction = 0.3;
  bool flip_augment = true;
  // "f32" runs conv kernels in float; "f64" everywhere in double.
  std::string precision = "f32";

  void validate() const;
  ad::Precision graph_precision() const;
};

// Linear warmup from lr_min to lr_max over warmup_fraction of the steps, cosine decay back to lr_min.
double one_cycle_lr(std::uint64_t step, std::uint64_t total_steps, double lr_min, double lr_max,
                    double warmup_fraction);

// Adam with decoupled weight decay.
class AdamW {
 public:
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void init(const ad::ParameterSet& params);
  void update(ad::ParameterSet& params, const ad::Gradients& grads, double lr, double weight_decay);

  std::uint64_t steps() const noexcept { return t_; }
  std::vector<Tensor>& first_moment() noexcept { return m_; }
  std::vector<Tensor>& second_moment() noexcept { return v_; }
  const std::vector<Tensor>& first_moment() const noexcept { return m_; }
  const std::vector<Tensor>& second_moment() const noexcept { return v_; }
  void set_steps(std::uint64_t t) noexcept { t_ = t; }

 private:
  std::vector<Tensor> m_, v_;
  std::uint64_t t_ = 0;
};

struct TrainState {
  AdamW optimizer;
  int epochs_done = 0;
  std::uint64_t step = 0;
};

struct TrainOptions {
  std::uint64_t seed = 0;
  std::string config_hash;
  // Return after this many epochs of this call, leaving the schedule of cfg.epochs intact; 0: no limit.
  int stop_after = 0;
  // Receives each JSON log line as it is produced.
  std::function<void(const std::string&)> on_epoch;
};

struct TrainResult {
  std::vector<std::string> log;  // one JSON object per epoch
  metrics::MetricsReport val_metrics;
};

SegProbs targets(const phantom::PhantomCase& c);

// Flip along the depth axis; text slots do not describe depth, so captions stay valid.
phantom::PhantomCase flip_depth(const phantom::PhantomCase& c);

// Runs epochs [state.epochs_done, cfg.epochs). Epoch randomness derives from (seed, epoch), so a
// resumed run reproduces the uninterrupted one. Throws AnomalyError on a non-finite loss.
TrainResult train(model::Model& m, TrainState& state, const phantom::Dataset& data, const TrainConfig& cfg,
                  const loss::LossWeights& weights, const biva::BivaParams& biva_params, const TrainOptions& options);

metrics::MetricsReport evaluate_cases(const model::Model& m, const std::vector<const phantom::PhantomCase*>& cases,
                                      const biva::BivaParams& biva_params, ad::Precision precision);

// Directory with params/<name>.mvtf (f64), adam/{m,v}/<name>.mvtf, vocab.txt and manifest.json.
void save_checkpoint(const std::filesystem::path& dir, const model::Model& m, const TrainState& state,
                     const std::string& config_hash);

struct Checkpoint {
  model::Model model;
  TrainState state;
  std::string config_hash;
};

Checkpoint load_checkpoint(const std::filesystem::path& dir);

// Vocabulary over the training split captions.
semantic::Vocab build_vocab(const phantom::Dataset& data);

}  // namespace msfa::train
