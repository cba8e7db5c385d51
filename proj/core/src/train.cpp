#include "msfa/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "json.hpp"
#include "msfa/errors.hpp"
#include "msfa/volume_io.hpp"

namespace msfa::train {
namespace fs = std::filesystem;
using nlohmann::json;

void TrainConfig::validate() const {
  if (!(lr_min >= 0.0) || !std::isfinite(lr_min)) throw ConfigError("train.lr_min: must be >= 0");
  if (!(lr_max >= lr_min) || !std::isfinite(lr_max)) throw ConfigError("train.lr_max: must be >= train.lr_min");
  if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay: must be >= 0");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("train.dropout: must be in [0, 1)");
  if (epochs < 0) throw ConfigError("train.epochs: must be >= 0");
  if (batch_size < 1) throw ConfigError("train.batch_size: must be >= 1");
  if (!(warmup_fraction >= 0.0 && warmup_fraction <= 1.0)) {
    throw ConfigError("train.warmup_fraction: must be in [0, 1]");
  }
  graph_precision();
}

ad::Precision TrainConfig::graph_precision() const {
  if (precision == "f32") return ad::Precision::f32;
  if (precision == "f64") return ad::Precision::f64;
  throw ConfigError("train.precision: must be \"f32\" or \"f64\"");
}

double one_cycle_lr(std::uint64_t step, std::uint64_t total, double lr_min, double lr_max, double warmup) {
  if (total == 0) return lr_min;
  const double s = static_cast<double>(std::min(step, total - 1));
  const double n = static_cast<double>(total);
  const double w = std::floor(warmup * n);
  if (s < w) return lr_min + (lr_max - lr_min) * (s / w);
  const double rest = std::max(1.0, n - w - 1.0);
  const double t = std::min(1.0, (s - w) / rest);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * t));
}

void AdamW::init(const ad::ParameterSet& params) {
  m_ = params.zeros_like();
  v_ = params.zeros_like();
  t_ = 0;
}

void AdamW::update(ad::ParameterSet& params, const ad::Gradients& grads, double lr, double wd) {
  if (m_.size() != params.size()) init(params);
  if (grads.size() != params.size()) throw ShapeError("AdamW: gradient count != parameter count");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params.values()[k];
    const auto& g = grads[k];
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
      const double step = (m[i] / c1) / (std::sqrt(v[i] / c2) + eps) + wd * p[i];
      p[i] -= lr * step;
    }
  }
}

SegProbs targets(const phantom::PhantomCase& c) { return io::one_hot_nested(c.labels); }

phantom::PhantomCase flip_depth(const phantom::PhantomCase& c) {
  phantom::PhantomCase out = c;
  auto flip = [](const Tensor& src, Tensor& dst, std::size_t lead) {
    const auto& s = src.shape();
    const std::size_t d = s[s.size() - 3];
    const std::size_t plane = s[s.size() - 2] * s[s.size() - 1];
    for (std::size_t l = 0; l < lead; ++l)
      for (std::size_t z = 0; z < d; ++z)
        std::copy_n(src.data().begin() + static_cast<std::ptrdiff_t>((l * d + z) * plane), plane,
                    dst.data().begin() + static_cast<std::ptrdiff_t>((l * d + (d - 1 - z)) * plane));
  };
  flip(c.volume, out.volume, c.volume.dim(0));
  flip(c.labels, out.labels, 1);
  return out;
}

semantic::Vocab build_vocab(const phantom::Dataset& data) {
  std::vector<std::string> corpus;
  for (auto i : data.split.train) corpus.push_back(data.cases.at(i).text);
  if (corpus.empty()) {
    for (const auto& c : data.cases) corpus.push_back(c.text);
  }
  return semantic::Vocab::build(corpus);
}

metrics::MetricsReport evaluate_cases(const model::Model& m, const std::vector<const phantom::PhantomCase*>& cases,
                                      const biva::BivaParams& biva_params, ad::Precision precision) {
  std::vector<metrics::MetricsReport> reports;
  reports.reserve(cases.size());
  for (const auto* c : cases) {
    const auto pred = model::predict(m, c->volume, c->text, biva_params, precision);
    reports.push_back(metrics::evaluate(pred, targets(*c)));
  }
  return metrics::average(reports);
}

namespace {

struct LossSums {
  double total = 0, bce = 0, dice = 0, hierarchy = 0, continuity = 0, topology = 0;
  std::size_t n = 0;

  void add(const loss::LossTerms& t) {
    auto v = [](const ad::Var& x) { return x.valid() ? x.value().item() : 0.0; };
    total += v(t.total);
    bce += v(t.bce);
    dice += v(t.dice);
    hierarchy += v(t.hierarchy);
    continuity += v(t.continuity);
    topology += v(t.topology);
    ++n;
  }
  json to_json() const {
    const double d = n ? static_cast<double>(n) : 1.0;
    return {{"total", total / d},       {"bce", bce / d},           {"dice", dice / d},
            {"hierarchy", hierarchy / d}, {"continuity", continuity / d}, {"topology", topology / d}};
  }
};

}  // namespace

TrainResult train(model::Model& m, TrainState& state, const phantom::Dataset& data, const TrainConfig& cfg,
                  const loss::LossWeights& weights_in, const biva::BivaParams& biva_params,
                  const TrainOptions& options) {
  cfg.validate();
  weights_in.validate();
  biva_params.validate();
  if (data.split.train.empty()) throw ValueError("train: empty train split");

  loss::LossWeights weights = weights_in;
  if (!m.uses_spatial()) weights.hierarchy = weights.continuity = weights.topology = 0.0;

  const auto precision = cfg.graph_precision();
  const std::size_t n_train = data.split.train.size();
  const std::uint64_t steps_per_epoch = (n_train + cfg.batch_size - 1) / cfg.batch_size;
  const std::uint64_t total_steps = steps_per_epoch * static_cast<std::uint64_t>(cfg.epochs);
  if (state.optimizer.first_moment().size() != m.params.size()) state.optimizer.init(m.params);

  const auto val_cases = data.subset(data.split.val);
  TrainResult result;
  const int last = options.stop_after > 0 ? std::min(cfg.epochs, state.epochs_done + options.stop_after) : cfg.epochs;
  for (int epoch = state.epochs_done; epoch < last; ++epoch) {
    Rng rng(derive_seed(options.seed, 0x45504f43ULL + static_cast<std::uint64_t>(epoch)));
    std::vector<std::size_t> order = data.split.train;
    std::shuffle(order.begin(), order.end(), rng);

    LossSums train_sums;
    double lr = 0.0;
    for (std::size_t b = 0; b < n_train; b += cfg.batch_size) {
      const std::size_t end = std::min(n_train, b + cfg.batch_size);
      ad::Gradients grads = m.params.zeros_like();
      for (std::size_t k = b; k < end; ++k) {
        const auto& base = data.cases.at(order[k]);
        const bool flip = cfg.flip_augment && std::bernoulli_distribution(0.5)(rng);
        const phantom::PhantomCase c = flip ? flip_depth(base) : base;
        ad::Graph g(&m.params, precision);
        model::ForwardOptions fo;
        fo.dropout = cfg.dropout;
        fo.dropout_rng = &rng;
        auto fwd = model::forward(g, m, c.volume, c.text, biva_params, fo);
        auto terms = loss::total_loss(fwd.regions, targets(c), fwd.f_spatial, weights);
        const double lv = terms.total.value().item();
        if (!std::isfinite(lv)) {
          throw AnomalyError("train", -1,
                             "non-finite loss at epoch " + std::to_string(epoch) + " step " +
                                 std::to_string(state.step) + " (case " + std::to_string(c.index) + ")");
        }
        train_sums.add(terms);
        ad::accumulate(grads, g.backward(terms.total));
      }
      const double inv = 1.0 / static_cast<double>(end - b);
      for (auto& t : grads)
        for (auto& v : t.data()) v *= inv;
      lr = one_cycle_lr(state.step, total_steps, cfg.lr_min, cfg.lr_max, cfg.warmup_fraction);
      state.optimizer.update(m.params, grads, lr, cfg.weight_decay);
      ++state.step;
    }

    LossSums val_sums;
    std::vector<metrics::MetricsReport> reports;
    for (const auto* c : val_cases) {
      ad::Graph g(&m.params, precision);
      auto fwd = model::forward(g, m, c->volume, c->text, biva_params);
      const auto gt = targets(*c);
      val_sums.add(loss::total_loss(fwd.regions, gt, fwd.f_spatial, weights));
      reports.push_back(metrics::evaluate(SegProbs::from_stacked(fwd.probs.value()), gt));
    }
    const auto val = metrics::average(reports);
    result.val_metrics = val;

    json rec;
    rec["epoch"] = epoch;
    rec["step"] = state.step;
    rec["lr"] = lr;
    rec["variant"] = model::variant_name(m.variant);
    rec["train_loss"] = train_sums.to_json();
    rec["val_loss"] = val_sums.to_json();
    rec["val_metrics"] = json::parse(val.to_json());
    rec["config_hash"] = options.config_hash;
    result.log.push_back(rec.dump());
    if (options.on_epoch) options.on_epoch(result.log.back());
    state.epochs_done = epoch + 1;
  }
  if (result.log.empty()) result.val_metrics = evaluate_cases(m, val_cases, biva_params, precision);
  return result;
}

namespace {

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw IoError("cannot write '" + p.string() + "'");
  out << s;
  if (!out) throw IoError("write failed for '" + p.string() + "'");
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read '" + p.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json model_config_json(const model::ModelConfig& c) {
  return {{"in_channels", c.in_channels}, {"d_s", c.d_s},
          {"d_v", c.d_v},                 {"d_a", c.d_a},
          {"d_f", c.d_f},                 {"d_h", c.d_h},
          {"c_s", c.c_s},                 {"plane_hidden", c.plane_hidden},
          {"plane_pool", c.plane_pool},   {"biva_channels", c.biva_channels},
          {"biva_hidden", c.biva_hidden}, {"cond_channels", c.cond_channels},
          {"decoder_hidden", c.decoder_hidden}};
}

model::ModelConfig model_config_from(const json& j) {
  model::ModelConfig c;
  c.in_channels = j.at("in_channels");
  c.d_s = j.at("d_s");
  c.d_v = j.at("d_v");
  c.d_a = j.at("d_a");
  c.d_f = j.at("d_f");
  c.d_h = j.at("d_h");
  c.c_s = j.at("c_s");
  c.plane_hidden = j.at("plane_hidden");
  c.plane_pool = j.at("plane_pool");
  c.biva_channels = j.at("biva_channels");
  c.biva_hidden = j.at("biva_hidden");
  c.cond_channels = j.at("cond_channels");
  c.decoder_hidden = j.at("decoder_hidden");
  return c;
}

}  // namespace

void save_checkpoint(const fs::path& dir, const model::Model& m, const TrainState& state,
                     const std::string& config_hash) {
  std::error_code ec;
  for (const char* sub : {"params", "adam/m", "adam/v"}) {
    fs::create_directories(dir / sub, ec);
    if (ec) throw IoError("cannot create '" + (dir / sub).string() + "': " + ec.message());
  }
  const AdamW& opt = state.optimizer;
  const bool has_moments = opt.first_moment().size() == m.params.size();
  json names = json::array(), shapes = json::array();
  for (std::size_t k = 0; k < m.params.size(); ++k) {
    const auto& name = m.params.names()[k];
    const auto& value = m.params.values()[k];
    names.push_back(name);
    shapes.push_back(value.shape());
    io::write_tensor(value, dir / "params" / (name + ".mvtf"));
    io::write_tensor(has_moments ? opt.first_moment()[k] : Tensor::like(value), dir / "adam/m" / (name + ".mvtf"));
    io::write_tensor(has_moments ? opt.second_moment()[k] : Tensor::like(value), dir / "adam/v" / (name + ".mvtf"));
  }
  write_text(dir / "vocab.txt", m.vocab.serialize());
  json man;
  man["format"] = "msfa-checkpoint";
  man["version"] = 1;
  man["variant"] = model::variant_name(m.variant);
  man["model"] = model_config_json(m.config);
  man["names"] = names;
  man["shapes"] = shapes;
  man["step"] = state.step;
  man["epochs_done"] = state.epochs_done;
  man["optimizer_steps"] = state.optimizer.steps();
  man["config_hash"] = config_hash;
  write_text(dir / "manifest.json", man.dump(2) + "\n");
}

Checkpoint load_checkpoint(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.json")) throw IoError("no checkpoint at '" + dir.string() + "'");
  json man;
  try {
    man = json::parse(read_text(dir / "manifest.json"));
  } catch (const json::exception& e) {
    throw FormatError("checkpoint manifest: " + std::string(e.what()));
  }
  try {
    const auto variant = model::parse_variant(man.at("variant").get<std::string>());
    if (!variant) throw FormatError("checkpoint manifest: unknown variant");
    auto vocab = semantic::Vocab::deserialize(read_text(dir / "vocab.txt"));
    Checkpoint ck{model::Model::create(model_config_from(man.at("model")), *variant, std::move(vocab), 0), {}, {}};
    auto& params = ck.model.params;
    const auto names = man.at("names").get<std::vector<std::string>>();
    if (names != params.names()) throw FormatError("checkpoint parameter list does not match the model");
    ck.state.optimizer.init(params);
    for (std::size_t k = 0; k < names.size(); ++k) {
      auto load = [&](const fs::path& p, Tensor& into) {
        Tensor t = io::read_tensor(p);
        if (t.shape() != into.shape()) {
          throw FormatError("checkpoint tensor '" + names[k] + "' has shape " + shape_str(t.shape()));
        }
        into = std::move(t);
      };
      load(dir / "params" / (names[k] + ".mvtf"), params.values()[k]);
      load(dir / "adam/m" / (names[k] + ".mvtf"), ck.state.optimizer.first_moment()[k]);
      load(dir / "adam/v" / (names[k] + ".mvtf"), ck.state.optimizer.second_moment()[k]);
    }
    ck.state.step = man.at("step").get<std::uint64_t>();
    ck.state.epochs_done = man.at("epochs_done").get<int>();
    ck.state.optimizer.set_steps(man.at("optimizer_steps").get<std::uint64_t>());
    ck.config_hash = man.at("config_hash").get<std::string>();
    return ck;
  } catch (const json::exception& e) {
    throw FormatError("checkpoint manifest: " + std::string(e.what()));
  }
}

}  // namespace msfa::train
