// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any criterion fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "msfa/ablation.hpp"
#include "msfa/biva.hpp"
#include "msfa/config.hpp"
#include "msfa/constraints.hpp"
#include "msfa/errors.hpp"
#include "msfa/grad_suite.hpp"
#include "msfa/metrics.hpp"
#include "msfa/model.hpp"
#include "msfa/phantom.hpp"
#include "msfa/train.hpp"
#include "msfa/volume_io.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace msfa;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

double uniform(Rng& rng, double lo = 0.0, double hi = 1.0) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

struct Verdict {
  bool pass = false;
  std::string detail;
};

// ---------------------------------------------------------------- AC-1
Verdict ac1() {
  const auto t0 = Clock::now();
  grad_suite::Options o;  // 20 fixtures per operation, tolerance 1e-4
  const auto entries = grad_suite::run(o);
  const double secs = seconds_since(t0);
  bool ok = !entries.empty();
  double worst = 0.0;
  std::size_t min_fixtures = SIZE_MAX;
  std::string failed;
  for (const auto& e : entries) {
    ok = ok && e.pass && e.fixtures >= 20;
    worst = std::max(worst, e.max_rel_err);
    min_fixtures = std::min(min_fixtures, e.fixtures);
    if (!e.pass) failed += " " + e.name;
  }
  ok = ok && secs < 120.0;
  return {ok, fmt("%zu operations, >=%zu fixtures each, max rel err %.2e (tol 1e-4), %.1fs (limit 120s)%s",
                  entries.size(), min_fixtures, worst, secs, failed.empty() ? "" : (" failed:" + failed).c_str())};
}

// ---------------------------------------------------------------- AC-2
Verdict ac2() {
  const auto t0 = Clock::now();
  Rng rng(2024);
  auto grid = [&](std::size_t edge) { return Shape{1 + rng() % edge, 1 + rng() % edge, 1 + rng() % edge}; };
  auto mask = [&](const Shape& s, double density) {
    Tensor t(s);
    for (auto& v : t.data()) v = uniform(rng) < density ? 1.0 : 0.0;
    return t;
  };
  double err_h = 0, err_c = 0, err_t = 0, err_d = 0, err_hd = 0;
  bool ok = true;
  const constraints::TopologyParams tp{1.0, 0.1};
  for (int i = 0; i < 200; ++i) {
    const Shape s = grid(4);
    SegProbs p{uniform_tensor(s, 0, 1, rng), uniform_tensor(s, 0, 1, rng), uniform_tensor(s, 0, 1, rng)};
    err_h = std::max(err_h, std::abs(constraints::hierarchy_loss(p) - oracle::hierarchy(p)));

    Shape fs{1 + rng() % 3};
    fs.insert(fs.end(), s.begin(), s.end());
    const Tensor f = uniform_tensor(fs, -2, 2, rng);
    err_c = std::max(err_c, std::abs(constraints::continuity_loss(f) - oracle::continuity(f)));

    const Tensor m = uniform_tensor(s, 0, 1, rng);
    const auto o = oracle::topology(m);
    err_t = std::max(err_t, std::abs(constraints::topology_loss(m, tp) - (tp.shape * o.shape + tp.boundary * o.boundary)));
    ok = ok && constraints::topology_reference(m) == oracle::topology_reference(m);

    const double density = uniform(rng, 0.05, 0.7);
    const Tensor a = mask(s, density), b = mask(s, density);
    err_d = std::max(err_d, std::abs(metrics::dice(a, b) - oracle::dice(a, b)));

    const Shape s8 = grid(8);
    const Tensor pa = mask(s8, density), pb = mask(s8, density);
    const auto h = metrics::hd95(pa, pb);
    const double oh = oracle::hd95(pa, pb);
    if (h.has_value() != (oh >= 0.0)) ok = false;
    else if (h) err_hd = std::max(err_hd, std::abs(*h - oh));
  }
  const double secs = seconds_since(t0);
  const double worst = std::max({err_h, err_c, err_t, err_d, err_hd});
  ok = ok && worst <= 1e-10 && secs < 60.0;
  return {ok, fmt("200 instances; max |diff| hierarchy %.1e continuity %.1e topology %.1e dice %.1e hd95 %.1e "
                  "(tol 1e-10), %.1fs (limit 60s)",
                  err_h, err_c, err_t, err_d, err_hd, secs)};
}

// ---------------------------------------------------------------- AC-3
model::ModelConfig small_model() {
  model::ModelConfig m;
  m.d_s = 16;
  m.d_v = 16;
  m.d_a = 8;
  m.d_f = 16;
  m.d_h = 8;
  m.c_s = 4;
  m.biva_hidden = 16;
  return m;
}

Verdict ac3() {
  phantom::PhantomConfig pc;
  pc.depth = pc.height = pc.width = 8;
  pc.wt_radius = {2.0, 3.0};
  pc.tc_radius = {1.5, 2.0};
  pc.et_radius = {0.5, 1.0};
  pc.center_jitter = 0.5;
  pc.n_cases = 20;
  const auto cases = phantom::generate(pc, 3);
  std::vector<std::string> corpus;
  for (const auto& c : cases) corpus.push_back(c.text);
  const auto vocab = semantic::Vocab::build(corpus);

  Rng rng(33);
  double worst_alpha = 0, worst_w = 0;
  double a_lo = 1, a_hi = 0, g_lo = 1, g_hi = 0;
  bool in_open = true;
  auto track = [&](const Tensor& t, double& lo, double& hi) {
    for (double v : t.data()) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
      in_open = in_open && v > 0.0 && v < 1.0;
    }
  };
  for (int k = 0; k < 1000; ++k) {
    auto m = model::Model::create(small_model(), model::Variant::full, vocab, 10'000 + k);
    const double scale = uniform(rng, 0.25, 2.0);
    for (auto& t : m.params.values())
      for (auto& v : t.data()) v *= scale;
    for (const char* name : {"biva.gate.b", "biva.attention.wt.conv.b"})
      if (auto id = m.params.find(name)) m.params.value(*id) = uniform_tensor(m.params.value(*id).shape(), -3, 3, rng);
    const auto& c = cases[k % cases.size()];
    const Tensor vol = uniform_tensor(c.volume.shape(), 0, 1, rng);
    biva::BivaParams bp;
    bp.max_rounds = 1 + static_cast<int>(rng() % 4);
    ad::Graph g(&m.params);
    auto fr = model::forward(g, m, vol, c.text, bp);
    double sa = 0, sw = 0;
    for (double v : fr.view.alpha.value().data()) sa += v;
    for (double v : fr.fusion_weights.value().data()) sw += v;
    worst_alpha = std::max(worst_alpha, std::abs(sa - 1.0));
    worst_w = std::max(worst_w, std::abs(sw - 1.0));
    track(fr.view.alpha.value(), a_lo, a_hi);
    track(fr.fusion_weights.value(), a_lo, a_hi);
    for (const auto& a : fr.interaction.last_attention) track(a.value(), a_lo, a_hi);
    track(fr.interaction.last_gate.value(), g_lo, g_hi);
  }
  const bool ok = worst_alpha <= 1e-9 && worst_w <= 1e-9 && in_open;
  return {ok, fmt("1000 parameterizations; max |sum alpha - 1| %.1e, max |sum w - 1| %.1e (tol 1e-9); "
                  "attention/weights in [%.3g, %.3g], gate in [%.3g, %.3g], all strictly inside (0,1): %s",
                  worst_alpha, worst_w, a_lo, a_hi, g_lo, g_hi, in_open ? "yes" : "no")};
}

// ---------------------------------------------------------------- AC-4
Verdict ac4() {
  constexpr std::size_t kC = 4, kDs = 16, kHidden = 16;
  Rng rng(44);
  bool terminate_ok = true;
  int converged = 0;
  for (int k = 0; k < 1000; ++k) {
    ad::ParameterSet p;
    Rng wr(5000 + k);
    auto w = biva::BivaWeights::create(p, "biva", kC, kDs, kHidden, wr);
    biva::BivaParams bp;
    bp.max_rounds = 1 + static_cast<int>(rng() % 8);
    bp.eps_delta = std::pow(10.0, uniform(rng, -6, -1));
    bp.eps_quality = std::pow(10.0, uniform(rng, -6, -1));
    ad::Graph g(&p);
    auto f0 = g.constant(uniform_tensor({kC, 4, 4, 4}, 0, uniform(rng, 0.1, 5.0), rng));
    auto st = g.constant(uniform_tensor({kDs}, -1, 1, rng));
    const biva::InteractionMode mode{k % 3 != 1, k % 3 != 2};
    auto res = biva::interact(g, w, f0, st, bp, mode);
    const int r = static_cast<int>(res.trace.round());
    terminate_ok = terminate_ok && r >= 1 && r <= bp.max_rounds &&
                   (res.trace.converged ? res.trace.reason == "converged"
                                        : res.trace.reason == "max_rounds" && r == bp.max_rounds);
    converged += res.trace.converged;
  }

  // identity: A == 1, g == 0
  ad::ParameterSet p;
  Rng wr(1);
  auto w = biva::BivaWeights::create(p, "biva", kC, kDs, kHidden, wr);
  for (auto& a : w.attention) {
    p.value(a.conv_w).fill(0.0);
    p.value(a.conv_b).fill(50.0);
  }
  p.value(w.gate.b).fill(-50.0);
  ad::Graph g(&p);
  const Tensor f0 = uniform_tensor({kC, 4, 4, 4}, 0, 1, rng);
  const Tensor st = uniform_tensor({kDs}, -1, 1, rng);
  auto id = biva::interact(g, w, g.constant(f0), g.constant(st), {});
  const bool identity_ok = id.trace.converged && id.trace.round() == 1;

  // injected NaN
  Tensor bad = f0;
  bad[7] = std::nan("");
  std::string stage = "none";
  int round = -1;
  try {
    ad::Graph g2(&p);
    biva::interact(g2, w, g2.constant(bad), g2.constant(st), {});
  } catch (const AnomalyError& e) {
    stage = e.stage();
    round = e.round();
  }
  const bool nan_ok = stage == "semantic_to_visual" && round == 1;
  return {terminate_ok && identity_ok && nan_ok,
          fmt("1000 draws terminate within max_rounds: %s (%d converged early); identity converges at round %zu; "
              "NaN raises stage=%s round=%d",
              terminate_ok ? "yes" : "no", converged, id.trace.round(), stage.c_str(), round)};
}

// ---------------------------------------------------------------- AC-5
Verdict ac5() {
  const auto t0 = Clock::now();
  RunConfig cfg;  // defaults: 50 phantoms at 32^3
  const auto hash = config_hash(cfg);
  const auto data = phantom::make_dataset(cfg.phantom, cfg.seed, hash);
  auto m = model::Model::create({}, model::Variant::full, train::build_vocab(data), cfg.seed);
  train::TrainState state;
  train::TrainOptions opts;
  opts.seed = cfg.seed;
  opts.config_hash = hash;
  int epoch = 0;
  opts.on_epoch = [&](const std::string&) {
    std::cerr << "  AC-5 epoch " << ++epoch << "/" << cfg.train.epochs << " ("
              << static_cast<int>(seconds_since(t0)) << "s)\n";
  };
  train::train(m, state, data, cfg.train, cfg.loss, cfg.biva, opts);
  const auto held = ablation::held_out(data);
  const auto rep = train::evaluate_cases(m, held, cfg.biva, cfg.train.graph_precision());
  const double secs = seconds_since(t0);
  const bool ok = rep.mean_dice >= 0.70 && rep.hierarchy_violation_rate <= 0.01 && secs <= 900.0;
  return {ok, fmt("%zu held-out cases: mean Dice %.4f (>= 0.70) [WT %.3f TC %.3f ET %.3f], hierarchy violation "
                  "rate %.5f (<= 0.01), %.0fs (limit 900s)",
                  held.size(), rep.mean_dice, rep[Region::wt].dice, rep[Region::tc].dice, rep[Region::et].dice,
                  rep.hierarchy_violation_rate, secs)};
}

// ---------------------------------------------------------------- AC-6
RunConfig ablation_config() {
  RunConfig cfg;
  cfg.phantom.depth = cfg.phantom.height = cfg.phantom.width = 24;
  cfg.phantom.n_cases = 30;
  cfg.phantom.wt_radius = {5.5, 8.0};
  cfg.phantom.tc_radius = {3.5, 5.0};
  cfg.phantom.et_radius = {2.0, 3.0};
  cfg.phantom.center_jitter = 3.0;
  cfg.phantom.split = {0.6, 0.2, 0.2};
  cfg.train.batch_size = 1;
  return cfg;
}

Verdict ac6() {
  const auto t0 = Clock::now();
  const RunConfig cfg = ablation_config();
  const auto data = phantom::make_dataset(cfg.phantom, cfg.seed, config_hash(cfg));
  ablation::Options o;
  o.on_run = [&](model::Variant v, std::uint64_t seed, const metrics::MetricsReport& r) {
    std::cerr << "  AC-6 " << model::variant_name(v) << " seed " << seed << ": dice " << r.mean_dice << " hd95 "
              << (r.mean_hd95 ? *r.mean_hd95 : -1.0) << " (" << static_cast<int>(seconds_since(t0)) << "s)\n";
  };
  const auto rows = ablation::run(data, cfg, o);
  auto find = [&](model::Variant v) -> const metrics::MetricsReport& {
    for (const auto& r : rows)
      if (r.variant == v) return r.mean;
    throw ValueError("missing ablation row");
  };
  const auto& full = find(model::Variant::full);
  const auto& no_sem = find(model::Variant::no_semantic);
  const auto& no_sp = find(model::Variant::no_spatial);
  const auto& s2v = find(model::Variant::uni_s2v);
  const auto& v2s = find(model::Variant::uni_v2s);
  auto hd = [](const metrics::MetricsReport& r) { return r.mean_hd95.value_or(INFINITY); };
  const bool ok = hd(full) <= hd(no_sem) && hd(full) <= hd(no_sp) && full.mean_dice >= s2v.mean_dice &&
                  full.mean_dice >= v2s.mean_dice;
  return {ok, fmt("3 seeds, seed-averaged: HD95 full %.4f vs no_semantic %.4f, no_spatial %.4f; Dice full %.4f vs "
                  "uni_s2v %.4f, uni_v2s %.4f; %.0fs",
                  hd(full), hd(no_sem), hd(no_sp), full.mean_dice, s2v.mean_dice, v2s.mean_dice,
                  seconds_since(t0))};
}

// ---------------------------------------------------------------- AC-7
Verdict ac7() {
  namespace fs = std::filesystem;
  RunConfig cfg = ablation_config();
  cfg.train.epochs = 2;
  cfg.seed = 7;
  const auto hash = config_hash(cfg);
  test_util::TempDir dir;

  auto run_once = [&](const fs::path& out) {
    const auto data = phantom::make_dataset(cfg.phantom, cfg.seed, hash);
    phantom::write_dataset(out / "data", data, cfg.phantom, cfg.seed);
    auto m = model::Model::create({}, model::Variant::full, train::build_vocab(data), cfg.seed);
    train::TrainState st;
    train::TrainOptions opts;
    opts.seed = cfg.seed;
    opts.config_hash = hash;
    auto res = train::train(m, st, data, cfg.train, cfg.loss, cfg.biva, opts);
    std::string log;
    for (const auto& l : res.log) log += l + "\n";
    test_util::spit(out / "train_log.jsonl", log);
    train::save_checkpoint(out / "checkpoint", m, st, hash);
  };
  run_once(dir.path() / "a");
  run_once(dir.path() / "b");
  const bool same_log =
      test_util::slurp(dir.path() / "a" / "train_log.jsonl") == test_util::slurp(dir.path() / "b" / "train_log.jsonl");
  const bool same_ck = test_util::same_tree(dir.path() / "a" / "checkpoint", dir.path() / "b" / "checkpoint");
  const bool same_data = test_util::same_tree(dir.path() / "a" / "data", dir.path() / "b" / "data");

  // round trips
  auto ck = train::load_checkpoint(dir.path() / "a" / "checkpoint");
  train::save_checkpoint(dir.path() / "c", ck.model, ck.state, ck.config_hash);
  const bool ck_rt = test_util::same_tree(dir.path() / "a" / "checkpoint", dir.path() / "c");

  const auto ds = phantom::load_dataset(dir.path() / "a" / "data");
  phantom::write_dataset(dir.path() / "d", ds, cfg.phantom, cfg.seed);
  const bool ds_rt = test_util::same_tree(dir.path() / "a" / "data", dir.path() / "d");

  const bool cfg_rt = to_json(parse_config(to_json(cfg))) == to_json(cfg) && config_hash(parse_config(to_json(cfg))) == hash;

  Rng rng(77);
  bool tensor_rt = true;
  for (int k = 0; k < 500; ++k) {
    Shape s;
    for (std::size_t r = rng() % 6; r > 0; --r) s.push_back(rng() % 5);
    Tensor t = normal_tensor(s, 100.0, rng);
    const auto dt = k % 2 ? io::DType::f64 : io::DType::f32;
    if (dt == io::DType::f32)
      for (auto& v : t.data()) v = static_cast<double>(static_cast<float>(v));
    tensor_rt = tensor_rt && bit_identical(io::decode_tensor(io::encode_tensor(t, dt)), t);
  }
  const bool ok = same_log && same_ck && same_data && ck_rt && ds_rt && cfg_rt && tensor_rt;
  auto yn = [](bool b) { return b ? "yes" : "no"; };
  return {ok, fmt("identical log %s, checkpoint %s, dataset %s; round trips: checkpoint %s, dataset %s, config %s, "
                  "500 tensors %s",
                  yn(same_log), yn(same_ck), yn(same_data), yn(ck_rt), yn(ds_rt), yn(cfg_rt), yn(tensor_rt))};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria AC-1..AC-7"};
  std::vector<std::string> only;
  app.add_option("--only", only, "Run only these criteria (e.g. AC-3 AC-4)");
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"AC-1", ac1}, {"AC-2", ac2}, {"AC-3", ac3}, {"AC-4", ac4}, {"AC-5", ac5}, {"AC-6", ac6}, {"AC-7", ac7}};
  const std::set<std::string> wanted(only.begin(), only.end());
  bool all = true;
  for (const auto& [name, fn] : criteria) {
    if (!wanted.empty() && !wanted.count(name)) continue;
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    all = all && v.pass;
    std::cout << name << " " << (v.pass ? "PASS" : "FAIL") << "  " << v.detail << std::endl;
  }
  return all ? 0 : 1;
}
