#include <cmath>

#include "doctest.h"
#include "msfa/errors.hpp"
#include "msfa/loss.hpp"
#include "msfa/model.hpp"
#include "msfa/phantom.hpp"
#include "msfa/train.hpp"
#include "msfa/volume_io.hpp"
#include "test_util.hpp"

using namespace msfa;

namespace {

phantom::PhantomConfig tiny_phantom() {
  phantom::PhantomConfig c;
  c.depth = c.height = c.width = 12;
  c.n_cases = 6;
  c.wt_radius = {3.5, 4.5};
  c.tc_radius = {2.0, 3.0};
  c.et_radius = {1.0, 1.5};
  c.center_jitter = 1.0;
  c.split = {4.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0};
  return c;
}

model::ModelConfig tiny_model() {
  model::ModelConfig m;
  m.d_s = 8;
  m.d_v = 8;
  m.d_a = 4;
  m.d_f = 8;
  m.d_h = 4;
  m.c_s = 2;
  m.plane_hidden = 2;
  m.plane_pool = 2;
  m.biva_channels = 2;
  m.biva_hidden = 4;
  m.cond_channels = 2;
  m.decoder_hidden = 3;
  return m;
}

train::TrainConfig tiny_train(int epochs) {
  train::TrainConfig t;
  t.epochs = epochs;
  t.precision = "f64";
  return t;
}

struct Setup {
  phantom::Dataset data = phantom::make_dataset(tiny_phantom(), 3, "tiny");
  semantic::Vocab vocab = train::build_vocab(data);
  model::Model fresh(std::uint64_t seed, model::Variant v = model::Variant::full) const {
    return model::Model::create(tiny_model(), v, vocab, seed);
  }
};

bool same_params(const ad::ParameterSet& a, const ad::ParameterSet& b) {
  if (a.names() != b.names()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!bit_identical(a.values()[i], b.values()[i])) return false;
  return true;
}

}  // namespace

TEST_SUITE("pipeline") {

TEST_CASE("forward gives three probability maps of the input extent, deterministically") {
  Setup s;
  const auto& c = s.data.cases[0];
  for (model::Variant v : model::kVariants) {
    auto m = s.fresh(1, v);
    auto p = model::predict(m, c.volume, c.text, {});
    for (Region r : kRegions) {
      CHECK(p[r].shape() == c.labels.shape());
      for (double x : p[r].data()) {
        CHECK(x > 0.0);
        CHECK(x < 1.0);
      }
    }
    auto again = model::predict(m, c.volume, c.text, {});
    for (Region r : kRegions) CHECK(bit_identical(p[r], again[r]));
  }
  // text matters only when the semantic stream exists
  auto full = s.fresh(1);
  auto blind = s.fresh(1, model::Variant::no_semantic);
  CHECK_FALSE(bit_identical(model::predict(full, c.volume, "large", {}).wt,
                            model::predict(full, c.volume, "small", {}).wt));
  CHECK(bit_identical(model::predict(blind, c.volume, "large", {}).wt,
                      model::predict(blind, c.volume, "small", {}).wt));
}

TEST_CASE("total loss is the weighted sum of its terms") {
  Setup s;
  auto m = s.fresh(2);
  const auto& c = s.data.cases[1];
  loss::LossWeights w;
  w.seg = 0.7;
  w.hierarchy = 1.3;
  w.continuity = 0.05;
  w.topology = 0.2;
  ad::Graph g(&m.params);
  auto fr = model::forward(g, m, c.volume, c.text, {});
  auto t = loss::total_loss(fr.regions, train::targets(c), fr.f_spatial, w);
  const double expect = w.seg * (t.bce.value().item() + t.dice.value().item()) +
                        w.hierarchy * t.hierarchy.value().item() + w.continuity * t.continuity.value().item() +
                        w.topology * t.topology.value().item();
  CHECK(t.total.value().item() == doctest::Approx(expect).epsilon(1e-12));

  loss::LossWeights off;
  off.hierarchy = off.continuity = off.topology = 0.0;
  auto t0 = loss::total_loss(fr.regions, train::targets(c), fr.f_spatial, off);
  CHECK_FALSE(t0.hierarchy.valid());
  CHECK_FALSE(t0.continuity.valid());
  CHECK_FALSE(t0.topology.valid());
  CHECK(t0.total.value().item() == doctest::Approx(t.bce.value().item() + t.dice.value().item()).epsilon(1e-12));
}

TEST_CASE("a perfect prediction has near-zero segmentation loss") {
  Setup s;
  const auto gt = train::targets(s.data.cases[0]);
  ad::Graph g;
  auto p = SegProbVars::constant(g, gt);
  auto t = loss::total_loss(p, gt, ad::Var{}, {});
  CHECK(t.bce.value().item() < 1e-6);
  CHECK(t.dice.value().item() == 0.0);
  CHECK(t.hierarchy.value().item() == 0.0);
  CHECK_FALSE(t.continuity.valid());
}

TEST_CASE("one-cycle schedule endpoints") {
  CHECK(train::one_cycle_lr(0, 100, 1e-4, 1e-2, 0.3) == doctest::Approx(1e-4));
  CHECK(train::one_cycle_lr(30, 100, 1e-4, 1e-2, 0.3) == doctest::Approx(1e-2));
  CHECK(train::one_cycle_lr(100, 100, 1e-4, 1e-2, 0.3) == doctest::Approx(1e-4));
  double prev = 1.0;
  for (std::uint64_t k = 30; k <= 100; ++k) {
    const double lr = train::one_cycle_lr(k, 100, 1e-4, 1e-2, 0.3);
    CHECK(lr <= prev + 1e-15);
    prev = lr;
  }
}

TEST_CASE("zero learning rate leaves the parameters unchanged") {
  Setup s;
  auto m = s.fresh(3);
  const auto before = m.params.values();
  train::AdamW opt;
  opt.init(m.params);
  ad::Graph g(&m.params);
  const auto& c = s.data.cases[0];
  auto fr = model::forward(g, m, c.volume, c.text, {});
  auto grads = g.backward(loss::total_loss(fr.regions, train::targets(c), fr.f_spatial, {}).total);
  opt.update(m.params, grads, 0.0, 1e-2);
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(bit_identical(before[i], m.params.values()[i]));
  CHECK(opt.steps() == 1);
}

TEST_CASE("a zero learning-rate run ends at its initialization") {
  Setup s;
  auto m = s.fresh(6);
  const auto init = s.fresh(6);
  auto cfg = tiny_train(2);
  cfg.lr_min = cfg.lr_max = 0.0;
  train::TrainState st;
  train::train(m, st, s.data, cfg, {}, {}, {.seed = 6});
  CHECK(st.step == 4);
  CHECK(same_params(m.params, init.params));
}

TEST_CASE("depth flip is an involution and keeps the caption") {
  Setup s;
  const auto& c = s.data.cases[2];
  auto f = train::flip_depth(c);
  CHECK(f.text == c.text);
  CHECK(f.labels.at({0, 3, 4}) == c.labels.at({11, 3, 4}));
  auto back = train::flip_depth(f);
  CHECK(bit_identical(back.volume, c.volume));
  CHECK(bit_identical(back.labels, c.labels));
}

TEST_CASE("training is reproducible, resumable, and checkpoints round trip") {
  Setup s;
  auto run = [&](int stop_after) {
    auto m = s.fresh(4);
    train::TrainState st;
    auto res = train::train(m, st, s.data, tiny_train(2), {}, {},
                            {.seed = 4, .config_hash = "h", .stop_after = stop_after});
    return std::make_tuple(std::move(m), st, res);
  };
  auto [m1, st1, r1] = run(0);
  auto [m2, st2, r2] = run(0);
  REQUIRE(r1.log.size() == 2);
  CHECK(r1.log == r2.log);
  CHECK(same_params(m1.params, m2.params));
  CHECK(st1.step > 0);
  CHECK(st1.epochs_done == 2);

  // one epoch, checkpoint, reload, the rest
  auto [ma, sta, ra] = run(1);
  REQUIRE(ra.log.size() == 1);
  CHECK(ra.log[0] == r1.log[0]);
  test_util::TempDir dir;
  train::save_checkpoint(dir.path() / "ck", ma, sta, "h");
  auto ck = train::load_checkpoint(dir.path() / "ck");
  CHECK(ck.config_hash == "h");
  CHECK(ck.state.step == sta.step);
  CHECK(same_params(ck.model.params, ma.params));
  auto rb = train::train(ck.model, ck.state, s.data, tiny_train(2), {}, {}, {.seed = 4, .config_hash = "h"});
  REQUIRE(rb.log.size() == 1);
  CHECK(rb.log[0] == r1.log[1]);
  CHECK(ck.state.step == st1.step);
  CHECK(ck.state.step > sta.step);
  CHECK(same_params(ck.model.params, m1.params));

  // a reloaded checkpoint scores identically
  train::save_checkpoint(dir.path() / "ck2", m1, st1, "h");
  auto ck2 = train::load_checkpoint(dir.path() / "ck2");
  const auto cases = s.data.subset(s.data.split.test);
  CHECK(train::evaluate_cases(ck2.model, cases, {}, ad::Precision::f64).to_json() ==
        train::evaluate_cases(m1, cases, {}, ad::Precision::f64).to_json());
  // saving twice gives the same bytes
  train::save_checkpoint(dir.path() / "ck3", m1, st1, "h");
  CHECK(test_util::same_tree(dir.path() / "ck2", dir.path() / "ck3"));
}

TEST_CASE("missing checkpoint is an I/O error") {
  CHECK_THROWS_AS(train::load_checkpoint("/nonexistent/checkpoint"), IoError);
}

TEST_CASE("training log lines carry the documented fields") {
  Setup s;
  auto m = s.fresh(5);
  train::TrainState st;
  auto res = train::train(m, st, s.data, tiny_train(1), {}, {}, {.seed = 5, .config_hash = "abc"});
  REQUIRE(res.log.size() == 1);
  for (const char* key : {"\"config_hash\":\"abc\"", "\"epoch\"", "\"lr\"", "\"step\"", "\"train_loss\"",
                          "\"val_loss\"", "\"val_metrics\"", "\"variant\":\"full\"", "\"total\"", "\"bce\"",
                          "\"hierarchy_violation_rate\""})
    CHECK(res.log[0].find(key) != std::string::npos);
}

}  // TEST_SUITE
