#include "msfa/grad_suite.hpp"

#include <functional>
#include <memory>

#include "msfa/biva.hpp"
#include "msfa/constraints.hpp"
#include "msfa/errors.hpp"
#include "msfa/fusion.hpp"
#include "msfa/gradcheck.hpp"
#include "msfa/loss.hpp"
#include "msfa/model.hpp"
#include "msfa/rng.hpp"
#include "msfa/semantic.hpp"
#include "msfa/visual.hpp"

namespace msfa::grad_suite {
namespace {

using ad::Graph;
using ad::ParameterSet;
using ad::ParamId;
using ad::Var;

struct Fixture {
  std::shared_ptr<void> owner;  // keeps whatever the builder refers to alive
  ParameterSet* params = nullptr;
  ad::LossBuilder build;
  std::size_t max_coords = 0;
  // Network weights are smooth in their own coordinates and their gradients are small, so a larger
  // step keeps roundoff out of the difference quotient.
  double step_scale = 1.0;
};

using Maker = std::function<Fixture(Rng&)>;

struct Spec {
  const char* name;
  Maker make;
};

// sum(v * R) for a fixed random R, so every output coordinate feeds the loss.
Var project(Graph& g, Var v, const Tensor& r) { return ad::sum(v * g.constant(r)); }

Tensor weights_for(const Shape& s, Rng& rng) { return uniform_tensor(s, -1.0, 1.0, rng); }

// Tensor in [lo, hi] that keeps away from `avoid` by at least `margin`.
Tensor away_from(const Shape& s, double lo, double hi, double avoid, double margin, Rng& rng) {
  Tensor t = uniform_tensor(s, lo, hi, rng);
  for (auto& v : t.data()) {
    while (std::abs(v - avoid) < margin) v = std::uniform_real_distribution<double>(lo, hi)(rng);
  }
  return t;
}

Fixture owned(std::shared_ptr<ParameterSet> p, ad::LossBuilder b, std::size_t max_coords = 0) {
  Fixture f;
  f.params = p.get();
  f.owner = std::move(p);
  f.build = std::move(b);
  f.max_coords = max_coords;
  return f;
}

// ---- primitives --------------------------------------------------------------------------

Fixture conv3d_fixture(Rng& rng) {
  auto p = std::make_shared<ParameterSet>();
  auto x = p->add("x", uniform_tensor({2, 3, 4, 3}, -1, 1, rng));
  auto w = p->add("w", uniform_tensor({3, 2, 3, 3, 1}, -1, 1, rng));
  auto b = p->add("b", uniform_tensor({3}, -1, 1, rng));
  auto w3 = p->add("w3", uniform_tensor({1, 2, 3, 3, 3}, -1, 1, rng));
  auto b3 = p->add("b3", uniform_tensor({1}, -1, 1, rng));
  Tensor r1 = weights_for({3, 3, 4, 3}, rng), r2 = weights_for({1, 3, 4, 3}, rng);
  return owned(p, [=](Graph& g) {
    auto xv = g.param(x);
    return project(g, ad::conv3d(xv, g.param(w), g.param(b)), r1) +
           project(g, ad::conv3d(xv, g.param(w3), g.param(b3)), r2);
  });
}

Fixture dense_fixture(Rng& rng) {
  auto p = std::make_shared<ParameterSet>();
  auto a = p->add("a", uniform_tensor({3, 4}, -1, 1, rng));
  auto b = p->add("b", uniform_tensor({4, 2}, -1, 1, rng));
  auto v = p->add("v", uniform_tensor({4}, -1, 1, rng));
  auto d = p->add("d", uniform_tensor({3}, 0.5, 2, rng));
  Tensor r1 = weights_for({3, 2}, rng), r2 = weights_for({3}, rng);
  return owned(p, [=](Graph& g) {
    auto av = g.param(a);
    auto mv = ad::matmul(av, g.param(v));
    return project(g, ad::matmul(av, g.param(b)), r1) + project(g, mv / g.param(d), r2) +
           ad::sum(ad::log(g.param(d)));
  });
}

Fixture elementwise_fixture(Rng& rng) {
  auto p = std::make_shared<ParameterSet>();
  auto x = p->add("x", uniform_tensor({2, 5}, -2, 2, rng));
  auto y = p->add("y", uniform_tensor({2, 5}, -2, 2, rng));
  Tensor r1 = weights_for({2, 5}, rng), r2 = weights_for({2, 5}, rng), r3 = weights_for({2, 5}, rng),
         r4 = weights_for({2, 5}, rng);
  return owned(p, [=](Graph& g) {
    auto xv = g.param(x), yv = g.param(y);
    return project(g, ad::sigmoid(xv) * ad::tanh(yv), r1) + project(g, ad::softmax(xv, 1), r2) +
           project(g, ad::softmax(yv, 0), r3) + project(g, (xv - yv) * 0.5 + 1.0, r4);
  });
}

Fixture reduction_fixture(Rng& rng) {
  auto p = std::make_shared<ParameterSet>();
  auto x = p->add("x", uniform_tensor({2, 3, 5, 4}, -1, 1, rng));
  Tensor r1 = weights_for({2, 2, 2, 2}, rng), r2 = weights_for({2, 5, 4}, rng), r3 = weights_for({2, 3, 4}, rng),
         r4 = weights_for({2, 3, 5}, rng);
  return owned(p, [=](Graph& g) {
    auto xv = g.param(x);
    return project(g, ad::adaptive_avg_pool3d(xv, 2, 2, 2), r1) + project(g, ad::mean_axis(xv, 1), r2) +
           project(g, ad::max_axis(xv, 2), r3) + project(g, ad::sum_axis(xv, 3), r4) + ad::mean(xv * xv);
  });
}

Fixture layout_fixture(Rng& rng) {
  auto p = std::make_shared<ParameterSet>();
  auto x = p->add("x", uniform_tensor({2, 1, 3}, -1, 1, rng));
  auto y = p->add("y", uniform_tensor({2, 4, 3}, -1, 1, rng));
  Tensor r1 = weights_for({2, 5, 3}, rng), r2 = weights_for({2, 4, 3}, rng), r3 = weights_for({6}, rng);
  return owned(p, [=](Graph& g) {
    auto xv = g.param(x), yv = g.param(y);
    auto c = ad::concat({xv, yv}, 1);
    return project(g, c, r1) + project(g, ad::broadcast_to(xv, {2, 4, 3}) * yv, r2) +
           project(g, ad::reshape(ad::slice(yv, 1, 1, 1), {6}), r3);
  });
}

// ---- branches ----------------------------------------------------------------------------

Fixture text_fixture(Rng& rng) {
  auto p = std::make_shared<ParameterSet>();
  auto enc = semantic::TextEncoder::create(*p, "text", 7, 5, rng);
  auto dec = semantic::RegionDecoupler::create(*p, "decouple", 5, rng);
  std::vector<std::uint32_t> ids;
  const std::size_t n = 1 + rng() % 6;
  for (std::size_t i = 0; i < n; ++i) ids.push_back(static_cast<std::uint32_t>(rng() % 7));
  Tensor r0 = weights_for({5}, rng);
  std::array<Tensor, 3> rs{weights_for({5}, rng), weights_for({5}, rng), weights_for({5}, rng)};
  return owned(p, [=](Graph& g) {
    auto s = enc.encode(g, ids);
    auto regions = dec.decouple(g, s);
    Var l = project(g, s, r0);
    for (int r = 0; r < 3; ++r) l = l + project(g, regions[r], rs[r]);
    return l;
  });
}

Fixture view_attention_fixture(Rng& rng) {
  auto p = std::make_shared<ParameterSet>();
  auto att = visual::FusionAttention::create(*p, "att", 6, 4, rng);
  std::array<ParamId, 3> views;
  for (int i = 0; i < 3; ++i) views[i] = p->add("view" + std::to_string(i), uniform_tensor({6}, -1, 1, rng));
  Tensor r1 = weights_for({6}, rng), r2 = weights_for({3}, rng);
  return owned(p, [=](Graph& g) {
    auto fv = visual::attention_fuse(g, att, {g.param(views[0]), g.param(views[1]), g.param(views[2])});
    return project(g, fv.fused, r1) + project(g, fv.alpha, r2);
  });
}

Fixture visual_branch_fixture(Rng& rng) {
  auto p = std::make_shared<ParameterSet>();
  visual::EncoderShape es{2, 3, 2, 5};
  auto branch = visual::VisualBranch::create(*p, "visual", es, 4, rng);
  auto vol = p->add("volume", uniform_tensor({2, 4, 3, 5}, 0, 1, rng));
  Tensor r = weights_for({5}, rng);
  return owned(p, [=](Graph& g) { return project(g, branch.forward(g, g.param(vol)).fused, r); });
}

Fixture spatial_encoder_fixture(Rng& rng) {
  auto p = std::make_shared<ParameterSet>();
  auto enc = constraints::SpatialEncoder::create(*p, "spatial", 2, 3, rng);
  p->value(enc.conv1_b) = uniform_tensor({3}, -0.2, 0.2, rng);
  auto vol = p->add("volume", uniform_tensor({2, 3, 3, 3}, 0, 1, rng));
  Tensor r = weights_for({3, 3, 3, 3}, rng);
  return owned(p, [=](Graph& g) { return project(g, enc.encode(g, g.param(vol)), r); });
}

Fixture hierarchy_fixture(Rng& rng) {
  auto p = std::make_shared<ParameterSet>();
  const Shape s{3, 3, 3};
  std::array<ParamId, 3> ids;
  for (int r = 0; r < 3; ++r) ids[r] = p->add("p" + std::to_string(r), uniform_tensor(s, 0.01, 0.99, rng));
  // Keep the pairwise differences off the hinge.
  for (std::size_t i = 0; i < shape_size(s); ++i) {
    for (int r = 1; r < 3; ++r) {
      while (std::abs(p->value(ids[r])[i] - p->value(ids[r - 1])[i]) < 1e-3) {
        p->value(ids[r])[i] = std::uniform_real_distribution<double>(0.01, 0.99)(rng);
      }
    }
  }
  return owned(p, [=](Graph& g) {
    return constraints::hierarchy_loss(SegProbVars{g.param(ids[0]), g.param(ids[1]), g.param(ids[2])});
  });
}

Fixture continuity_fixture(Rng& rng) {
  auto p = std::make_shared<ParameterSet>();
  const Shape s{1 + rng() % 3, 1 + rng() % 4, 1 + rng() % 4, 2 + rng() % 3};
  auto f = p->add("f", uniform_tensor(s, -1, 1, rng));
  return owned(p, [=](Graph& g) { return constraints::continuity_loss(g.param(f)); });
}

Fixture topology_fixture(Rng& rng) {
  auto p = std::make_shared<ParameterSet>();
  const Shape s{4, 4, 4};
  Tensor m = away_from(s, 0.0, 1.0, 0.5, 1e-3, rng);
  auto id = p->add("m", std::move(m));
  constraints::TopologyParams tp{uniform_tensor({1}, 0.5, 1.5, rng)[0], uniform_tensor({1}, 0.05, 0.5, rng)[0]};
  return owned(p, [=](Graph& g) { return constraints::topology_loss(g.param(id), tp).total; });
}

Fixture fusion_gate_fixture(Rng& rng) {
  auto p = std::make_shared<ParameterSet>();
  auto aligner = fusion::Aligner::create(*p, "align", 5, 4, 3, 6, rng);
  auto gate = fusion::FusionGate::create(*p, "gate", 6, 4, rng);
  auto fv = p->add("f_visual", uniform_tensor({5}, -1, 1, rng));
  auto ss = p->add("s", uniform_tensor({4}, -1, 1, rng));
  auto sp = p->add("f_spatial", uniform_tensor({3, 2, 2, 3}, -1, 1, rng));
  Tensor r1 = weights_for({6}, rng), r2 = weights_for({3}, rng);
  return owned(p, [=](Graph& g) {
    auto a = aligner.align(g, g.param(fv), g.param(ss), g.param(sp));
    auto w = gate.weights(g, a);
    return project(g, fusion::fuse(a, w), r1) + project(g, w, r2);
  });
}

Fixture semantic_to_visual_fixture(Rng& rng) {
  auto p = std::make_shared<ParameterSet>();
  auto w = biva::BivaWeights::create(*p, "biva", 2, 5, 4, rng);
  auto s = p->add("s_region", uniform_tensor({5}, -1, 1, rng));
  auto f = p->add("f", uniform_tensor({2, 3, 4, 3}, -1, 1, rng));
  Tensor r1 = weights_for({2, 3, 4, 3}, rng), r2 = weights_for({1, 3, 4, 3}, rng);
  const int region = static_cast<int>(rng() % 3);
  return owned(p, [=](Graph& g) {
    auto out = biva::semantic_to_visual(g, w.attention[region], g.param(s), g.param(f));
    return project(g, out.features, r1) + project(g, out.attention, r2);
  });
}

Fixture aggregate_abstract_fixture(Rng& rng) {
  auto p = std::make_shared<ParameterSet>();
  auto w = biva::BivaWeights::create(*p, "biva", 2, 5, 4, rng);
  auto f = p->add("f", uniform_tensor({2, 3, 4, 3}, -1, 1, rng));
  Tensor r = weights_for({5}, rng);
  return owned(p, [=](Graph& g) { return project(g, biva::abstract(g, w.abstractor, biva::aggregate(g.param(f))), r); });
}

Fixture gated_refine_fixture(Rng& rng) {
  auto p = std::make_shared<ParameterSet>();
  auto w = biva::BivaWeights::create(*p, "biva", 2, 5, 4, rng);
  p->value(w.gate.b) = uniform_tensor({5}, -1, 1, rng);
  auto sv = p->add("s_visual", uniform_tensor({5}, -1, 1, rng));
  auto st = p->add("s_text", uniform_tensor({5}, -1, 1, rng));
  Tensor r1 = weights_for({5}, rng), r2 = weights_for({5}, rng);
  return owned(p, [=](Graph& g) {
    auto out = biva::gated_refine(g, w.gate, g.param(sv), g.param(st));
    return project(g, out.refined, r1) + project(g, out.gate, r2);
  });
}

// Fixed round count: tolerances small enough that the stopping rule never fires early.
biva::BivaParams fixed_rounds(int rounds) {
  biva::BivaParams bp;
  bp.max_rounds = rounds;
  bp.eps_delta = 1e-300;
  bp.eps_quality = 1e-300;
  return bp;
}

Fixture interact_fixture(Rng& rng) {
  auto p = std::make_shared<ParameterSet>();
  auto w = biva::BivaWeights::create(*p, "biva", 2, 5, 4, rng);
  auto f0 = p->add("f0", uniform_tensor({2, 3, 3, 3}, -1, 1, rng));
  auto st = p->add("s_text", uniform_tensor({5}, -1, 1, rng));
  Tensor r1 = weights_for({2, 3, 3, 3}, rng), r2 = weights_for({5}, rng);
  const auto bp = fixed_rounds(1 + static_cast<int>(rng() % 3));
  return owned(p, [=](Graph& g) {
    auto out = biva::interact(g, w, g.param(f0), g.param(st), bp);
    return project(g, out.features, r1) + project(g, out.semantic, r2);
  });
}

Fixture seg_loss_fixture(Rng& rng) {
  auto p = std::make_shared<ParameterSet>();
  const Shape s{3, 3, 3};
  auto prob = p->add("p", uniform_tensor(s, 0.02, 0.98, rng));
  Tensor gt(s);
  for (auto& v : gt.data()) v = (rng() % 2) ? 1.0 : 0.0;
  return owned(p, [=](Graph& g) {
    auto pv = g.param(prob);
    auto gv = g.constant(gt);
    return loss::bce(pv, gv) + loss::soft_dice_loss(pv, gv);
  });
}

// A tiny model on an 8^3 volume.
struct ModelFixture {
  model::Model m;
  Tensor volume;
  std::string text;
  SegProbs gt;
};

model::ModelConfig tiny_config() {
  model::ModelConfig c;
  c.in_channels = 4;
  c.d_s = 6;
  c.d_v = 6;
  c.d_a = 4;
  c.d_f = 6;
  c.d_h = 4;
  c.c_s = 2;
  c.plane_hidden = 2;
  c.plane_pool = 2;
  c.biva_channels = 2;
  c.biva_hidden = 4;
  c.cond_channels = 2;
  c.decoder_hidden = 2;
  return c;
}

std::shared_ptr<ModelFixture> make_model(Rng& rng) {
  const std::vector<std::string> corpus{"large lesion left frontal enhancing", "small lesion right parietal"};
  auto f = std::make_shared<ModelFixture>();
  const auto variant = model::kVariants[rng() % 5];
  f->m = model::Model::create(tiny_config(), variant, semantic::Vocab::build(corpus), rng());
  f->volume = uniform_tensor({4, 8, 8, 8}, 0, 1, rng);
  f->text = corpus[rng() % 2];
  const Shape s{8, 8, 8};
  Tensor labels(s);
  for (std::size_t z = 2; z < 6; ++z)
    for (std::size_t y = 2; y < 7; ++y)
      for (std::size_t x = 1; x < 6; ++x) labels.at({z, y, x}) = 1 + (z > 3) + (z > 4 && y > 3);
  f->gt = SegProbs{Tensor(s), Tensor(s), Tensor(s)};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    f->gt.wt[i] = labels[i] >= 1;
    f->gt.tc[i] = labels[i] >= 2;
    f->gt.et[i] = labels[i] == 3;
  }
  return f;
}

Fixture decoder_fixture(Rng& rng) {
  auto f = make_model(rng);
  Tensor r = weights_for({3, 8, 8, 8}, rng);
  const auto bp = fixed_rounds(2);
  Fixture fx;
  fx.params = &f->m.params;
  fx.owner = f;
  fx.build = [f, r, bp](Graph& g) { return project(g, model::forward(g, f->m, f->volume, f->text, bp).probs, r); };
  fx.max_coords = 6;
  fx.step_scale = 10.0;
  return fx;
}

Fixture total_loss_fixture(Rng& rng) {
  auto f = make_model(rng);
  const auto bp = fixed_rounds(2);
  loss::LossWeights w;
  w.continuity = 0.5;
  w.topology = 0.5;
  Fixture fx;
  fx.params = &f->m.params;
  fx.owner = f;
  fx.build = [f, bp, w](Graph& g) {
    auto out = model::forward(g, f->m, f->volume, f->text, bp);
    return loss::total_loss(out.regions, f->gt, out.f_spatial, w).total;
  };
  fx.max_coords = 6;
  fx.step_scale = 10.0;
  return fx;
}

const std::vector<Spec>& specs() {
  static const std::vector<Spec> s{
      {"conv3d", conv3d_fixture},
      {"matmul_div_log", dense_fixture},
      {"elementwise_softmax", elementwise_fixture},
      {"reductions_pooling", reduction_fixture},
      {"concat_broadcast_slice", layout_fixture},
      {"text_encoder_decoupler", text_fixture},
      {"visual_branch", visual_branch_fixture},
      {"view_attention", view_attention_fixture},
      {"hierarchy_loss", hierarchy_fixture},
      {"continuity_loss", continuity_fixture},
      {"topology_loss", topology_fixture},
      {"spatial_encoder", spatial_encoder_fixture},
      {"adaptive_fusion", fusion_gate_fixture},
      {"semantic_to_visual", semantic_to_visual_fixture},
      {"aggregate_abstract", aggregate_abstract_fixture},
      {"gated_refine", gated_refine_fixture},
      {"interact", interact_fixture},
      {"bce_soft_dice", seg_loss_fixture},
      {"decoder", decoder_fixture},
      {"total_loss", total_loss_fixture},
  };
  return s;
}

}  // namespace

std::vector<std::string> entry_names() {
  std::vector<std::string> names;
  for (const auto& s : specs()) names.emplace_back(s.name);
  return names;
}

std::vector<Entry> run(const Options& options) {
  std::vector<Entry> out;
  std::uint64_t stream = 0;
  for (const auto& spec : specs()) {
    ++stream;
    if (!options.filter.empty() && std::string(spec.name).find(options.filter) == std::string::npos) continue;
    Entry e;
    e.name = spec.name;
    Rng rng(derive_seed(options.seed, stream));
    for (std::size_t k = 0; k < options.fixtures; ++k) {
      Fixture fx = spec.make(rng);
      ad::GradCheckOptions go;
      go.max_coords = fx.max_coords;
      go.step = options.step * fx.step_scale;
      go.seed = rng();
      const auto rep = ad::finite_diff_check_all(*fx.params, fx.build, options.tolerance, go);
      if (rep.max_rel_err >= e.max_rel_err) {
        e.max_rel_err = rep.max_rel_err;
        e.worst = std::to_string(k) + ":" + rep.worst_param + "[" + std::to_string(rep.worst_index) + "]";
      }
      e.coords += rep.coords_checked;
      e.skipped += rep.coords_skipped;
      ++e.fixtures;
    }
    e.pass = e.max_rel_err < options.tolerance;
    out.push_back(e);
  }
  return out;
}

}  // namespace msfa::grad_suite
