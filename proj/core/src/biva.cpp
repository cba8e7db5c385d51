#include "msfa/biva.hpp"

#include <cmath>
#include <sstream>

#include "init.hpp"
#include "msfa/errors.hpp"

namespace msfa::biva {
namespace {

void check_finite(ad::Var v, const char* stage, int round) {
  if (!v.value().all_finite()) throw AnomalyError(stage, round, "non-finite values");
}

double norm(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v * v;
  return std::sqrt(s);
}

}  // namespace

void BivaParams::validate() const {
  if (max_rounds < 1) throw ConfigError("biva.max_rounds: must be >= 1");
  if (!(eps_delta > 0.0)) throw ConfigError("biva.eps_delta: must be > 0");
  if (!(eps_quality > 0.0)) throw ConfigError("biva.eps_quality: must be > 0");
}

BivaWeights BivaWeights::create(ad::ParameterSet& params, const std::string& prefix, std::size_t channels,
                                std::size_t d_s, std::size_t hidden, Rng& rng) {
  BivaWeights w;
  w.channels = channels;
  w.d_s = d_s;
  w.hidden = hidden;
  w.decoupler = semantic::RegionDecoupler::create(params, prefix + ".decouple", d_s, rng);
  const char* names[3] = {"wt", "tc", "et"};
  for (int r = 0; r < 3; ++r) {
    const std::string p = prefix + ".attention." + names[r];
    w.attention[r].proj_w = params.add(p + ".proj.w", detail::xavier_uniform({channels, d_s}, d_s, channels, rng));
    w.attention[r].conv_w =
        params.add(p + ".conv.w", detail::xavier_uniform({1, channels, 3, 3, 3}, channels * 27, 27, rng));
    w.attention[r].conv_b = params.add(p + ".conv.b", Tensor(Shape{1}));
  }
  const std::size_t agg = 10 * channels;
  w.abstractor.h1_w = params.add(prefix + ".abstract.h1.w", detail::xavier_uniform({hidden, agg}, agg, hidden, rng));
  w.abstractor.h1_b = params.add(prefix + ".abstract.h1.b", Tensor(Shape{hidden}));
  w.abstractor.h2_w = params.add(prefix + ".abstract.h2.w", detail::xavier_uniform({d_s, hidden}, hidden, d_s, rng));
  w.abstractor.h2_b = params.add(prefix + ".abstract.h2.b", Tensor(Shape{d_s}));
  w.abstractor.res_w = params.add(prefix + ".abstract.residual.w", detail::xavier_uniform({agg, agg}, agg, agg, rng));
  w.abstractor.res_b = params.add(prefix + ".abstract.residual.b", Tensor(Shape{agg}));
  w.gate.w = params.add(prefix + ".gate.w", detail::xavier_uniform({d_s, 2 * d_s}, 2 * d_s, d_s, rng));
  w.gate.b = params.add(prefix + ".gate.b", Tensor(Shape{d_s}));
  return w;
}

AttentionResult semantic_to_visual(ad::Graph& g, const RegionAttention& w, ad::Var s_region, ad::Var features) {
  const Shape& fs = features.shape();
  if (fs.size() != 4) throw ShapeError("semantic_to_visual expects features [c,D,H,W], got " + shape_str(fs));
  const std::size_t c = fs[0];
  auto projected = ad::matmul(g.param(w.proj_w), s_region);
  if (projected.shape() != Shape{c}) throw ShapeError("semantic_to_visual: projection width != feature channels");
  auto field = ad::broadcast_to(ad::reshape(projected, {c, 1, 1, 1}), fs);
  auto attention = ad::sigmoid(ad::conv3d(field, g.param(w.conv_w), g.param(w.conv_b)));
  return AttentionResult{features * ad::broadcast_to(attention, fs), attention};
}

ad::Var aggregate(ad::Var features) {
  const Shape& s = features.shape();
  if (s.size() != 4) throw ShapeError("aggregate expects [c,D,H,W], got " + shape_str(s));
  const std::size_t c = s[0];
  auto flat = ad::reshape(features, {c, s[1] * s[2] * s[3]});
  auto gap = ad::mean_axis(flat, 1);
  auto gmp = ad::max_axis(flat, 1);
  auto sap = ad::reshape(ad::adaptive_avg_pool3d(features, 2, 2, 2), {8 * c});
  return ad::concat({gap, gmp, sap}, 0);
}

ad::Var abstract(ad::Graph& g, const Abstractor& w, ad::Var x) {
  auto residual = ad::matmul(g.param(w.res_w), x) + g.param(w.res_b);
  auto h = ad::tanh(ad::matmul(g.param(w.h1_w), x + residual) + g.param(w.h1_b));
  return ad::tanh(ad::matmul(g.param(w.h2_w), h) + g.param(w.h2_b));
}

RefineResult gated_refine(ad::Graph& g, const RefineGate& w, ad::Var s_visual, ad::Var s_text) {
  if (s_visual.shape() != s_text.shape()) throw ShapeError("gated_refine: S_visual and S_text lengths differ");
  auto gate = ad::sigmoid(ad::matmul(g.param(w.w), ad::concat({s_visual, s_text}, 0)) + g.param(w.b));
  auto refined = gate * s_visual + (1.0 - gate) * s_text;
  return RefineResult{refined, gate};
}

bool meets_convergence(const RoundRecord& r, const BivaParams& p) {
  return r.delta_f < p.eps_delta && r.delta_s < p.eps_delta && r.quality_gain < p.eps_quality;
}

double relative_change(const Tensor& now, const Tensor& before) {
  if (now.shape() != before.shape()) throw ShapeError("relative_change: shape mismatch");
  double diff = 0.0;
  for (std::size_t i = 0; i < now.size(); ++i) diff += (now[i] - before[i]) * (now[i] - before[i]);
  const double base = norm(before);
  return std::sqrt(diff) / std::max(base, 1e-12);
}

double cosine_similarity(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("cosine_similarity: shape mismatch");
  double dot = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
  const double na = norm(a), nb = norm(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (na * nb);
}

std::vector<double> InteractionTrace::quality_history() const {
  std::vector<double> q;
  for (const auto& r : rounds) q.push_back(r.quality);
  return q;
}

std::string InteractionTrace::to_json() const {
  std::ostringstream os;
  os.precision(17);
  os << "{\"converged\":" << (converged ? "true" : "false") << ",\"converged_reason\":\"" << reason
     << "\",\"initial_quality\":" << initial_quality << ",\"rounds\":[";
  for (std::size_t i = 0; i < rounds.size(); ++i) {
    const auto& r = rounds[i];
    if (i) os << ",";
    os << "{\"round\":" << r.round << ",\"delta_F\":" << r.delta_f << ",\"delta_S\":" << r.delta_s
       << ",\"quality\":" << r.quality << ",\"quality_gain\":" << r.quality_gain << "}";
  }
  os << "]}";
  return os.str();
}

InteractResult interact(ad::Graph& g, const BivaWeights& w, ad::Var f0, ad::Var s_text, const BivaParams& params,
                        const InteractionMode& mode) {
  params.validate();
  InteractResult out;
  out.trace.initial_quality =
      cosine_similarity(abstract(g, w.abstractor, aggregate(f0)).value(), s_text.value());

  std::vector<double> quality{out.trace.initial_quality};
  ad::Var f_prev = f0;
  ad::Var s_prev = s_text;
  for (int round = 1;; ++round) {
    ad::Var f = f0;
    if (mode.semantic_to_visual) {
      auto regions = w.decoupler.decouple(g, s_prev);
      for (int r = 0; r < 3; ++r) check_finite(regions[r], "decouple", round);
      for (int r = 0; r < 3; ++r) {
        auto res = semantic_to_visual(g, w.attention[r], regions[r], f);
        check_finite(res.attention, "semantic_to_visual", round);
        check_finite(res.features, "semantic_to_visual", round);
        f = res.features;
        out.last_attention[r] = res.attention;
      }
    } else {
      check_finite(f, "semantic_to_visual", round);
    }
    auto agg = aggregate(f);
    check_finite(agg, "aggregate", round);
    auto s_visual = abstract(g, w.abstractor, agg);
    check_finite(s_visual, "abstract", round);
    ad::Var s = s_prev;
    if (mode.visual_to_semantic) {
      auto refined = gated_refine(g, w.gate, s_visual, s_text);
      check_finite(refined.refined, "gated_refine", round);
      s = refined.refined;
      out.last_gate = refined.gate;
    }

    RoundRecord rec;
    rec.round = round;
    rec.delta_f = relative_change(f.value(), f_prev.value());
    rec.delta_s = relative_change(s.value(), s_prev.value());
    rec.quality = cosine_similarity(s_visual.value(), s.value());
    rec.quality_gain = rec.quality - quality[static_cast<std::size_t>(std::max(0, round - 2))];
    quality.push_back(rec.quality);
    out.trace.rounds.push_back(rec);

    f_prev = f;
    s_prev = s;
    if (meets_convergence(rec, params)) {
      out.trace.converged = true;
      out.trace.reason = "converged";
      break;
    }
    if (round >= params.max_rounds) {
      out.trace.reason = "max_rounds";
      break;
    }
  }
  out.features = f_prev;
  out.semantic = s_prev;
  return out;
}

}  // namespace msfa::biva
