#include "msfa/fusion.hpp"

#include "init.hpp"
#include "msfa/errors.hpp"

namespace msfa::fusion {

Aligner Aligner::create(ad::ParameterSet& params, const std::string& prefix, std::size_t d_v, std::size_t d_s,
                        std::size_t c_s, std::size_t d_f, Rng& rng) {
  Aligner a;
  a.d_f = d_f;
  a.visual_w = params.add(prefix + ".visual.w", detail::xavier_uniform({d_f, d_v}, d_v, d_f, rng));
  a.visual_b = params.add(prefix + ".visual.b", Tensor(Shape{d_f}));
  a.semantic_w = params.add(prefix + ".semantic.w", detail::xavier_uniform({d_f, d_s}, d_s, d_f, rng));
  a.semantic_b = params.add(prefix + ".semantic.b", Tensor(Shape{d_f}));
  a.spatial_w = params.add(prefix + ".spatial.w", detail::xavier_uniform({d_f, c_s}, c_s, d_f, rng));
  a.spatial_b = params.add(prefix + ".spatial.b", Tensor(Shape{d_f}));
  return a;
}

ad::Var global_average(ad::Var map) {
  const Shape& s = map.shape();
  if (s.size() != 4) throw ShapeError("global_average expects [C,D,H,W], got " + shape_str(s));
  return ad::mean_axis(ad::reshape(map, {s[0], s[1] * s[2] * s[3]}), 1);
}

AlignedFeatures Aligner::align(ad::Graph& g, ad::Var f_visual, ad::Var s_semantic, ad::Var f_spatial) const {
  auto pooled = global_average(f_spatial);
  return AlignedFeatures{
      ad::matmul(g.param(visual_w), f_visual) + g.param(visual_b),
      ad::matmul(g.param(semantic_w), s_semantic) + g.param(semantic_b),
      ad::matmul(g.param(spatial_w), pooled) + g.param(spatial_b),
  };
}

FusionGate FusionGate::create(ad::ParameterSet& params, const std::string& prefix, std::size_t d_f, std::size_t d_h,
                              Rng& rng) {
  FusionGate gate;
  gate.fusion_w = params.add(prefix + ".fusion.w", detail::xavier_uniform({d_h, 3 * d_f}, 3 * d_f, d_h, rng));
  gate.fusion_b = params.add(prefix + ".fusion.b", Tensor(Shape{d_h}));
  gate.gate_w = params.add(prefix + ".gate.w", detail::xavier_uniform({3, d_h}, d_h, 3, rng));
  return gate;
}

ad::Var FusionGate::weights(ad::Graph& g, const AlignedFeatures& a) const {
  const Shape& s = a.visual.shape();
  if (a.semantic.shape() != s || a.spatial.shape() != s) throw ShapeError("fusion_weights: aligned lengths differ");
  auto wf = g.param(fusion_w);
  if (wf.shape()[1] != 3 * s[0]) {
    throw ShapeError("fusion_weights: gate expects 3 x " + std::to_string(wf.shape()[1] / 3) +
                     " inputs, got 3 x " + std::to_string(s[0]));
  }
  auto h = ad::sigmoid(ad::matmul(wf, ad::concat({a.visual, a.semantic, a.spatial}, 0)) + g.param(fusion_b));
  return ad::softmax(ad::matmul(g.param(gate_w), h), 0);
}

ad::Var fuse(const AlignedFeatures& a, ad::Var w) {
  if (w.shape() != Shape{3}) throw ShapeError("fuse: weights must have shape [3]");
  const Shape& s = a.visual.shape();
  auto term = [&](std::size_t i, ad::Var f) { return ad::broadcast_to(ad::slice(w, 0, i, 1), s) * f; };
  return term(0, a.visual) + term(1, a.semantic) + term(2, a.spatial);
}

}  // namespace msfa::fusion
