#include "msfa/model.hpp"

#include "init.hpp"
#include "msfa/errors.hpp"

namespace msfa::model {

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::no_semantic: return "no_semantic";
    case Variant::no_spatial: return "no_spatial";
    case Variant::uni_s2v: return "uni_s2v";
    case Variant::uni_v2s: return "uni_v2s";
  }
  return "?";
}

std::optional<Variant> parse_variant(std::string_view name) {
  for (Variant v : kVariants) {
    if (name == variant_name(v)) return v;
  }
  return std::nullopt;
}

biva::InteractionMode Model::interaction_mode() const noexcept {
  biva::InteractionMode mode;
  mode.semantic_to_visual = variant != Variant::uni_v2s;
  mode.visual_to_semantic = variant != Variant::uni_s2v;
  return mode;
}

Model Model::create(const ModelConfig& c, Variant variant, semantic::Vocab vocab, std::uint64_t seed) {
  Model m;
  m.config = c;
  m.variant = variant;
  m.vocab = std::move(vocab);
  Rng rng(derive_seed(seed, 0x4d4f44454cULL));
  auto& p = m.params;

  m.text = semantic::TextEncoder::create(p, "semantic.text", m.vocab.size(), c.d_s, rng);
  visual::EncoderShape es{c.in_channels, c.plane_hidden, c.plane_pool, c.d_v};
  m.visual = visual::VisualBranch::create(p, "visual", es, c.d_a, rng);
  m.spatial = constraints::SpatialEncoder::create(p, "spatial", c.in_channels, c.c_s, rng);
  m.aligner = fusion::Aligner::create(p, "fusion.align", c.d_v, c.d_s, c.c_s, c.d_f, rng);
  m.gate = fusion::FusionGate::create(p, "fusion.gate", c.d_f, c.d_h, rng);

  const std::size_t bc = c.biva_channels;
  m.stem_w = p.add("biva.stem.w", detail::he_uniform({bc, c.in_channels, 3, 3, 3}, c.in_channels * 27, rng));
  m.stem_b = p.add("biva.stem.b", Tensor(Shape{bc}));
  m.biva = biva::BivaWeights::create(p, "biva", bc, c.d_s, c.biva_hidden, rng);

  auto& d = m.decoder;
  d.in_channels = (m.uses_spatial() ? c.c_s : 0) + c.cond_channels + bc;
  const std::size_t h = c.decoder_hidden;
  d.cond_w = p.add("decoder.cond.w", detail::xavier_uniform({c.cond_channels, c.d_f}, c.d_f, c.cond_channels, rng));
  d.cond_b = p.add("decoder.cond.b", Tensor(Shape{c.cond_channels}));
  d.conv1_w = p.add("decoder.conv1.w", detail::he_uniform({h, d.in_channels, 3, 3, 3}, d.in_channels * 27, rng));
  d.conv1_b = p.add("decoder.conv1.b", Tensor(Shape{h}));
  d.conv2_w = p.add("decoder.conv2.w", detail::he_uniform({h, h, 3, 3, 3}, h * 27, rng));
  d.conv2_b = p.add("decoder.conv2.b", Tensor(Shape{h}));
  d.conv3_w = p.add("decoder.conv3.w", detail::xavier_uniform({3, h, 3, 3, 3}, h * 27, 3 * 27, rng));
  d.conv3_b = p.add("decoder.conv3.b", Tensor(Shape{3}));
  return m;
}

ForwardResult forward(ad::Graph& g, const Model& m, const Tensor& volume, std::string_view text,
                      const biva::BivaParams& biva_params, const ForwardOptions& options) {
  const auto& c = m.config;
  if (volume.rank() != 4 || volume.dim(0) != c.in_channels) {
    throw ShapeError("forward expects a volume [" + std::to_string(c.in_channels) + ",D,H,W], got " +
                     shape_str(volume.shape()));
  }
  const Shape& vs = volume.shape();
  ForwardResult r;
  auto x = g.constant(volume);

  ad::Var s_text;
  if (m.uses_text()) {
    const auto ids = semantic::tokenize(m.vocab, text);
    s_text = m.text.encode(g, ids);
  } else {
    s_text = g.constant(Tensor(Shape{c.d_s}));
  }

  r.view = m.visual.forward(g, x);

  ad::Var spatial_for_fusion;
  if (m.uses_spatial()) {
    r.f_spatial = m.spatial.encode(g, x);
    spatial_for_fusion = r.f_spatial;
  } else {
    spatial_for_fusion = g.constant(Tensor(Shape{c.c_s, 1, 1, 1}));
  }

  auto aligned = m.aligner.align(g, r.view.fused, s_text, spatial_for_fusion);
  r.fusion_weights = m.gate.weights(g, aligned);
  r.fused = fusion::fuse(aligned, r.fusion_weights);
  if (options.dropout > 0.0 && options.dropout_rng != nullptr) {
    Tensor mask(r.fused.shape());
    std::bernoulli_distribution keep(1.0 - options.dropout);
    const double inv = 1.0 / (1.0 - options.dropout);
    for (auto& v : mask.data()) v = keep(*options.dropout_rng) ? inv : 0.0;
    r.fused = r.fused * g.constant(std::move(mask));
  }

  auto f0 = ad::relu(ad::conv3d(x, g.param(m.stem_w), g.param(m.stem_b)));
  r.interaction = biva::interact(g, m.biva, f0, s_text, biva_params, m.interaction_mode());

  const auto& d = m.decoder;
  auto cond = ad::matmul(g.param(d.cond_w), r.fused) + g.param(d.cond_b);
  const Shape cond_shape{c.cond_channels, vs[1], vs[2], vs[3]};
  auto cond_map = ad::broadcast_to(ad::reshape(cond, {c.cond_channels, 1, 1, 1}), cond_shape);

  std::vector<ad::Var> parts;
  if (m.uses_spatial()) parts.push_back(r.f_spatial);
  parts.push_back(cond_map);
  parts.push_back(r.interaction.features);
  auto h = ad::concat(parts, 0);
  h = ad::relu(ad::conv3d(h, g.param(d.conv1_w), g.param(d.conv1_b)));
  h = ad::relu(ad::conv3d(h, g.param(d.conv2_w), g.param(d.conv2_b)));
  r.probs = ad::sigmoid(ad::conv3d(h, g.param(d.conv3_w), g.param(d.conv3_b)));
  r.regions = SegProbVars::from_stacked(r.probs);
  return r;
}

SegProbs predict(const Model& m, const Tensor& volume, std::string_view text, const biva::BivaParams& biva_params,
                 ad::Precision precision) {
  ad::Graph g(&m.params, precision);
  auto r = forward(g, m, volume, text, biva_params);
  return SegProbs::from_stacked(r.probs.value());
}

}  // namespace msfa::model
