#pragma once

#include <optional>
#include <string>
#include <string_view>

#include "msfa/autodiff.hpp"
#include "msfa/biva.hpp"
#include "msfa/constraints.hpp"
#include "msfa/fusion.hpp"
#include "msfa/rng.hpp"
#include "msfa/seg_probs.hpp"
#include "msfa/semantic.hpp"
#include "msfa/visual.hpp"

// Visual, semantic and spatial branches -> gated fusion -> bidirectional interaction -> 3D decoder.
namespace msfa::model {

enum class Variant { full, no_semantic, no_spatial, uni_s2v, uni_v2s };
inline constexpr Variant kVariants[] = {Variant::full, Variant::no_semantic, Variant::no_spatial, Variant::uni_s2v,
                                        Variant::uni_v2s};
const char* variant_name(Variant v);
std::optional<Variant> parse_variant(std::string_view name);

struct ModelConfig {
  std::size_t in_channels = 4;
  std::size_t d_s = 64;   // semantic width
  std::size_t d_v = 128;  // per-view visual width
  std::size_t d_a = 64;   // view attention width
  std::size_t d_f = 128;  // aligned width
  std::size_t d_h = 64;   // fusion gate hidden width
  std::size_t c_s = 8;    // spatial feature channels
  std::size_t plane_hidden = 8;
  std::size_t plane_pool = 4;
  std::size_t biva_channels = 4;
  std::size_t biva_hidden = 64;
  std::size_t cond_channels = 4;  // fused vector projected to this many decoder channels
  std::size_t decoder_hidden = 8;
};

struct Decoder {
  ad::ParamId cond_w, cond_b;  // [cond, d_f], [cond]
  ad::ParamId conv1_w, conv1_b, conv2_w, conv2_b, conv3_w, conv3_b;
  std::size_t in_channels = 0;
};

struct Model {
  ModelConfig config;
  Variant variant = Variant::full;
  semantic::Vocab vocab;
  ad::ParameterSet params;

  semantic::TextEncoder text;
  visual::VisualBranch visual;
  constraints::SpatialEncoder spatial;
  fusion::Aligner aligner;
  fusion::FusionGate gate;
  ad::ParamId stem_w, stem_b;  // volume -> BIVA feature map F0
  biva::BivaWeights biva;
  Decoder decoder;

  // Parameter names and initial values are a pure function of (config, variant, vocab, seed).
  static Model create(const ModelConfig& config, Variant variant, semantic::Vocab vocab, std::uint64_t seed);

  bool uses_spatial() const noexcept { return variant != Variant::no_spatial; }
  bool uses_text() const noexcept { return variant != Variant::no_semantic; }
  biva::InteractionMode interaction_mode() const noexcept;
};

struct ForwardOptions {
  double dropout = 0.0;      // on the fused vector; 0 disables
  Rng* dropout_rng = nullptr;
};

struct ForwardResult {
  ad::Var probs;      // [3, D, H, W]
  SegProbVars regions;
  ad::Var f_spatial;  // invalid for no_spatial
  visual::FusedView view;
  ad::Var fusion_weights;  // [3]
  ad::Var fused;           // [d_f]
  biva::InteractResult interaction;
};

ForwardResult forward(ad::Graph& g, const Model& m, const Tensor& volume, std::string_view text,
                      const biva::BivaParams& biva_params, const ForwardOptions& options = {});

// Eval-mode prediction on a fresh graph.
SegProbs predict(const Model& m, const Tensor& volume, std::string_view text, const biva::BivaParams& biva_params,
                 ad::Precision precision = ad::Precision::f64);

}  // namespace msfa::model
