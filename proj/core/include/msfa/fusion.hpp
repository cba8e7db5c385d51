#pragma once

#include <string>

#include "msfa/autodiff.hpp"
#include "msfa/rng.hpp"

// Alignment of the three branch outputs and gated convex fusion.
namespace msfa::fusion {

struct AlignedFeatures {
  ad::Var visual;    // [d_f]
  ad::Var semantic;  // [d_f]
  ad::Var spatial;   // [d_f]
};

// Per-branch linear projections to d_f; the spatial map is averaged over voxels first.
struct Aligner {
  ad::ParamId visual_w, visual_b, semantic_w, semantic_b, spatial_w, spatial_b;
  std::size_t d_f = 0;

  static Aligner create(ad::ParameterSet& params, const std::string& prefix, std::size_t d_v, std::size_t d_s,
                        std::size_t c_s, std::size_t d_f, Rng& rng);
  AlignedFeatures align(ad::Graph& g, ad::Var f_visual, ad::Var s_semantic, ad::Var f_spatial) const;
};

// Voxel mean per channel of a [C,D,H,W] map.
ad::Var global_average(ad::Var map);

// w = softmax(W_gate sigmoid(W_fusion [v; s; sp] + b_fusion)).
struct FusionGate {
  ad::ParamId fusion_w;  // [d_h, 3 d_f]
  ad::ParamId fusion_b;  // [d_h]
  ad::ParamId gate_w;    // [3, d_h]

  static FusionGate create(ad::ParameterSet& params, const std::string& prefix, std::size_t d_f, std::size_t d_h,
                           Rng& rng);
  ad::Var weights(ad::Graph& g, const AlignedFeatures& a) const;
};

// w_visual * visual + w_semantic * semantic + w_spatial * spatial.
ad::Var fuse(const AlignedFeatures& a, ad::Var w);

}  // namespace msfa::fusion
