#pragma once

#include <array>
#include <string>

#include "msfa/autodiff.hpp"
#include "msfa/rng.hpp"

// Multi-directional projection of the volume and attention-weighted fusion of the three views.
namespace msfa::visual {

// Axial averages over depth, coronal over height, sagittal over width.
enum class Direction { axial = 0, coronal = 1, sagittal = 2 };
inline constexpr Direction kDirections[] = {Direction::axial, Direction::coronal, Direction::sagittal};
const char* direction_name(Direction d);

// Mean-intensity projection of [C,D,H,W] along one axis, returned as a one-slice volume [C,1,A,B].
ad::Var mean_projection(ad::Var volume, Direction dir);

struct EncoderShape {
  std::size_t in_channels = 4;
  std::size_t hidden = 8;  // conv channels on the projected plane
  std::size_t pool = 4;    // plane pooled to pool x pool
  std::size_t out_dim = 128;
};

// relu(conv 1x3x3) -> adaptive average pool -> dense -> tanh.
struct PlaneEncoder {
  ad::ParamId conv_w, conv_b, dense_w, dense_b;
  EncoderShape shape;

  static PlaneEncoder create(ad::ParameterSet& params, const std::string& prefix, const EncoderShape& shape,
                             Rng& rng);
  ad::Var encode(ad::Graph& g, ad::Var plane) const;
};

// score_i = W_a . tanh(W_b F_i); alpha = softmax(scores); F = sum_i alpha_i F_i.
struct FusionAttention {
  ad::ParamId w_b;  // [d_a, d_v]
  ad::ParamId w_a;  // [d_a]

  static FusionAttention create(ad::ParameterSet& params, const std::string& prefix, std::size_t d_v,
                                std::size_t d_a, Rng& rng);
};

struct FusedView {
  ad::Var fused;                   // [d_v]
  ad::Var alpha;                   // [3]
  std::array<ad::Var, 3> per_dir;  // F^(i)
};

FusedView attention_fuse(ad::Graph& g, const FusionAttention& att, const std::array<ad::Var, 3>& views);

struct VisualBranch {
  std::array<PlaneEncoder, 3> encoders;
  FusionAttention attention;

  static VisualBranch create(ad::ParameterSet& params, const std::string& prefix, const EncoderShape& shape,
                             std::size_t d_a, Rng& rng);
  // F^(i) for one direction: projection followed by that direction's encoder.
  ad::Var project(ad::Graph& g, ad::Var volume, Direction dir) const;
  FusedView forward(ad::Graph& g, ad::Var volume) const;
};

}  // namespace msfa::visual
