#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "msfa/autodiff.hpp"
#include "msfa/rng.hpp"
#include "msfa/seg_probs.hpp"

// Spatial constraint losses (hierarchy, continuity, topology) and the spatial feature encoder.
namespace msfa::constraints {

// Mean over voxels of max(0, P_ET - P_TC) + max(0, P_TC - P_WT).
ad::Var hierarchy_loss(const SegProbVars& p);
double hierarchy_loss(const SegProbs& p);

// Squared feature differences over ordered 6-neighbour pairs, divided by the ordered pair count.
// Zero when the grid has no neighbour pairs.
ad::Var continuity_loss(ad::Var features);
double continuity_loss(const Tensor& features);

struct TopologyParams {
  double shape = 1.0;     // weight of the shape (1 - Dice) term
  double boundary = 0.1;  // weight of the gradient L1 term
};

// Largest 6-connected component of (mask >= 0.5), with enclosed background cavities filled.
// Returned as a 0/1 tensor of the input shape; empty when no voxel reaches 0.5.
Tensor topology_reference(const Tensor& mask);

struct TopologyTerms {
  ad::Var total;
  ad::Var shape_term;     // 1 - SoftDice(m, M_topology), 0 for an empty reference
  ad::Var boundary_term;  // sum |forward differences| / voxel count
};

// m: [D,H,W] in [0,1]. The reference mask is treated as a constant.
TopologyTerms topology_loss(ad::Var m, const TopologyParams& params);
double topology_loss(const Tensor& m, const TopologyParams& params);

// conv(4 -> c) -> relu -> conv(c -> c); output keeps the spatial extents.
struct SpatialEncoder {
  ad::ParamId conv1_w, conv1_b, conv2_w, conv2_b;
  std::size_t in_channels = 4;
  std::size_t channels = 8;

  static SpatialEncoder create(ad::ParameterSet& params, const std::string& prefix, std::size_t in_channels,
                               std::size_t channels, Rng& rng);
  ad::Var encode(ad::Graph& g, ad::Var volume) const;
};

}  // namespace msfa::constraints
