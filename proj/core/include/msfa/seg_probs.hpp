#pragma once

#include "msfa/autodiff.hpp"
#include "msfa/tensor.hpp"

namespace msfa {

// Region order used everywhere: WT, TC, ET.
enum class Region { wt = 0, tc = 1, et = 2 };
inline constexpr Region kRegions[] = {Region::wt, Region::tc, Region::et};
const char* region_name(Region r);

// Per-voxel probabilities of the three nested regions, each [D,H,W].
struct SegProbs {
  Tensor wt, tc, et;

  const Tensor& operator[](Region r) const;
  Tensor& operator[](Region r);
  // Stacks to [3,D,H,W] in WT, TC, ET order.
  Tensor stacked() const;
  static SegProbs from_stacked(const Tensor& probs);
};

// Differentiable counterpart living on a graph.
struct SegProbVars {
  ad::Var wt, tc, et;

  ad::Var operator[](Region r) const;
  static SegProbVars from_stacked(ad::Var probs);
  static SegProbVars constant(ad::Graph& g, const SegProbs& p);
};

}  // namespace msfa
