#pragma once

#include "msfa/autodiff.hpp"
#include "msfa/constraints.hpp"
#include "msfa/seg_probs.hpp"

namespace msfa::loss {

struct LossWeights {
  double seg = 1.0;
  double hierarchy = 1.0;
  double continuity = 0.01;
  double topology = 0.1;
  constraints::TopologyParams topology_params;

  void validate() const;
};

// Probabilities are clamped to [kBceClamp, 1 - kBceClamp] inside the cross-entropy.
inline constexpr double kBceClamp = 1e-7;
inline constexpr double kDiceSmooth = 1.0;

struct LossTerms {
  ad::Var total;
  ad::Var bce;         // mean over regions and voxels
  ad::Var dice;        // mean over regions of 1 - SoftDice
  ad::Var hierarchy;   // invalid when its weight is 0
  ad::Var continuity;  // invalid when its weight is 0 or f_spatial is absent
  ad::Var topology;    // on P_WT; invalid when its weight is 0
};

ad::Var bce(ad::Var p, ad::Var gt);
// 1 - (2 sum(p g) + s) / (sum p + sum g + s).
ad::Var soft_dice_loss(ad::Var p, ad::Var gt);

// seg * (bce + dice) + hierarchy * L_h + continuity * L_c(f_spatial) + topology * L_t(P_WT).
// f_spatial may be an invalid Var (no spatial stream).
LossTerms total_loss(const SegProbVars& p, const SegProbs& gt, ad::Var f_spatial, const LossWeights& w);

}  // namespace msfa::loss
