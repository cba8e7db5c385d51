#include "msfa/loss.hpp"

#include <cmath>
#include <string>

#include "msfa/errors.hpp"

namespace msfa::loss {

void LossWeights::validate() const {
  const std::pair<const char*, double> fields[] = {{"loss.seg", seg},
                                                   {"loss.hierarchy", hierarchy},
                                                   {"loss.continuity", continuity},
                                                   {"loss.topology", topology},
                                                   {"loss.topology_shape", topology_params.shape},
                                                   {"loss.topology_boundary", topology_params.boundary}};
  for (const auto& [name, v] : fields) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError(std::string(name) + ": must be a finite value >= 0");
  }
}

ad::Var bce(ad::Var p, ad::Var gt) {
  if (p.shape() != gt.shape()) throw ShapeError("bce: shape mismatch");
  auto pc = ad::clamp(p, kBceClamp, 1.0 - kBceClamp);
  auto ll = gt * ad::log(pc) + (1.0 - gt) * ad::log(1.0 - pc);
  return -ad::mean(ll);
}

ad::Var soft_dice_loss(ad::Var p, ad::Var gt) {
  if (p.shape() != gt.shape()) throw ShapeError("soft_dice_loss: shape mismatch");
  auto num = ad::shift(ad::scale(ad::sum(p * gt), 2.0), kDiceSmooth);
  auto den = ad::shift(ad::sum(p) + ad::sum(gt), kDiceSmooth);
  return 1.0 - num / den;
}

LossTerms total_loss(const SegProbVars& p, const SegProbs& gt, ad::Var f_spatial, const LossWeights& w) {
  ad::Graph& g = p.wt.graph();
  LossTerms t;
  ad::Var bce_sum, dice_sum;
  for (Region r : kRegions) {
    if (p[r].shape() != gt[r].shape()) throw ShapeError("total_loss: prediction and target shapes differ");
    auto target = g.constant(gt[r]);
    auto b = bce(p[r], target);
    auto d = soft_dice_loss(p[r], target);
    bce_sum = bce_sum.valid() ? bce_sum + b : b;
    dice_sum = dice_sum.valid() ? dice_sum + d : d;
  }
  t.bce = ad::scale(bce_sum, 1.0 / 3.0);
  t.dice = ad::scale(dice_sum, 1.0 / 3.0);
  t.total = ad::scale(t.bce + t.dice, w.seg);
  if (w.hierarchy != 0.0) {
    t.hierarchy = constraints::hierarchy_loss(p);
    t.total = t.total + ad::scale(t.hierarchy, w.hierarchy);
  }
  if (w.continuity != 0.0 && f_spatial.valid()) {
    t.continuity = constraints::continuity_loss(f_spatial);
    t.total = t.total + ad::scale(t.continuity, w.continuity);
  }
  if (w.topology != 0.0) {
    t.topology = constraints::topology_loss(p.wt, w.topology_params).total;
    t.total = t.total + ad::scale(t.topology, w.topology);
  }
  return t;
}

}  // namespace msfa::loss
