#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "msfa/autodiff.hpp"

namespace msfa::ad {

// Builds a scalar loss on a fresh graph. Called repeatedly with perturbed parameters.
using LossBuilder = std::function<Var(Graph&)>;

struct GradCheckOptions {
  double step = 1e-3;
  // Coordinates sampled per parameter; 0 checks every coordinate.
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  bool pass = true;
  std::size_t coords_checked = 0;
  // Coordinates whose perturbation changed a branch even at the smallest retried step.
  std::size_t coords_skipped = 0;
  std::string worst_param;  // name of the parameter holding the worst coordinate
  std::size_t worst_index = 0;  // coordinate with the largest absolute disagreement
};

// Five-point central-difference check of the analytic gradient of one parameter tensor.
// Relative error is ||analytic - fd|| / max(||analytic||, ||fd||, 1e-10) over the checked coordinates.
// A perturbation that flips a relu input sign or another recorded branch (Graph::branch) is retried
// with a quarter of the step, up to 5 times, and the coordinate is skipped if it still does.
// Always evaluates in 64-bit regardless of the graph precision used elsewhere.
GradCheckReport finite_diff_check(ParameterSet& params, const LossBuilder& build, ParamId param, double tolerance,
                                  const GradCheckOptions& options = {});

// Checks every parameter tensor; the report carries the worst tensor.
GradCheckReport finite_diff_check_all(ParameterSet& params, const LossBuilder& build, double tolerance,
                                      const GradCheckOptions& options = {});

}  // namespace msfa::ad
