#include "msfa/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string_view>

#include "msfa/errors.hpp"

namespace msfa::ad {
namespace {

// Gradient norms below this are treated as zero.
constexpr double kRelErrFloor = 1e-10;
// A coordinate whose perturbation changes a branch is retried with a quarter of the step, at most this
// many times, and skipped if it still changes one.
constexpr int kMaxShrink = 5;

using Pattern = std::vector<std::uint32_t>;

// Relu input signs plus every recorded branch choice.
Pattern branch_pattern(const Graph& g) {
  Pattern p;
  for (std::uint32_t id = 0; id < g.node_count(); ++id) {
    const auto& b = g.branch(id);
    p.insert(p.end(), b.begin(), b.end());
    if (std::string_view(g.op_name(id)) != "relu") continue;
    for (double v : g.value(g.inputs(id)[0]).data()) p.push_back(v > 0.0);
  }
  return p;
}

struct Eval {
  double loss;
  Pattern pattern;
};

Eval evaluate(ParameterSet& params, const LossBuilder& build) {
  Graph g(&params, Precision::f64);
  const double v = build(g).value().item();
  if (!std::isfinite(v)) throw AnomalyError("finite_diff_check", -1, "non-finite loss under perturbation");
  return {v, branch_pattern(g)};
}

std::vector<std::size_t> pick_coords(std::size_t n, const GradCheckOptions& opt, std::uint32_t salt) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (opt.max_coords == 0 || opt.max_coords >= n) return idx;
  std::mt19937_64 rng(opt.seed * 0x9E3779B97F4A7C15ULL + salt);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(opt.max_coords);
  std::sort(idx.begin(), idx.end());
  return idx;
}

GradCheckReport check_against(ParameterSet& params, const LossBuilder& build, const Gradients& analytic,
                              const Pattern& base, ParamId param, double tolerance, const GradCheckOptions& opt) {
  GradCheckReport rep;
  Tensor& value = params.value(param);
  const auto& grad = analytic.at(param.index);
  double diff2 = 0.0, a2 = 0.0, fd2 = 0.0, worst = -1.0;
  for (std::size_t i : pick_coords(value.size(), opt, param.index)) {
    const double orig = value[i];
    double h = opt.step;
    bool smooth = false;
    double fd = 0.0;
    for (int attempt = 0; attempt <= kMaxShrink && !smooth; ++attempt, h /= 4.0) {
      Eval e[4];
      const double offsets[4] = {-2.0 * h, -h, h, 2.0 * h};
      smooth = true;
      for (int k = 0; k < 4; ++k) {
        value[i] = orig + offsets[k];
        e[k] = evaluate(params, build);
        smooth = smooth && e[k].pattern == base;
      }
      value[i] = orig;
      fd = (8.0 * (e[2].loss - e[1].loss) - (e[3].loss - e[0].loss)) / (12.0 * h);
    }
    if (!smooth) {
      ++rep.coords_skipped;
      continue;
    }
    const double a = grad[i];
    diff2 += (a - fd) * (a - fd);
    a2 += a * a;
    fd2 += fd * fd;
    if (std::abs(a - fd) > worst) {
      worst = std::abs(a - fd);
      rep.worst_index = i;
    }
    ++rep.coords_checked;
  }
  rep.worst_param = params.name(param);
  rep.max_rel_err = std::sqrt(diff2) / std::max({std::sqrt(a2), std::sqrt(fd2), kRelErrFloor});
  rep.pass = rep.max_rel_err < tolerance;
  return rep;
}

struct Analytic {
  Gradients grads;
  Pattern pattern;
};

Analytic analytic_gradients(ParameterSet& params, const LossBuilder& build) {
  Graph g(&params, Precision::f64);
  Var loss = build(g);
  Analytic out{g.backward(loss), branch_pattern(g)};
  return out;
}

}  // namespace

GradCheckReport finite_diff_check(ParameterSet& params, const LossBuilder& build, ParamId param, double tolerance,
                                  const GradCheckOptions& options) {
  if (param.index >= params.size()) throw ValueError("finite_diff_check: unknown parameter");
  const auto analytic = analytic_gradients(params, build);
  return check_against(params, build, analytic.grads, analytic.pattern, param, tolerance, options);
}

GradCheckReport finite_diff_check_all(ParameterSet& params, const LossBuilder& build, double tolerance,
                                      const GradCheckOptions& options) {
  const auto analytic = analytic_gradients(params, build);
  GradCheckReport total;
  for (std::uint32_t p = 0; p < params.size(); ++p) {
    auto rep = check_against(params, build, analytic.grads, analytic.pattern, ParamId{p}, tolerance, options);
    total.coords_checked += rep.coords_checked;
    total.coords_skipped += rep.coords_skipped;
    if (rep.coords_checked > 0 && (rep.max_rel_err > total.max_rel_err || total.worst_param.empty())) {
      total.max_rel_err = rep.max_rel_err;
      total.worst_param = rep.worst_param;
      total.worst_index = rep.worst_index;
    }
  }
  total.pass = total.max_rel_err < tolerance;
  return total;
}

}  // namespace msfa::ad
