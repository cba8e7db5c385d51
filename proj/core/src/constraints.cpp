#include "msfa/constraints.hpp"

#include <algorithm>
#include <array>
#include <queue>

#include "init.hpp"
#include "msfa/errors.hpp"

namespace msfa::constraints {
namespace {

ad::Var forward_difference(ad::Var x, std::size_t axis) {
  const std::size_t n = x.shape()[axis];
  return ad::slice(x, axis, 1, n - 1) - ad::slice(x, axis, 0, n - 1);
}

ad::Var abs(ad::Var x) { return ad::relu(x) + ad::relu(-x); }

template <typename F>
double eval_scalar(F&& build) {
  ad::Graph g;
  return build(g).value().item();
}

}  // namespace

ad::Var hierarchy_loss(const SegProbVars& p) {
  if (p.wt.shape() != p.tc.shape() || p.wt.shape() != p.et.shape()) {
    throw ShapeError("hierarchy_loss: WT/TC/ET maps differ in shape");
  }
  auto violation = ad::relu(p.et - p.tc) + ad::relu(p.tc - p.wt);
  return ad::mean(violation);
}

double hierarchy_loss(const SegProbs& p) {
  return eval_scalar([&](ad::Graph& g) { return hierarchy_loss(SegProbVars::constant(g, p)); });
}

ad::Var continuity_loss(ad::Var f) {
  const Shape& s = f.shape();
  if (s.size() != 4) throw ShapeError("continuity_loss expects [C,D,H,W], got " + shape_str(s));
  for (auto e : s) {
    if (e < 1) throw ShapeError("continuity_loss: extents must be >= 1");
  }
  const std::size_t voxels = s[1] * s[2] * s[3];
  ad::Var total;
  std::size_t pairs = 0;
  for (std::size_t axis = 1; axis <= 3; ++axis) {
    if (s[axis] < 2) continue;
    auto d = forward_difference(f, axis);
    auto sq = ad::sum(d * d);
    total = total.valid() ? total + sq : sq;
    pairs += voxels / s[axis] * (s[axis] - 1);
  }
  if (!total.valid()) return f.graph().constant(Tensor::scalar(0.0));
  // Ordered pairs double both the sum and the count, so the unordered ratio is identical.
  return ad::scale(total, 1.0 / static_cast<double>(pairs));
}

double continuity_loss(const Tensor& features) {
  return eval_scalar([&](ad::Graph& g) { return continuity_loss(g.constant(features)); });
}

Tensor topology_reference(const Tensor& mask) {
  if (mask.rank() != 3) throw ShapeError("topology_reference expects [D,H,W]");
  const std::size_t D = mask.dim(0), H = mask.dim(1), W = mask.dim(2);
  const std::size_t n = mask.size();
  std::vector<std::int32_t> comp(n, -1);
  std::vector<std::size_t> sizes;
  std::queue<std::size_t> q;
  auto neighbours = [&](std::size_t i, auto&& visit) {
    const std::size_t x = i % W, y = (i / W) % H, z = i / (W * H);
    if (x > 0) visit(i - 1);
    if (x + 1 < W) visit(i + 1);
    if (y > 0) visit(i - W);
    if (y + 1 < H) visit(i + W);
    if (z > 0) visit(i - W * H);
    if (z + 1 < D) visit(i + W * H);
  };
  for (std::size_t s = 0; s < n; ++s) {
    if (mask[s] < 0.5 || comp[s] >= 0) continue;
    const auto id = static_cast<std::int32_t>(sizes.size());
    std::size_t count = 0;
    comp[s] = id;
    q.push(s);
    while (!q.empty()) {
      const std::size_t i = q.front();
      q.pop();
      ++count;
      neighbours(i, [&](std::size_t j) {
        if (mask[j] >= 0.5 && comp[j] < 0) {
          comp[j] = id;
          q.push(j);
        }
      });
    }
    sizes.push_back(count);
  }
  Tensor out = Tensor::like(mask);
  if (sizes.empty()) return out;
  // first component wins ties
  const auto best = static_cast<std::int32_t>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
  for (std::size_t i = 0; i < n; ++i) out[i] = comp[i] == best ? 1.0 : 0.0;

  // Background reachable from the grid border stays background; everything else is a cavity.
  std::vector<char> outside(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t x = i % W, y = (i / W) % H, z = i / (W * H);
    const bool border = x == 0 || y == 0 || z == 0 || x + 1 == W || y + 1 == H || z + 1 == D;
    if (border && out[i] == 0.0) {
      outside[i] = 1;
      q.push(i);
    }
  }
  while (!q.empty()) {
    const std::size_t i = q.front();
    q.pop();
    neighbours(i, [&](std::size_t j) {
      if (!outside[j] && out[j] == 0.0) {
        outside[j] = 1;
        q.push(j);
      }
    });
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!outside[i]) out[i] = 1.0;
  }
  return out;
}

TopologyTerms topology_loss(ad::Var m, const TopologyParams& params) {
  const Shape& s = m.shape();
  if (s.size() != 3) throw ShapeError("topology_loss expects [D,H,W], got " + shape_str(s));
  ad::Graph& g = m.graph();
  const Tensor ref = topology_reference(m.value());
  double ref_sum = 0.0;
  for (double v : ref.data()) ref_sum += v;

  ad::Var shape_term;
  if (ref_sum == 0.0) {
    shape_term = g.constant(Tensor::scalar(0.0));
  } else {
    auto inter = ad::sum(m * g.constant(ref));
    auto denom = ad::shift(ad::sum(m), ref_sum);
    shape_term = 1.0 - ad::scale(inter, 2.0) / denom;
  }

  ad::Var grad_l1;
  for (std::size_t axis = 0; axis < 3; ++axis) {
    if (s[axis] < 2) continue;
    auto t = ad::sum(abs(forward_difference(m, axis)));
    grad_l1 = grad_l1.valid() ? grad_l1 + t : t;
  }
  ad::Var boundary_term = grad_l1.valid() ? ad::scale(grad_l1, 1.0 / static_cast<double>(m.size()))
                                          : g.constant(Tensor::scalar(0.0));
  // The reference mask is a discrete function of m; record it so perturbation checks can see it change.
  std::vector<std::uint32_t> ref_bits(ref.size());
  for (std::size_t i = 0; i < ref.size(); ++i) ref_bits[i] = ref[i] != 0.0;
  g.set_branch(shape_term.id(), std::move(ref_bits));
  auto total = ad::scale(shape_term, params.shape) + ad::scale(boundary_term, params.boundary);
  return TopologyTerms{total, shape_term, boundary_term};
}

double topology_loss(const Tensor& m, const TopologyParams& params) {
  return eval_scalar([&](ad::Graph& g) { return topology_loss(g.constant(m), params).total; });
}

SpatialEncoder SpatialEncoder::create(ad::ParameterSet& params, const std::string& prefix, std::size_t in_channels,
                                      std::size_t channels, Rng& rng) {
  SpatialEncoder e;
  e.in_channels = in_channels;
  e.channels = channels;
  e.conv1_w = params.add(prefix + ".conv1.w",
                         detail::he_uniform({channels, in_channels, 3, 3, 3}, in_channels * 27, rng));
  e.conv1_b = params.add(prefix + ".conv1.b", Tensor(Shape{channels}));
  e.conv2_w = params.add(prefix + ".conv2.w",
                         detail::xavier_uniform({channels, channels, 3, 3, 3}, channels * 27, channels * 27, rng));
  e.conv2_b = params.add(prefix + ".conv2.b", Tensor(Shape{channels}));
  return e;
}

ad::Var SpatialEncoder::encode(ad::Graph& g, ad::Var volume) const {
  if (volume.shape().size() != 4) throw ShapeError("encode_spatial expects [C,D,H,W]");
  auto h = ad::relu(ad::conv3d(volume, g.param(conv1_w), g.param(conv1_b)));
  return ad::conv3d(h, g.param(conv2_w), g.param(conv2_b));
}

}  // namespace msfa::constraints
