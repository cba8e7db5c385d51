#include "msfa/visual.hpp"

#include "init.hpp"
#include "msfa/errors.hpp"

namespace msfa::visual {

const char* direction_name(Direction d) {
  switch (d) {
    case Direction::axial:
      return "axial";
    case Direction::coronal:
      return "coronal";
    case Direction::sagittal:
      return "sagittal";
  }
  return "?";
}

ad::Var mean_projection(ad::Var volume, Direction dir) {
  const Shape& s = volume.shape();
  if (s.size() != 4) throw ShapeError("projection expects a [C,D,H,W] volume, got " + shape_str(s));
  for (auto e : s) {
    if (e == 0) throw ShapeError("projection: extents must be positive");
  }
  const auto axis = static_cast<std::size_t>(dir) + 1;
  auto plane = ad::mean_axis(volume, axis);
  const Shape& p = plane.shape();
  return ad::reshape(plane, {p[0], 1, p[1], p[2]});
}

PlaneEncoder PlaneEncoder::create(ad::ParameterSet& params, const std::string& prefix, const EncoderShape& shape,
                                  Rng& rng) {
  PlaneEncoder e;
  e.shape = shape;
  const std::size_t fan_conv = shape.in_channels * 9;
  e.conv_w = params.add(prefix + ".conv.w",
                        detail::he_uniform({shape.hidden, shape.in_channels, 1, 3, 3}, fan_conv, rng));
  e.conv_b = params.add(prefix + ".conv.b", Tensor(Shape{shape.hidden}));
  const std::size_t flat = shape.hidden * shape.pool * shape.pool;
  e.dense_w = params.add(prefix + ".dense.w", detail::xavier_uniform({shape.out_dim, flat}, flat, shape.out_dim, rng));
  e.dense_b = params.add(prefix + ".dense.b", Tensor(Shape{shape.out_dim}));
  return e;
}

ad::Var PlaneEncoder::encode(ad::Graph& g, ad::Var plane) const {
  auto h = ad::relu(ad::conv3d(plane, g.param(conv_w), g.param(conv_b)));
  auto pooled = ad::adaptive_avg_pool3d(h, 1, shape.pool, shape.pool);
  auto flat = ad::reshape(pooled, {shape.hidden * shape.pool * shape.pool});
  return ad::tanh(ad::matmul(g.param(dense_w), flat) + g.param(dense_b));
}

FusionAttention FusionAttention::create(ad::ParameterSet& params, const std::string& prefix, std::size_t d_v,
                                        std::size_t d_a, Rng& rng) {
  FusionAttention a;
  a.w_b = params.add(prefix + ".w_b", detail::xavier_uniform({d_a, d_v}, d_v, d_a, rng));
  a.w_a = params.add(prefix + ".w_a", detail::xavier_uniform({d_a}, d_a, 1, rng));
  return a;
}

FusedView attention_fuse(ad::Graph& g, const FusionAttention& att, const std::array<ad::Var, 3>& views) {
  const Shape& s = views[0].shape();
  if (s.size() != 1 || views[1].shape() != s || views[2].shape() != s) {
    throw ShapeError("attention_fuse: views must be equal-length vectors");
  }
  auto wb = g.param(att.w_b);
  auto wa = g.param(att.w_a);
  const std::size_t d_a = wa.shape()[0];
  auto wa_row = ad::reshape(wa, {1, d_a});
  std::array<ad::Var, 3> scores;
  for (int i = 0; i < 3; ++i) scores[i] = ad::matmul(wa_row, ad::tanh(ad::matmul(wb, views[i])));
  auto alpha = ad::softmax(ad::concat(std::span<const ad::Var>(scores), 0), 0);
  ad::Var fused;
  for (std::size_t i = 0; i < 3; ++i) {
    auto term = ad::broadcast_to(ad::slice(alpha, 0, i, 1), s) * views[i];
    fused = i == 0 ? term : fused + term;
  }
  return FusedView{fused, alpha, views};
}

VisualBranch VisualBranch::create(ad::ParameterSet& params, const std::string& prefix, const EncoderShape& shape,
                                  std::size_t d_a, Rng& rng) {
  VisualBranch b;
  for (auto d : kDirections) {
    b.encoders[static_cast<int>(d)] =
        PlaneEncoder::create(params, prefix + "." + direction_name(d), shape, rng);
  }
  b.attention = FusionAttention::create(params, prefix + ".attention", shape.out_dim, d_a, rng);
  return b;
}

ad::Var VisualBranch::project(ad::Graph& g, ad::Var volume, Direction dir) const {
  return encoders[static_cast<int>(dir)].encode(g, mean_projection(volume, dir));
}

FusedView VisualBranch::forward(ad::Graph& g, ad::Var volume) const {
  std::array<ad::Var, 3> views;
  for (auto d : kDirections) views[static_cast<int>(d)] = project(g, volume, d);
  return attention_fuse(g, attention, views);
}

}  // namespace msfa::visual
