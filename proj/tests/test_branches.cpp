#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "msfa/errors.hpp"
#include "msfa/fusion.hpp"
#include "msfa/gradcheck.hpp"
#include "msfa/rng.hpp"
#include "msfa/semantic.hpp"
#include "msfa/visual.hpp"

using namespace msfa;
using ad::Graph;
using ad::ParameterSet;

namespace {

Tensor identity(std::size_t n) {
  Tensor t(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i) t.at({i, i}) = 1.0;
  return t;
}

std::vector<double> matvec(const Tensor& m, const Tensor& v) {
  std::vector<double> out(m.dim(0), 0.0);
  for (std::size_t r = 0; r < m.dim(0); ++r)
    for (std::size_t c = 0; c < m.dim(1); ++c) out[r] += m.at({r, c}) * v[c];
  return out;
}

}  // namespace

TEST_SUITE("semantic") {

TEST_CASE("tokenize normalizes and maps unknown words to UNK") {
  const std::vector<std::string> corpus{"large left lesion", "small right mass"};
  auto vocab = semantic::Vocab::build(corpus);
  auto ids = semantic::tokenize(vocab, "Large LEFT lesion.");
  REQUIRE(ids.size() == 3);
  CHECK(ids[0] == vocab.id("large"));
  CHECK(ids[1] == vocab.id("left"));
  CHECK(ids[2] == vocab.id("lesion"));
  CHECK(semantic::tokenize(vocab, "").empty());
  auto unk = semantic::tokenize(vocab, "zzzqx lesion");
  CHECK(unk == std::vector<std::uint32_t>{semantic::kUnk, vocab.id("lesion")});
  // normalized text is a fixed point of normalization
  auto norm = semantic::normalize("MRI shows, a LARGE mass!");
  std::string joined;
  for (const auto& t : norm) joined += t + " ";
  CHECK(semantic::normalize(joined) == norm);
}

TEST_CASE("vocab is sorted, 1-based and serializes") {
  const std::vector<std::string> corpus{"b a c", "a d"};
  auto vocab = semantic::Vocab::build(corpus);
  CHECK(vocab.tokens() == std::vector<std::string>{"a", "b", "c", "d"});
  CHECK(vocab.id("a") == 1);
  CHECK(vocab.size() == 5);
  CHECK(vocab.serialize() == "a\nb\nc\nd\n");
  CHECK(semantic::Vocab::deserialize(vocab.serialize()) == vocab);
  CHECK_THROWS_AS(semantic::Vocab::deserialize("b\na\n"), FormatError);
}

TEST_CASE("encode_text: empty input, closed form, permutation invariance") {
  Rng rng(1);
  ParameterSet p;
  auto enc = semantic::TextEncoder::create(p, "t", 6, 5, rng);
  Graph g(&p);
  CHECK(enc.encode(g, {}).value() == Tensor(Shape{5}));

  p.value(enc.weight) = identity(5);
  Graph g2(&p);
  const std::vector<std::uint32_t> one{3};
  auto s = enc.encode(g2, one).value();
  for (std::size_t i = 0; i < 5; ++i) CHECK(s[i] == doctest::Approx(std::tanh(p.value(enc.embedding).at({3, i}))));

  const std::vector<std::uint32_t> a{1, 4, 2, 4}, b{4, 2, 4, 1};
  Graph g3(&p);
  CHECK(bit_identical(enc.encode(g3, a).value(), enc.encode(g3, b).value()));
}

TEST_CASE("decouple: zero, identity, oracle, linearity") {
  Rng rng(2);
  ParameterSet p;
  auto dec = semantic::RegionDecoupler::create(p, "d", 6, rng);
  const Tensor s = uniform_tensor({6}, -1, 1, rng);
  Graph g(&p);
  for (auto& r : dec.decouple(g, g.constant(Tensor(Shape{6})))) CHECK(r.value() == Tensor(Shape{6}));
  auto out = dec.decouple(g, g.constant(s));
  for (int r = 0; r < 3; ++r) {
    auto ref = matvec(p.value(dec.weight[r]), s);
    for (std::size_t i = 0; i < 6; ++i) CHECK(out[r].value()[i] == doctest::Approx(ref[i]).epsilon(1e-14));
  }
  Tensor s3 = s;
  for (auto& v : s3.data()) v *= 3.0;
  auto out3 = dec.decouple(g, g.constant(s3));
  for (int r = 0; r < 3; ++r)
    for (std::size_t i = 0; i < 6; ++i) CHECK(out3[r].value()[i] == doctest::Approx(3.0 * out[r].value()[i]));
  for (int r = 0; r < 3; ++r) p.value(dec.weight[r]) = identity(6);
  Graph g2(&p);
  for (auto& v : dec.decouple(g2, g2.constant(s))) CHECK(v.value() == s);
}

}  // TEST_SUITE

TEST_SUITE("visual") {

TEST_CASE("axial projection equals the per-pixel depth average") {
  Rng rng(3);
  const Tensor vol = uniform_tensor({2, 5, 4, 3}, 0, 1, rng);
  Graph g;
  auto proj = visual::mean_projection(g.constant(vol), visual::Direction::axial).value();
  REQUIRE(proj.shape() == Shape{2, 1, 4, 3});
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t y = 0; y < 4; ++y)
      for (std::size_t x = 0; x < 3; ++x) {
        double s = 0;
        for (std::size_t z = 0; z < 5; ++z) s += vol.at({c, z, y, x});
        CHECK(proj.at({c, 0, y, x}) == doctest::Approx(s / 5).epsilon(1e-14));
      }
  CHECK_THROWS_AS(visual::mean_projection(g.constant(Tensor(Shape{2, 3, 3})), visual::Direction::axial), ShapeError);
}

TEST_CASE("constant and symmetric volumes") {
  Graph g;
  auto proj = visual::mean_projection(g.constant(Tensor(Shape{1, 3, 4, 5}, 0.7)), visual::Direction::coronal).value();
  for (double v : proj.data()) CHECK(v == doctest::Approx(0.7));
  // symmetric under swapping D and H
  Rng rng(4);
  Tensor vol(Shape{1, 4, 4, 4});
  for (std::size_t z = 0; z < 4; ++z)
    for (std::size_t y = z; y < 4; ++y)
      for (std::size_t x = 0; x < 4; ++x) vol.at({0, z, y, x}) = vol.at({0, y, z, x}) = uniform_tensor({1}, 0, 1, rng)[0];
  auto ax = visual::mean_projection(g.constant(vol), visual::Direction::axial).value();
  auto co = visual::mean_projection(g.constant(vol), visual::Direction::coronal).value();
  CHECK(max_abs_diff(ax, co) < 1e-15);
}

TEST_CASE("attention_fuse: equal views, permutation, oracle") {
  Rng rng(5);
  ParameterSet p;
  auto att = visual::FusionAttention::create(p, "a", 6, 4, rng);
  p.value(att.w_a) = uniform_tensor({4}, -2, 2, rng);
  Graph g(&p);
  const Tensor f = uniform_tensor({6}, -1, 1, rng);
  auto same = visual::attention_fuse(g, att, {g.constant(f), g.constant(f), g.constant(f)});
  for (double a : same.alpha.value().data()) CHECK(a == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(max_abs_diff(same.fused.value(), f) < 1e-15);

  const Tensor f1 = uniform_tensor({6}, -1, 1, rng), f2 = uniform_tensor({6}, -1, 1, rng),
               f3 = uniform_tensor({6}, -1, 1, rng);
  auto r = visual::attention_fuse(g, att, {g.constant(f1), g.constant(f2), g.constant(f3)});
  auto q = visual::attention_fuse(g, att, {g.constant(f3), g.constant(f1), g.constant(f2)});
  CHECK(q.alpha.value()[0] == doctest::Approx(r.alpha.value()[2]).epsilon(1e-14));
  CHECK(q.alpha.value()[1] == doctest::Approx(r.alpha.value()[0]).epsilon(1e-14));
  CHECK(max_abs_diff(q.fused.value(), r.fused.value()) < 1e-14);

  // straight-line evaluation
  const Tensor& wb = p.value(att.w_b);
  const Tensor& wa = p.value(att.w_a);
  const Tensor* fs[3] = {&f1, &f2, &f3};
  double score[3], alpha[3], z = 0;
  for (int i = 0; i < 3; ++i) {
    auto h = matvec(wb, *fs[i]);
    score[i] = 0;
    for (std::size_t k = 0; k < 4; ++k) score[i] += wa[k] * std::tanh(h[k]);
  }
  const double mx = std::max({score[0], score[1], score[2]});
  for (int i = 0; i < 3; ++i) z += std::exp(score[i] - mx);
  for (int i = 0; i < 3; ++i) alpha[i] = std::exp(score[i] - mx) / z;
  for (int i = 0; i < 3; ++i) CHECK(r.alpha.value()[i] == doctest::Approx(alpha[i]).epsilon(1e-13));
  for (std::size_t k = 0; k < 6; ++k) {
    const double ref = alpha[0] * f1[k] + alpha[1] * f2[k] + alpha[2] * f3[k];
    CHECK(r.fused.value()[k] == doctest::Approx(ref).epsilon(1e-13));
    const double lo = std::min({f1[k], f2[k], f3[k]}), hi = std::max({f1[k], f2[k], f3[k]});
    CHECK(r.fused.value()[k] >= lo - 1e-15);
    CHECK(r.fused.value()[k] <= hi + 1e-15);
  }
}

}  // TEST_SUITE

TEST_SUITE("fusion") {

TEST_CASE("align: zero inputs, identity passthrough, pooled spatial mean") {
  Rng rng(6);
  ParameterSet p;
  auto al = fusion::Aligner::create(p, "f", 5, 5, 5, 5, rng);
  Graph g(&p);
  auto z = al.align(g, g.constant(Tensor(Shape{5})), g.constant(Tensor(Shape{5})), g.constant(Tensor(Shape{5, 2, 2, 2})));
  for (auto v : {z.visual, z.semantic, z.spatial}) CHECK(v.value() == Tensor(Shape{5}));

  for (auto id : {al.visual_w, al.semantic_w, al.spatial_w}) p.value(id) = identity(5);
  const Tensor fv = uniform_tensor({5}, -1, 1, rng), ss = uniform_tensor({5}, -1, 1, rng),
               sp = uniform_tensor({5, 2, 3, 2}, -1, 1, rng);
  Graph g2(&p);
  auto a = al.align(g2, g2.constant(fv), g2.constant(ss), g2.constant(sp));
  CHECK(a.visual.value() == fv);
  CHECK(a.semantic.value() == ss);
  for (std::size_t c = 0; c < 5; ++c) {
    double s = 0;
    for (std::size_t i = 0; i < 12; ++i) s += sp[c * 12 + i];
    CHECK(a.spatial.value()[c] == doctest::Approx(s / 12).epsilon(1e-14));
  }
}

TEST_CASE("fusion_weights: zero gate, oracle, simplex") {
  Rng rng(7);
  ParameterSet p;
  auto gate = fusion::FusionGate::create(p, "g", 4, 3, rng);
  p.value(gate.fusion_b) = uniform_tensor({3}, -1, 1, rng);
  const Tensor v = uniform_tensor({4}, -2, 2, rng), s = uniform_tensor({4}, -2, 2, rng),
               sp = uniform_tensor({4}, -2, 2, rng);
  auto weights = [&] {
    Graph g(&p);
    fusion::AlignedFeatures a{g.constant(v), g.constant(s), g.constant(sp)};
    return gate.weights(g, a).value();
  };
  auto w = weights();
  // straight-line evaluation
  std::vector<double> cat(v.data().begin(), v.data().end());
  cat.insert(cat.end(), s.data().begin(), s.data().end());
  cat.insert(cat.end(), sp.data().begin(), sp.data().end());
  const Tensor& wf = p.value(gate.fusion_w);
  const Tensor& bf = p.value(gate.fusion_b);
  const Tensor& wg = p.value(gate.gate_w);
  double h[3], logits[3], z = 0;
  for (std::size_t r = 0; r < 3; ++r) {
    double acc = bf[r];
    for (std::size_t c = 0; c < 12; ++c) acc += wf.at({r, c}) * cat[c];
    h[r] = 1.0 / (1.0 + std::exp(-acc));
  }
  for (std::size_t r = 0; r < 3; ++r) {
    logits[r] = 0;
    for (std::size_t c = 0; c < 3; ++c) logits[r] += wg.at({r, c}) * h[c];
    z += std::exp(logits[r]);
  }
  for (std::size_t r = 0; r < 3; ++r) CHECK(std::abs(w[r] - std::exp(logits[r]) / z) < 1e-12);
  CHECK(std::abs(w[0] + w[1] + w[2] - 1.0) < 1e-12);

  p.value(gate.gate_w).fill(0.0);
  const Tensor uniform_w = weights();
  for (double x : uniform_w.data()) CHECK(x == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  Graph g(&p);
  fusion::AlignedFeatures bad{g.constant(v), g.constant(s), g.constant(Tensor(Shape{3}))};
  CHECK_THROWS_AS(gate.weights(g, bad), ShapeError);
}

TEST_CASE("fuse: one-hot weights, equal features, weighted sum") {
  Rng rng(8);
  Graph g;
  const Tensor a = uniform_tensor({4}, -1, 1, rng), b = uniform_tensor({4}, -1, 1, rng),
               c = uniform_tensor({4}, -1, 1, rng);
  fusion::AlignedFeatures f{g.constant(a), g.constant(b), g.constant(c)};
  CHECK(fusion::fuse(f, g.constant(Tensor::vector({1, 0, 0}))).value() == a);
  fusion::AlignedFeatures same{g.constant(a), g.constant(a), g.constant(a)};
  CHECK(max_abs_diff(fusion::fuse(same, g.constant(Tensor::vector({0.2, 0.5, 0.3}))).value(), a) < 1e-15);
  auto out = fusion::fuse(f, g.constant(Tensor::vector({0.2, 0.5, 0.3}))).value();
  for (std::size_t i = 0; i < 4; ++i) CHECK(out[i] == doctest::Approx(0.2 * a[i] + 0.5 * b[i] + 0.3 * c[i]));
}

TEST_CASE("gradient of fuse o weights o align passes the finite-difference check") {
  Rng rng(9);
  ParameterSet p;
  auto al = fusion::Aligner::create(p, "f", 4, 3, 2, 5, rng);
  auto gate = fusion::FusionGate::create(p, "g", 5, 3, rng);
  const Tensor fv = uniform_tensor({4}, -1, 1, rng), ss = uniform_tensor({3}, -1, 1, rng),
               sp = uniform_tensor({2, 2, 2, 2}, -1, 1, rng), r = uniform_tensor({5}, -1, 1, rng);
  auto build = [&](Graph& g) {
    auto a = al.align(g, g.constant(fv), g.constant(ss), g.constant(sp));
    return ad::sum(fusion::fuse(a, gate.weights(g, a)) * g.constant(r));
  };
  auto rep = ad::finite_diff_check_all(p, build, 1e-4);
  CHECK(rep.pass);
}

}  // TEST_SUITE
