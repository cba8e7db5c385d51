#include "msfa/seg_probs.hpp"

#include <algorithm>

#include "msfa/errors.hpp"

namespace msfa {

const char* region_name(Region r) {
  switch (r) {
    case Region::wt:
      return "wt";
    case Region::tc:
      return "tc";
    case Region::et:
      return "et";
  }
  return "?";
}

const Tensor& SegProbs::operator[](Region r) const {
  return r == Region::wt ? wt : (r == Region::tc ? tc : et);
}

Tensor& SegProbs::operator[](Region r) { return r == Region::wt ? wt : (r == Region::tc ? tc : et); }

Tensor SegProbs::stacked() const {
  if (wt.shape() != tc.shape() || wt.shape() != et.shape()) throw ShapeError("SegProbs maps differ in shape");
  Shape s{3};
  s.insert(s.end(), wt.shape().begin(), wt.shape().end());
  Tensor out(s);
  const std::size_t n = wt.size();
  std::copy_n(wt.data().begin(), n, out.data().begin());
  std::copy_n(tc.data().begin(), n, out.data().begin() + static_cast<std::ptrdiff_t>(n));
  std::copy_n(et.data().begin(), n, out.data().begin() + static_cast<std::ptrdiff_t>(2 * n));
  return out;
}

SegProbs SegProbs::from_stacked(const Tensor& probs) {
  if (probs.rank() < 1 || probs.dim(0) != 3) throw ShapeError("expected [3,...] probabilities");
  Shape s(probs.shape().begin() + 1, probs.shape().end());
  const std::size_t n = shape_size(s);
  SegProbs out{Tensor(s), Tensor(s), Tensor(s)};
  for (int r = 0; r < 3; ++r) {
    std::copy_n(probs.data().begin() + static_cast<std::ptrdiff_t>(r * n), n,
                out[static_cast<Region>(r)].data().begin());
  }
  return out;
}

ad::Var SegProbVars::operator[](Region r) const { return r == Region::wt ? wt : (r == Region::tc ? tc : et); }

SegProbVars SegProbVars::from_stacked(ad::Var probs) {
  const Shape& s = probs.shape();
  if (s.size() < 1 || s[0] != 3) throw ShapeError("expected [3,...] probabilities");
  Shape inner(s.begin() + 1, s.end());
  auto take = [&](std::size_t r) { return ad::reshape(ad::slice(probs, 0, r, 1), inner); };
  return SegProbVars{take(0), take(1), take(2)};
}

SegProbVars SegProbVars::constant(ad::Graph& g, const SegProbs& p) {
  return SegProbVars{g.constant(p.wt), g.constant(p.tc), g.constant(p.et)};
}

}  // namespace msfa
