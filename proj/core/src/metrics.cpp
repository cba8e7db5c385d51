#include "msfa/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "json.hpp"

#include "msfa/errors.hpp"

namespace msfa::metrics {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_same(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  if (a.rank() != 3) throw ShapeError(std::string(what) + ": masks must be [D,H,W]");
}

inline bool on(double v) { return v >= 0.5; }

// Squared distance transform along one line (Felzenszwalb & Huttenlocher), sample pitch h.
void edt_line(const double* f, double* out, std::size_t n, double h, std::vector<std::size_t>& v,
              std::vector<double>& z) {
  v.assign(n, 0);
  z.assign(n + 1, 0.0);
  std::size_t k = 0;
  std::size_t first = n;
  for (std::size_t q = 0; q < n; ++q) {
    if (f[q] < kInf) {
      first = q;
      break;
    }
  }
  if (first == n) {
    for (std::size_t q = 0; q < n; ++q) out[q] = kInf;
    return;
  }
  v[0] = first;
  z[0] = -kInf;
  z[1] = kInf;
  for (std::size_t q = first + 1; q < n; ++q) {
    if (!(f[q] < kInf)) continue;
    const double xq = h * static_cast<double>(q);
    double s;
    for (;;) {
      const double xv = h * static_cast<double>(v[k]);
      s = ((f[q] + xq * xq) - (f[v[k]] + xv * xv)) / (2.0 * (xq - xv));
      if (s <= z[k] && k > 0) {
        --k;
        continue;
      }
      break;
    }
    if (s <= z[k]) {
      // k == 0 and the new parabola dominates everywhere.
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      continue;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  k = 0;
  for (std::size_t q = 0; q < n; ++q) {
    const double x = h * static_cast<double>(q);
    while (z[k + 1] < x) ++k;
    const double d = x - h * static_cast<double>(v[k]);
    out[q] = d * d + f[v[k]];
  }
}

}  // namespace

double dice(const Tensor& pred, const Tensor& gt) {
  if (pred.shape() != gt.shape()) throw ShapeError("dice: shape mismatch");
  std::size_t np = 0, ng = 0, both = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = on(pred[i]), g = on(gt[i]);
    np += p;
    ng += g;
    both += p && g;
  }
  if (np + ng == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(np + ng);
}

std::vector<std::array<std::size_t, 3>> surface_voxels(const Tensor& m) {
  if (m.rank() != 3) throw ShapeError("surface_voxels: mask must be [D,H,W]");
  const std::size_t D = m.dim(0), H = m.dim(1), W = m.dim(2);
  auto at = [&](std::size_t z, std::size_t y, std::size_t x) { return on(m[(z * H + y) * W + x]); };
  std::vector<std::array<std::size_t, 3>> out;
  for (std::size_t z = 0; z < D; ++z)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        if (!at(z, y, x)) continue;
        const bool surface = z == 0 || z + 1 == D || y == 0 || y + 1 == H || x == 0 || x + 1 == W ||
                             !at(z - 1, y, x) || !at(z + 1, y, x) || !at(z, y - 1, x) || !at(z, y + 1, x) ||
                             !at(z, y, x - 1) || !at(z, y, x + 1);
        if (surface) out.push_back({z, y, x});
      }
  return out;
}

Tensor distance_transform(const Tensor& seeds, const Spacing& spacing) {
  if (seeds.rank() != 3) throw ShapeError("distance_transform: expects [D,H,W]");
  const std::size_t dims[3] = {seeds.dim(0), seeds.dim(1), seeds.dim(2)};
  const std::size_t strides[3] = {dims[1] * dims[2], dims[2], 1};
  Tensor sq(seeds.shape());
  for (std::size_t i = 0; i < seeds.size(); ++i) sq[i] = on(seeds[i]) ? 0.0 : kInf;

  std::vector<double> line, out;
  std::vector<std::size_t> v;
  std::vector<double> z;
  // x first, then y, then z: matches summing dx^2 + dy^2 + dz^2 in that order.
  for (int axis = 2; axis >= 0; --axis) {
    const std::size_t n = dims[axis], stride = strides[axis];
    line.resize(n);
    out.resize(n);
    for (std::size_t base = 0; base < sq.size(); ++base) {
      if ((base / stride) % n != 0) continue;
      for (std::size_t q = 0; q < n; ++q) line[q] = sq[base + q * stride];
      edt_line(line.data(), out.data(), n, spacing[axis], v, z);
      for (std::size_t q = 0; q < n; ++q) sq[base + q * stride] = out[q];
    }
  }
  for (auto& d : sq.data()) d = std::sqrt(d);
  return sq;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw ValueError("percentile of an empty set");
  std::sort(values.begin(), values.end());
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

std::optional<double> hd95(const Tensor& pred, const Tensor& gt, const Spacing& spacing) {
  require_same(pred, gt, "hd95");
  const auto sp = surface_voxels(pred);
  const auto sg = surface_voxels(gt);
  if (sp.empty() || sg.empty()) return std::nullopt;
  const std::size_t H = pred.dim(1), W = pred.dim(2);
  auto seed_map = [&](const std::vector<std::array<std::size_t, 3>>& s) {
    Tensor t(pred.shape());
    for (const auto& v : s) t[(v[0] * H + v[1]) * W + v[2]] = 1.0;
    return t;
  };
  const Tensor to_gt = distance_transform(seed_map(sg), spacing);
  const Tensor to_pred = distance_transform(seed_map(sp), spacing);
  std::vector<double> d;
  d.reserve(sp.size() + sg.size());
  for (const auto& v : sp) d.push_back(to_gt[(v[0] * H + v[1]) * W + v[2]]);
  for (const auto& v : sg) d.push_back(to_pred[(v[0] * H + v[1]) * W + v[2]]);
  return percentile(std::move(d), 95.0);
}

double hierarchy_violation_rate(const SegProbs& p, double threshold) {
  if (p.wt.shape() != p.tc.shape() || p.tc.shape() != p.et.shape()) {
    throw ShapeError("hierarchy_violation_rate: region shapes differ");
  }
  if (p.wt.size() == 0) return 0.0;
  std::size_t bad = 0;
  for (std::size_t i = 0; i < p.wt.size(); ++i) {
    const bool w = p.wt[i] >= threshold, t = p.tc[i] >= threshold, e = p.et[i] >= threshold;
    bad += (e && !t) || (t && !w);
  }
  return static_cast<double>(bad) / static_cast<double>(p.wt.size());
}

std::string MetricsReport::to_json(int indent) const {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  nlohmann::json j;
  for (Region r : kRegions) {
    const auto& m = regions[static_cast<int>(r)];
    j[region_name(r)] = {{"dice", m.dice}, {"hd95", opt(m.hd95)}};
  }
  j["mean"] = {{"dice", mean_dice}, {"hd95", opt(mean_hd95)}};
  j["hierarchy_violation_rate"] = hierarchy_violation_rate;
  return j.dump(indent);
}

namespace {
void finish_means(MetricsReport& m) {
  double dsum = 0.0, hsum = 0.0;
  int hn = 0;
  for (const auto& r : m.regions) {
    dsum += r.dice;
    if (r.hd95) {
      hsum += *r.hd95;
      ++hn;
    }
  }
  m.mean_dice = dsum / 3.0;
  m.mean_hd95 = hn ? std::optional<double>(hsum / hn) : std::nullopt;
}
}  // namespace

MetricsReport evaluate(const SegProbs& pred, const SegProbs& gt, const Spacing& spacing) {
  MetricsReport m;
  for (Region r : kRegions) {
    auto& out = m.regions[static_cast<int>(r)];
    out.dice = dice(pred[r], gt[r]);
    out.hd95 = hd95(pred[r], gt[r], spacing);
  }
  finish_means(m);
  m.hierarchy_violation_rate = hierarchy_violation_rate(pred);
  return m;
}

MetricsReport average(std::span<const MetricsReport> reports) {
  MetricsReport out;
  if (reports.empty()) return out;
  const double n = static_cast<double>(reports.size());
  for (int r = 0; r < 3; ++r) {
    double dsum = 0.0, hsum = 0.0;
    int hn = 0;
    for (const auto& rep : reports) {
      dsum += rep.regions[r].dice;
      if (rep.regions[r].hd95) {
        hsum += *rep.regions[r].hd95;
        ++hn;
      }
    }
    out.regions[r].dice = dsum / n;
    out.regions[r].hd95 = hn ? std::optional<double>(hsum / hn) : std::nullopt;
  }
  finish_means(out);
  double hv = 0.0;
  for (const auto& rep : reports) hv += rep.hierarchy_violation_rate;
  out.hierarchy_violation_rate = hv / n;
  return out;
}

}  // namespace msfa::metrics
