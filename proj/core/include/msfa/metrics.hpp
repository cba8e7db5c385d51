#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "msfa/seg_probs.hpp"
#include "msfa/tensor.hpp"

namespace msfa::metrics {

using Spacing = std::array<double, 3>;  // (z, y, x) in mm
inline constexpr Spacing kUnitSpacing{1.0, 1.0, 1.0};

// Masks are [D,H,W]; a voxel is foreground when its value is >= 0.5.
// Both empty -> 1, exactly one empty -> 0.
double dice(const Tensor& pred, const Tensor& gt);

// Foreground voxels with at least one 6-neighbour that is background or outside the grid.
std::vector<std::array<std::size_t, 3>> surface_voxels(const Tensor& mask);

// Pooled 95th percentile (linear interpolation) of the surface distances in both directions.
// nullopt when either mask is empty.
std::optional<double> hd95(const Tensor& pred, const Tensor& gt, const Spacing& spacing = kUnitSpacing);

// q-th percentile of values with linear interpolation between closest ranks. values must be non-empty.
double percentile(std::vector<double> values, double q);

// Distance from every voxel to the nearest seed voxel (exact Euclidean, anisotropic spacing).
// Infinity everywhere when there are no seeds.
Tensor distance_transform(const Tensor& seeds, const Spacing& spacing);

// Fraction of voxels where the binarized masks break ET within TC within WT.
double hierarchy_violation_rate(const SegProbs& p, double threshold = 0.5);

struct RegionMetrics {
  double dice = 0.0;
  std::optional<double> hd95;
};

struct MetricsReport {
  std::array<RegionMetrics, 3> regions;  // WT, TC, ET
  double mean_dice = 0.0;
  std::optional<double> mean_hd95;  // over regions with a defined hd95
  double hierarchy_violation_rate = 0.0;

  const RegionMetrics& operator[](Region r) const { return regions[static_cast<int>(r)]; }
  // {"wt":{"dice","hd95"},"tc":..,"et":..,"mean":..,"hierarchy_violation_rate"}; undefined hd95 is null.
  std::string to_json(int indent = -1) const;
};

MetricsReport evaluate(const SegProbs& pred, const SegProbs& gt, const Spacing& spacing = kUnitSpacing);

// Per-field mean across cases; hd95 averages only the cases where it is defined.
MetricsReport average(std::span<const MetricsReport> reports);

}  // namespace msfa::metrics
