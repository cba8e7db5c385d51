#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "msfa/tensor.hpp"

// Synthetic multi-sequence volumes with nested ET within TC within WT ellipsoids and a templated
// text description of each lesion.
namespace msfa::phantom {

inline constexpr std::size_t kChannels = 4;

struct RadiusRange {
  double min = 0.0;
  double max = 0.0;
};

struct PhantomConfig {
  std::size_t depth = 32;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t n_cases = 50;
  double noise_sigma = 0.1;
  // Semi-axis ranges in voxels.
  RadiusRange wt_radius{7.0, 11.0};
  RadiusRange tc_radius{4.0, 7.0};
  RadiusRange et_radius{2.0, 4.0};
  // Max offset of the lesion centre from the grid centre, per axis, in voxels.
  double center_jitter = 4.0;
  // Inner ellipsoid centres move by up to this fraction of the free room inside their parent.
  double inner_offset = 0.5;
  bool random_rotation = true;
  // Probability that a case carries an enhancing core.
  double enhancing_probability = 0.8;
  std::vector<std::string> templates = default_templates();
  std::array<double, 3> split{0.8, 0.1, 0.1};

  static std::vector<std::string> default_templates();
  // Throws ConfigError naming the offending field.
  void validate() const;
};

struct Ellipsoid {
  std::array<double, 3> center{};  // (z, y, x) voxel coordinates
  std::array<double, 3> axes{};    // semi-axes along the rotated frame
  std::array<double, 9> rotation{1, 0, 0, 0, 1, 0, 0, 0, 1};  // row-major, body -> grid

  bool contains(double z, double y, double x) const;
};

struct Geometry {
  Ellipsoid wt, tc, et;
  bool enhancing = true;
};

// Slots filled into the text templates.
struct TextSlots {
  std::string size;         // small | medium | large
  std::string side;         // left | right | midline
  std::string lobe;         // frontal | parietal
  std::string enhancement;  // enhancing | non-enhancing
};

struct PhantomCase {
  Tensor volume;  // [4, D, H, W]
  Tensor labels;  // [D, H, W] in {0,1,2,3}
  std::string text;
  std::uint64_t seed = 0;
  std::size_t index = 0;
  Geometry geometry;
  TextSlots slots;
};

// Region intensity profile per channel; rows are labels 0..3.
const std::array<std::array<double, kChannels>, 4>& intensity_profile();

PhantomCase generate_case(const PhantomConfig& cfg, std::uint64_t seed, std::size_t index);
std::vector<PhantomCase> generate(const PhantomConfig& cfg, std::uint64_t seed);

// Label map from geometry alone (no noise). Nesting holds by construction.
Tensor rasterize_labels(const PhantomConfig& cfg, const Geometry& geo);
TextSlots describe(const PhantomConfig& cfg, const Geometry& geo, const Tensor& labels);
std::string render_text(const std::string& tmpl, const TextSlots& slots);

struct Split {
  std::vector<std::size_t> train, val, test;
};

// Deterministic shuffled partition of case indices [0, n).
Split split(std::size_t n_cases, const std::array<double, 3>& fractions, std::uint64_t seed);

struct Dataset {
  std::vector<PhantomCase> cases;
  Split split;
  std::string config_hash;

  std::vector<const PhantomCase*> subset(const std::vector<std::size_t>& idx) const;
};

// generate() plus split() with the configured fractions.
Dataset make_dataset(const PhantomConfig& cfg, std::uint64_t seed, std::string config_hash);

// Writes case_NNNN/{volume.mvtf, labels.mvtf, text.txt, meta.json} and manifest.json.
void write_dataset(const std::filesystem::path& dir, const Dataset& ds, const PhantomConfig& cfg,
                   std::uint64_t seed);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace msfa::phantom
