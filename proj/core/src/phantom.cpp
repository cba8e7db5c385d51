#include "msfa/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json_convert.hpp"
#include "msfa/errors.hpp"
#include "msfa/rng.hpp"
#include "msfa/volume_io.hpp"

namespace msfa::phantom {
namespace {

std::array<double, 9> random_rotation(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  double w = n(rng), x = n(rng), y = n(rng), z = n(rng);
  const double len = std::sqrt(w * w + x * x + y * y + z * z);
  if (len < 1e-12) return {1, 0, 0, 0, 1, 0, 0, 0, 1};
  w /= len;
  x /= len;
  y /= len;
  z /= len;
  return {1 - 2 * (y * y + z * z), 2 * (x * y - z * w),     2 * (x * z + y * w),
          2 * (x * y + z * w),     1 - 2 * (x * x + z * z), 2 * (y * z - x * w),
          2 * (x * z - y * w),     2 * (y * z + x * w),     1 - 2 * (x * x + y * y)};
}

std::array<double, 3> draw_axes(const RadiusRange& r, Rng& rng) {
  std::uniform_real_distribution<double> u(r.min, r.max);
  return {r.min == r.max ? r.min : u(rng), r.min == r.max ? r.min : u(rng), r.min == r.max ? r.min : u(rng)};
}

double min_axis(const Ellipsoid& e) { return *std::min_element(e.axes.begin(), e.axes.end()); }
double max_axis(const Ellipsoid& e) { return *std::max_element(e.axes.begin(), e.axes.end()); }

Ellipsoid place_inside(const Ellipsoid& parent, const RadiusRange& range, const PhantomConfig& cfg, Rng& rng) {
  Ellipsoid e;
  e.axes = draw_axes(range, rng);
  e.rotation = cfg.random_rotation ? random_rotation(rng) : parent.rotation;
  const double room = std::max(0.0, min_axis(parent) - max_axis(e)) * cfg.inner_offset;
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 3; ++i) e.center[i] = parent.center[i] + (room > 0 ? room * u(rng) : 0.0);
  return e;
}

void replace_all(std::string& s, const std::string& from, const std::string& to) {
  for (std::size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) {
    s.replace(pos, from.size(), to);
  }
}

std::string read_text(const std::filesystem::path& p) {
  std::ifstream f(p);
  if (!f) throw IoError("cannot open '" + p.string() + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + p.string() + "' for writing");
  f << s;
  if (!f) throw IoError("write failed for '" + p.string() + "'");
}

std::string case_dir_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "case_%04zu", i);
  return buf;
}

}  // namespace

std::vector<std::string> PhantomConfig::default_templates() {
  return {
      "{size} {side} {lobe} {enhancement} lesion with surrounding edema.",
      "MRI shows a {size} {enhancement} mass in the {side} {lobe} lobe.",
      "{enhancement} tumor of {size} extent located in the {side} {lobe} region.",
  };
}

void PhantomConfig::validate() const {
  if (depth == 0 || height == 0 || width == 0) throw ConfigError("phantom.grid: extents must be positive");
  if (n_cases == 0) throw ConfigError("phantom.n_cases: must be positive");
  if (!(noise_sigma >= 0.0)) throw ConfigError("phantom.noise_sigma: must be nonnegative");
  auto check_range = [](const RadiusRange& r, const char* name) {
    if (!(r.min > 0.0) || !(r.max >= r.min)) {
      throw ConfigError(std::string("phantom.") + name + ": need 0 < min <= max");
    }
  };
  check_range(wt_radius, "wt_radius");
  check_range(tc_radius, "tc_radius");
  check_range(et_radius, "et_radius");
  if (!(et_radius.min < tc_radius.min && et_radius.max < tc_radius.max)) {
    throw ConfigError("phantom.et_radius: must be below phantom.tc_radius component-wise");
  }
  if (!(tc_radius.min < wt_radius.min && tc_radius.max < wt_radius.max)) {
    throw ConfigError("phantom.tc_radius: must be below phantom.wt_radius component-wise");
  }
  if (!(center_jitter >= 0.0)) throw ConfigError("phantom.center_jitter: must be nonnegative");
  const double half = static_cast<double>(std::min({depth, height, width})) / 2.0;
  if (wt_radius.max + center_jitter > half) {
    throw ConfigError("phantom.wt_radius: max radius plus center_jitter exceeds the grid half-extent");
  }
  if (!(inner_offset >= 0.0 && inner_offset <= 1.0)) throw ConfigError("phantom.inner_offset: must be in [0,1]");
  if (!(enhancing_probability >= 0.0 && enhancing_probability <= 1.0)) {
    throw ConfigError("phantom.enhancing_probability: must be in [0,1]");
  }
  if (templates.empty()) throw ConfigError("phantom.templates: at least one template required");
  for (double f : split) {
    if (!(f >= 0.0)) throw ConfigError("phantom.split: fractions must be nonnegative");
  }
  if (std::abs(split[0] + split[1] + split[2] - 1.0) > 1e-9) throw ConfigError("phantom.split: fractions must sum to 1");
}

bool Ellipsoid::contains(double z, double y, double x) const {
  const double p[3] = {z - center[0], y - center[1], x - center[2]};
  double q = 0.0;
  for (int i = 0; i < 3; ++i) {
    // body coordinate i = column i of rotation dotted with p
    const double b = rotation[0 * 3 + i] * p[0] + rotation[1 * 3 + i] * p[1] + rotation[2 * 3 + i] * p[2];
    q += (b / axes[i]) * (b / axes[i]);
  }
  return q <= 1.0;
}

const std::array<std::array<double, kChannels>, 4>& intensity_profile() {
  // channels loosely mimic FLAIR, T1, T1ce, T2
  static const std::array<std::array<double, kChannels>, 4> profile{{
      {0.20, 0.50, 0.30, 0.20},  // background
      {0.80, 0.40, 0.30, 0.70},  // edema (WT only)
      {0.60, 0.20, 0.40, 0.95},  // non-enhancing core (TC only)
      {0.55, 0.35, 0.95, 0.55},  // enhancing (ET)
  }};
  return profile;
}

Tensor rasterize_labels(const PhantomConfig& cfg, const Geometry& geo) {
  Tensor labels(Shape{cfg.depth, cfg.height, cfg.width});
  std::size_t i = 0;
  for (std::size_t z = 0; z < cfg.depth; ++z) {
    for (std::size_t y = 0; y < cfg.height; ++y) {
      for (std::size_t x = 0; x < cfg.width; ++x, ++i) {
        const double fz = static_cast<double>(z), fy = static_cast<double>(y), fx = static_cast<double>(x);
        if (!geo.wt.contains(fz, fy, fx)) continue;
        double label = 1.0;
        if (geo.tc.contains(fz, fy, fx)) {
          label = 2.0;
          if (geo.enhancing && geo.et.contains(fz, fy, fx)) label = 3.0;
        }
        labels[i] = label;
      }
    }
  }
  return labels;
}

TextSlots describe(const PhantomConfig& cfg, const Geometry& geo, const Tensor& labels) {
  TextSlots s;
  const double req = std::cbrt(geo.wt.axes[0] * geo.wt.axes[1] * geo.wt.axes[2]);
  const double span = cfg.wt_radius.max - cfg.wt_radius.min;
  const double t = span > 0 ? (req - cfg.wt_radius.min) / span : 0.5;
  s.size = t < 1.0 / 3.0 ? "small" : (t < 2.0 / 3.0 ? "medium" : "large");
  const double dx = geo.wt.center[2] - (static_cast<double>(cfg.width) - 1.0) / 2.0;
  s.side = dx < -1.0 ? "left" : (dx > 1.0 ? "right" : "midline");
  const double dy = geo.wt.center[1] - (static_cast<double>(cfg.height) - 1.0) / 2.0;
  s.lobe = dy < 0.0 ? "frontal" : "parietal";
  const bool has_et = std::any_of(labels.data().begin(), labels.data().end(), [](double v) { return v == 3.0; });
  s.enhancement = has_et ? "enhancing" : "non-enhancing";
  return s;
}

std::string render_text(const std::string& tmpl, const TextSlots& slots) {
  std::string out = tmpl;
  replace_all(out, "{size}", slots.size);
  replace_all(out, "{side}", slots.side);
  replace_all(out, "{lobe}", slots.lobe);
  replace_all(out, "{enhancement}", slots.enhancement);
  return out;
}

PhantomCase generate_case(const PhantomConfig& cfg, std::uint64_t seed, std::size_t index) {
  cfg.validate();
  Rng rng(derive_seed(seed, index));
  std::uniform_real_distribution<double> jitter(-cfg.center_jitter, cfg.center_jitter);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  Geometry geo;
  const double mid[3] = {(static_cast<double>(cfg.depth) - 1.0) / 2.0, (static_cast<double>(cfg.height) - 1.0) / 2.0,
                         (static_cast<double>(cfg.width) - 1.0) / 2.0};
  for (int i = 0; i < 3; ++i) geo.wt.center[i] = mid[i] + (cfg.center_jitter > 0 ? jitter(rng) : 0.0);
  geo.wt.axes = draw_axes(cfg.wt_radius, rng);
  if (cfg.random_rotation) geo.wt.rotation = random_rotation(rng);
  geo.tc = place_inside(geo.wt, cfg.tc_radius, cfg, rng);
  geo.et = place_inside(geo.tc, cfg.et_radius, cfg, rng);
  geo.enhancing = unit(rng) < cfg.enhancing_probability;

  PhantomCase c;
  c.seed = seed;
  c.index = index;
  c.geometry = geo;
  c.labels = rasterize_labels(cfg, geo);

  const auto& profile = intensity_profile();
  const std::size_t n = c.labels.size();
  c.volume = Tensor(Shape{kChannels, cfg.depth, cfg.height, cfg.width});
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t ch = 0; ch < kChannels; ++ch) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto label = static_cast<std::size_t>(c.labels[i]);
      const double v = profile[label][ch] + cfg.noise_sigma * noise(rng);
      // stored as f32 on disk; keep memory and disk identical
      c.volume[ch * n + i] = static_cast<double>(static_cast<float>(v));
    }
  }

  c.slots = describe(cfg, geo, c.labels);
  std::uniform_int_distribution<std::size_t> pick(0, cfg.templates.size() - 1);
  c.text = render_text(cfg.templates[pick(rng)], c.slots);
  return c;
}

std::vector<PhantomCase> generate(const PhantomConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::vector<PhantomCase> cases;
  cases.reserve(cfg.n_cases);
  for (std::size_t i = 0; i < cfg.n_cases; ++i) cases.push_back(generate_case(cfg, seed, i));
  return cases;
}

Split split(std::size_t n_cases, const std::array<double, 3>& fractions, std::uint64_t seed) {
  for (double f : fractions) {
    if (!(f >= 0.0)) throw ValueError("split: fractions must be nonnegative");
  }
  if (std::abs(fractions[0] + fractions[1] + fractions[2] - 1.0) > 1e-9) {
    throw ValueError("split: fractions must sum to 1");
  }
  std::vector<std::size_t> idx(n_cases);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(derive_seed(seed, 0x5EED5117ULL));
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto n = static_cast<double>(n_cases);
  auto n_train = static_cast<std::size_t>(std::llround(n * fractions[0]));
  auto n_val = static_cast<std::size_t>(std::llround(n * fractions[1]));
  n_train = std::min(n_train, n_cases);
  n_val = std::min(n_val, n_cases - n_train);
  if (fractions[2] == 0.0) n_val = n_cases - n_train;
  Split s;
  s.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.val.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train),
               idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  s.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), idx.end());
  for (auto* part : {&s.train, &s.val, &s.test}) std::sort(part->begin(), part->end());
  return s;
}

Dataset make_dataset(const PhantomConfig& cfg, std::uint64_t seed, std::string config_hash) {
  Dataset ds;
  ds.cases = generate(cfg, seed);
  ds.split = split(cfg.n_cases, cfg.split, seed);
  ds.config_hash = std::move(config_hash);
  return ds;
}

std::vector<const PhantomCase*> Dataset::subset(const std::vector<std::size_t>& idx) const {
  std::vector<const PhantomCase*> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(&cases.at(i));
  return out;
}

void write_dataset(const std::filesystem::path& dir, const Dataset& ds, const PhantomConfig& cfg,
                   std::uint64_t seed) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());

  nlohmann::json manifest;
  manifest["format"] = "msfa-phantom-dataset";
  manifest["version"] = 1;
  manifest["seed"] = seed;
  manifest["config"] = json_convert::to_json(cfg);
  manifest["config_hash"] = ds.config_hash;
  manifest["splits"] = {{"train", ds.split.train}, {"val", ds.split.val}, {"test", ds.split.test}};
  std::vector<std::string> names;
  for (const auto& c : ds.cases) {
    const auto name = case_dir_name(c.index);
    names.push_back(name);
    const fs::path cdir = dir / name;
    fs::create_directories(cdir, ec);
    if (ec) throw IoError("cannot create '" + cdir.string() + "': " + ec.message());
    io::write_tensor(c.volume, cdir / "volume.mvtf", io::DType::f32);
    io::write_tensor(c.labels, cdir / "labels.mvtf", io::DType::f32);
    write_text(cdir / "text.txt", c.text + "\n");
    nlohmann::json meta;
    meta["seed"] = c.seed;
    meta["index"] = c.index;
    meta["geometry"] = json_convert::to_json(c.geometry);
    meta["slots"] = {{"size", c.slots.size},
                     {"side", c.slots.side},
                     {"lobe", c.slots.lobe},
                     {"enhancement", c.slots.enhancement}};
    write_text(cdir / "meta.json", meta.dump(2) + "\n");
  }
  manifest["cases"] = names;
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

Dataset load_dataset(const std::filesystem::path& dir) {
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_text(dir / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("dataset manifest: " + std::string(e.what()));
  }
  Dataset ds;
  try {
    ds.config_hash = manifest.at("config_hash").get<std::string>();
    ds.split.train = manifest.at("splits").at("train").get<std::vector<std::size_t>>();
    ds.split.val = manifest.at("splits").at("val").get<std::vector<std::size_t>>();
    ds.split.test = manifest.at("splits").at("test").get<std::vector<std::size_t>>();
    const auto names = manifest.at("cases").get<std::vector<std::string>>();
    for (std::size_t i = 0; i < names.size(); ++i) {
      const auto cdir = dir / names[i];
      PhantomCase c;
      c.volume = io::read_tensor(cdir / "volume.mvtf");
      c.labels = io::read_tensor(cdir / "labels.mvtf");
      c.text = read_text(cdir / "text.txt");
      while (!c.text.empty() && (c.text.back() == '\n' || c.text.back() == '\r')) c.text.pop_back();
      const auto meta = nlohmann::json::parse(read_text(cdir / "meta.json"));
      c.seed = meta.at("seed").get<std::uint64_t>();
      c.index = meta.at("index").get<std::size_t>();
      c.geometry = json_convert::geometry_from_json(meta.at("geometry"));
      const auto& sl = meta.at("slots");
      c.slots = {sl.at("size").get<std::string>(), sl.at("side").get<std::string>(),
                 sl.at("lobe").get<std::string>(), sl.at("enhancement").get<std::string>()};
      if (c.volume.rank() != 4 || c.volume.dim(0) != kChannels || c.labels.rank() != 3) {
        throw FormatError("case '" + names[i] + "': unexpected tensor ranks");
      }
      ds.cases.push_back(std::move(c));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("dataset manifest: " + std::string(e.what()));
  }
  return ds;
}

}  // namespace msfa::phantom
