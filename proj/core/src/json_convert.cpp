#include "json_convert.hpp"

#include <functional>
#include <map>
#include <type_traits>

#include "msfa/errors.hpp"

namespace msfa::json_convert {
namespace {

using Setter = std::function<void(const json&)>;

void apply(const json& j, const std::string& section, const std::map<std::string, Setter>& fields) {
  if (!j.is_object()) throw ConfigError(section + ": must be an object");
  for (const auto& [key, value] : j.items()) {
    auto it = fields.find(key);
    if (it == fields.end()) throw ConfigError(section + "." + key + ": unknown key");
    try {
      it->second(value);
    } catch (const json::exception& e) {
      throw ConfigError(section + "." + key + ": " + e.what());
    }
  }
}

template <class T>
Setter set(T& field) {
  return [&field](const json& v) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError("expected a boolean");
    } else if constexpr (std::is_arithmetic_v<T>) {
      if (!v.is_number()) throw ConfigError("expected a number");
      if constexpr (std::is_unsigned_v<T>) {
        if (!v.is_number_unsigned()) throw ConfigError("expected a non-negative integer");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw ConfigError("expected an integer");
      }
    }
    field = v.get<T>();
  };
}

// Wraps a setter so that its ConfigError carries the field path.
Setter named(const std::string& path, Setter s) {
  return [path, s](const json& v) {
    try {
      s(v);
    } catch (const ConfigError& e) {
      throw ConfigError(path + ": " + e.what());
    }
  };
}

Setter set_range(phantom::RadiusRange& r) {
  return [&r](const json& v) {
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
      throw ConfigError("expected [min, max]");
    }
    r.min = v[0].get<double>();
    r.max = v[1].get<double>();
  };
}

json ellipsoid_json(const phantom::Ellipsoid& e) {
  return {{"center", e.center}, {"axes", e.axes}, {"rotation", e.rotation}};
}

phantom::Ellipsoid ellipsoid_from(const json& j) {
  phantom::Ellipsoid e;
  e.center = j.at("center").get<std::array<double, 3>>();
  e.axes = j.at("axes").get<std::array<double, 3>>();
  e.rotation = j.at("rotation").get<std::array<double, 9>>();
  return e;
}

}  // namespace

json to_json(const phantom::PhantomConfig& c) {
  return {{"depth", c.depth},
          {"height", c.height},
          {"width", c.width},
          {"n_cases", c.n_cases},
          {"noise_sigma", c.noise_sigma},
          {"wt_radius", {c.wt_radius.min, c.wt_radius.max}},
          {"tc_radius", {c.tc_radius.min, c.tc_radius.max}},
          {"et_radius", {c.et_radius.min, c.et_radius.max}},
          {"center_jitter", c.center_jitter},
          {"inner_offset", c.inner_offset},
          {"random_rotation", c.random_rotation},
          {"enhancing_probability", c.enhancing_probability},
          {"templates", c.templates},
          {"split", c.split}};
}

void merge(const json& j, phantom::PhantomConfig& c) {
  const std::string s = "phantom";
  apply(j, s,
        {{"depth", named(s + ".depth", set(c.depth))},
         {"height", named(s + ".height", set(c.height))},
         {"width", named(s + ".width", set(c.width))},
         {"n_cases", named(s + ".n_cases", set(c.n_cases))},
         {"noise_sigma", named(s + ".noise_sigma", set(c.noise_sigma))},
         {"wt_radius", named(s + ".wt_radius", set_range(c.wt_radius))},
         {"tc_radius", named(s + ".tc_radius", set_range(c.tc_radius))},
         {"et_radius", named(s + ".et_radius", set_range(c.et_radius))},
         {"center_jitter", named(s + ".center_jitter", set(c.center_jitter))},
         {"inner_offset", named(s + ".inner_offset", set(c.inner_offset))},
         {"random_rotation", named(s + ".random_rotation", set(c.random_rotation))},
         {"enhancing_probability", named(s + ".enhancing_probability", set(c.enhancing_probability))},
         {"templates", named(s + ".templates", [&c](const json& v) {
            if (!v.is_array()) throw ConfigError("expected a list of strings");
            c.templates = v.get<std::vector<std::string>>();
          })},
         {"split", named(s + ".split", [&c](const json& v) {
            if (!v.is_array() || v.size() != 3) throw ConfigError("expected [train, val, test]");
            c.split = v.get<std::array<double, 3>>();
          })}});
}

json to_json(const phantom::Geometry& g) {
  return {{"wt", ellipsoid_json(g.wt)}, {"tc", ellipsoid_json(g.tc)}, {"et", ellipsoid_json(g.et)},
          {"enhancing", g.enhancing}};
}

phantom::Geometry geometry_from_json(const json& j) {
  phantom::Geometry g;
  g.wt = ellipsoid_from(j.at("wt"));
  g.tc = ellipsoid_from(j.at("tc"));
  g.et = ellipsoid_from(j.at("et"));
  g.enhancing = j.at("enhancing").get<bool>();
  return g;
}

json to_json(const train::TrainConfig& c) {
  return {{"lr_min", c.lr_min},
          {"lr_max", c.lr_max},
          {"weight_decay", c.weight_decay},
          {"dropout", c.dropout},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"warmup_fraction", c.warmup_fraction},
          {"flip_augment", c.flip_augment},
          {"precision", c.precision}};
}

void merge(const json& j, train::TrainConfig& c) {
  const std::string s = "train";
  apply(j, s,
        {{"lr_min", named(s + ".lr_min", set(c.lr_min))},
         {"lr_max", named(s + ".lr_max", set(c.lr_max))},
         {"weight_decay", named(s + ".weight_decay", set(c.weight_decay))},
         {"dropout", named(s + ".dropout", set(c.dropout))},
         {"epochs", named(s + ".epochs", set(c.epochs))},
         {"batch_size", named(s + ".batch_size", set(c.batch_size))},
         {"warmup_fraction", named(s + ".warmup_fraction", set(c.warmup_fraction))},
         {"flip_augment", named(s + ".flip_augment", set(c.flip_augment))},
         {"precision", named(s + ".precision", [&c](const json& v) {
            if (!v.is_string()) throw ConfigError("expected a string");
            c.precision = v.get<std::string>();
          })}});
}

json to_json(const loss::LossWeights& w) {
  return {{"seg", w.seg},
          {"hierarchy", w.hierarchy},
          {"continuity", w.continuity},
          {"topology", w.topology},
          {"topology_shape", w.topology_params.shape},
          {"topology_boundary", w.topology_params.boundary}};
}

void merge(const json& j, loss::LossWeights& w) {
  const std::string s = "loss";
  apply(j, s,
        {{"seg", named(s + ".seg", set(w.seg))},
         {"hierarchy", named(s + ".hierarchy", set(w.hierarchy))},
         {"continuity", named(s + ".continuity", set(w.continuity))},
         {"topology", named(s + ".topology", set(w.topology))},
         {"topology_shape", named(s + ".topology_shape", set(w.topology_params.shape))},
         {"topology_boundary", named(s + ".topology_boundary", set(w.topology_params.boundary))}});
}

json to_json(const biva::BivaParams& p) {
  return {{"max_rounds", p.max_rounds}, {"eps_delta", p.eps_delta}, {"eps_quality", p.eps_quality}};
}

void merge(const json& j, biva::BivaParams& p) {
  const std::string s = "biva";
  apply(j, s,
        {{"max_rounds", named(s + ".max_rounds", set(p.max_rounds))},
         {"eps_delta", named(s + ".eps_delta", set(p.eps_delta))},
         {"eps_quality", named(s + ".eps_quality", set(p.eps_quality))}});
}

}  // namespace msfa::json_convert
