#pragma once

// JSON configuration files. Unknown keys are rejected at every level.

#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "json.hpp"
#include "phenowave/operators.hpp"

namespace phenowave {

namespace detail {

inline void only_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key())) throw ConfigError("unknown key '" + it.key() + "' in " + where);
}

inline double number(const json& j, const std::string& key, const std::string& where) {
  const auto& v = j.at(key);
  if (!v.is_number()) throw ConfigError(where + "." + key + " must be a number");
  return v.get<double>();
}

inline int integer(const json& j, const std::string& key, const std::string& where) {
  const auto& v = j.at(key);
  if (!v.is_number_integer()) throw ConfigError(where + "." + key + " must be an integer");
  return v.get<int>();
}

inline PresetSpec preset_from(const json& j, const std::string& where) {
  only_keys(j, {"preset", "params"}, where);
  if (!j.contains("preset") || !j.at("preset").is_string()) throw ConfigError(where + ".preset must be a string");
  PresetSpec p{j.at("preset").get<std::string>(), json::object()};
  if (j.contains("params")) {
    if (!j.at("params").is_object()) throw ConfigError(where + ".params must be an object");
    p.params = j.at("params");
  }
  return p;
}

inline json preset_to(const PresetSpec& p) { return json{{"preset", p.preset}, {"params", p.params}}; }

}  // namespace detail

/// Parses a configuration object; missing keys keep their defaults.
inline ModelConfig config_from_json(const json& j) {
  using detail::number;
  detail::only_keys(j, {"grid", "mu", "eps", "beta", "a", "M", "K", "wave", "tol"}, "config");
  ModelConfig c;
  try {
    if (j.contains("grid")) {
      const json& g = j.at("grid");
      detail::only_keys(g, {"dim", "bounds", "n"}, "grid");
      if (g.contains("dim")) c.grid.dim = detail::integer(g, "dim", "grid");
      if (c.grid.dim != 1 && c.grid.dim != 2) throw ConfigError("grid.dim must be 1 or 2");
      if (g.contains("n")) c.grid.n = detail::integer(g, "n", "grid");
      if (g.contains("bounds")) {
        const json& b = g.at("bounds");
        if (!b.is_array() || b.empty()) throw ConfigError("grid.bounds must be a non-empty array");
        c.grid.bounds.clear();
        // [lo, hi] for one axis, or [[lo, hi], ...]
        if (b.at(0).is_number()) {
          if (b.size() != 2) throw ConfigError("grid.bounds must be [lo, hi] or a list of such pairs");
          c.grid.bounds.push_back(Interval{b.at(0).get<double>(), b.at(1).get<double>()});
        } else {
          for (const auto& pair : b) {
            if (!pair.is_array() || pair.size() != 2 || !pair.at(0).is_number() || !pair.at(1).is_number())
              throw ConfigError("grid.bounds entries must be [lo, hi] pairs");
            c.grid.bounds.push_back(Interval{pair.at(0).get<double>(), pair.at(1).get<double>()});
          }
        }
      } else {
        c.grid.bounds.assign(static_cast<std::size_t>(c.grid.dim), Interval{-1.0, 1.0});
      }
      if (static_cast<int>(c.grid.bounds.size()) != c.grid.dim) throw ConfigError("grid.bounds does not match grid.dim");
      for (const auto& iv : c.grid.bounds)
        if (!(iv.hi > iv.lo)) throw ConfigError("grid.bounds must satisfy lo < hi");
      if (c.grid.n < 3) throw ConfigError("grid.n must be at least 3");
    }
    if (j.contains("mu")) c.mu = number(j, "mu", "config");
    if (j.contains("eps")) c.eps = number(j, "eps", "config");
    if (j.contains("beta")) c.beta = number(j, "beta", "config");
    if (j.contains("a")) c.a = detail::preset_from(j.at("a"), "a");
    if (j.contains("M")) c.M = detail::preset_from(j.at("M"), "M");
    if (j.contains("K")) c.K = detail::preset_from(j.at("K"), "K");
    if (j.contains("wave")) {
      const json& w = j.at("wave");
      detail::only_keys(w, {"l", "tau"}, "wave");
      if (w.contains("l")) c.wave.l = number(w, "l", "wave");
      if (w.contains("tau")) c.wave.tau = number(w, "tau", "wave");
    }
    if (j.contains("tol")) {
      const json& t = j.at("tol");
      detail::only_keys(t, {"eigen", "eigen_max_iter", "newton", "newton_max_iter", "trichotomy_band"}, "tol");
      if (t.contains("eigen")) c.tol.eigen = number(t, "eigen", "tol");
      if (t.contains("eigen_max_iter")) c.tol.eigen_max_iter = detail::integer(t, "eigen_max_iter", "tol");
      if (t.contains("newton")) c.tol.newton = number(t, "newton", "tol");
      if (t.contains("newton_max_iter")) c.tol.newton_max_iter = detail::integer(t, "newton_max_iter", "tol");
      if (t.contains("trichotomy_band")) c.tol.trichotomy_band = number(t, "trichotomy_band", "tol");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  c.validate();
  return c;
}

/// Resolved configuration with every default filled in.
inline json config_to_json(const ModelConfig& c) {
  json bounds = json::array();
  for (const auto& iv : c.grid.bounds) bounds.push_back({iv.lo, iv.hi});
  json wave = json::object();
  if (c.wave.l) wave["l"] = *c.wave.l;
  if (c.wave.tau) wave["tau"] = *c.wave.tau;
  return json{{"grid", {{"dim", c.grid.dim}, {"bounds", bounds}, {"n", c.grid.n}}},
              {"mu", c.mu},
              {"eps", c.eps},
              {"beta", c.beta},
              {"a", detail::preset_to(c.a)},
              {"M", detail::preset_to(c.M)},
              {"K", detail::preset_to(c.K)},
              {"wave", wave},
              {"tol",
               {{"eigen", c.tol.eigen},
                {"eigen_max_iter", c.tol.eigen_max_iter},
                {"newton", c.tol.newton},
                {"newton_max_iter", c.tol.newton_max_iter},
                {"trichotomy_band", c.tol.trichotomy_band}}}};
}

inline ModelConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

}  // namespace phenowave
