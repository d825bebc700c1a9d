#pragma once

// Experiment configuration: line-oriented `key = value` with dotted keys,
// '#' comments, optional double quotes around values. Any key can be
// overridden from the environment as QSD_<KEY> with dots turned into
// underscores and letters upper-cased (QSD_GRID_N, QSD_MODEL_PARAMS_SIGMA).

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "qsd/errors.hpp"
#include "qsd/model.hpp"
#include "qsd/spectral.hpp"

namespace qsd {

struct ExperimentConfig {
  struct ModelBlock {
    std::string name;
    std::map<std::string, std::string> params;
  } model;
  struct GridBlock {
    double eps = 1e-3;
    std::optional<double> R;  // defaults to the model's domain hint
    std::size_t N = 2000;
    Spacing spacing = Spacing::log;
  } grid;
  struct SimBlock {
    double dt = 1e-3;
    double T = 5.0;
    std::size_t paths = 10000;
    std::uint64_t seed = 1;
    std::vector<double> record_times{1.0, 3.0, 5.0};
    std::string initial = "point:1";
    double kill_level = 0.0;
  } sim;
  struct AnalysisBlock {
    std::string psi = "one";
    double c = 0.5;
    std::size_t bins = 40;
    std::optional<std::pair<double, double>> fit_window;
    std::string mu0 = "upper_half_alpha";
    double t_max = 12.0;
    double t_step = 0.1;
    double qe_t_min = 1.0;
    double qe_t_max = 50.0;
    std::size_t qe_points = 21;
    double qe_x = 1.0;
  } analysis;
  struct OutputBlock {
    std::string dir = "out";
    bool plot = false;
  } output;

  /// Every key=value actually given (file, then environment), sorted by key.
  std::map<std::string, std::string> given;
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string_view::npos) return {};
  const auto b = s.find_last_not_of(" \t\r");
  return std::string(s.substr(a, b - a + 1));
}

inline std::string unquote(std::string v) {
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"') return v.substr(1, v.size() - 2);
  return v;
}

inline double parse_double(const std::string& v, const std::string& key, int line) {
  double out = 0.0;
  const auto* end = v.data() + v.size();
  const auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end || !std::isfinite(out)) {
    throw ConfigError(key + ": expected a number, got '" + v + "'", line);
  }
  return out;
}

inline std::uint64_t parse_uint(const std::string& v, const std::string& key, int line) {
  std::uint64_t out = 0;
  const auto* end = v.data() + v.size();
  const auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'", line);
  return out;
}

inline bool parse_bool(const std::string& v, const std::string& key, int line) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'", line);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(trim(cur));
  return out;
}

inline std::vector<double> parse_list(const std::string& v, const std::string& key, int line) {
  std::vector<double> out;
  for (const auto& item : split(v, ',')) {
    if (!item.empty()) out.push_back(parse_double(item, key, line));
  }
  return out;
}

inline const std::vector<std::string>& known_keys() {
  static const std::vector<std::string> keys = {
      "model.name",          "model.params.sigma", "model.params.r",     "model.params.k",
      "model.params.terms",  "grid.eps",           "grid.R",             "grid.N",
      "grid.spacing",        "sim.dt",             "sim.T",              "sim.paths",
      "sim.seed",            "sim.record_times",   "sim.initial",        "sim.kill_level",
      "analysis.psi",        "analysis.c",         "analysis.bins",      "analysis.fit_window",
      "analysis.mu0",        "analysis.t_max",     "analysis.t_step",    "analysis.qe_t_min",
      "analysis.qe_t_max",   "analysis.qe_points", "analysis.qe_x",      "output.dir",
      "output.plot"};
  return keys;
}

inline std::string env_name(const std::string& key) {
  std::string s = "QSD_";
  for (char c : key) s += c == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

inline void check_initial_spec(const std::string& v, const std::string& key, int line) {
  const auto parts = split(v, ':');
  if (parts.empty()) throw ConfigError(key + ": empty initial spec", line);
  const auto& kind = parts[0];
  if (kind == "point" && parts.size() == 2) {
    if (!(parse_double(parts[1], key, line) > 0.0)) throw ConfigError(key + ": point must be positive", line);
    return;
  }
  if (kind == "uniform" && parts.size() == 3) {
    const double a = parse_double(parts[1], key, line);
    const double b = parse_double(parts[2], key, line);
    if (!(a >= 0.0 && b > a)) throw ConfigError(key + ": uniform needs 0 <= a < b", line);
    return;
  }
  if ((kind == "alpha" || kind == "beta" || kind == "upper_half_alpha") && parts.size() == 1) return;
  throw ConfigError(key + ": expected point:x, uniform:a:b, alpha, beta or upper_half_alpha", line);
}

// Applies one key; `line` is 0 for environment overrides.
inline void apply_key(ExperimentConfig& cfg, const std::string& key, const std::string& v, int line) {
  auto num = [&] { return parse_double(v, key, line); };
  auto positive = [&] {
    const double x = num();
    if (!(x > 0.0)) throw ConfigError(key + " must be positive", line);
    return x;
  };
  if (key == "model.name") {
    if (v != "logistic_feller" && v != "polynomial" && v != "brownian") {
      throw ConfigError("model.name: unknown model '" + v + "' (logistic_feller, polynomial, brownian)", line);
    }
    cfg.model.name = v;
  } else if (key == "model.params.sigma" || key == "model.params.r" || key == "model.params.k") {
    positive();
    cfg.model.params[key.substr(13)] = v;
  } else if (key == "model.params.terms") {
    for (const auto& t : split(v, ',')) {
      const auto pc = split(t, ':');
      if (pc.size() != 2) throw ConfigError("model.params.terms: expected power:coeff pairs", line);
      parse_double(pc[0], key, line);
      parse_double(pc[1], key, line);
    }
    cfg.model.params["terms"] = v;
  } else if (key == "grid.eps") {
    cfg.grid.eps = positive();
  } else if (key == "grid.R") {
    cfg.grid.R = positive();
  } else if (key == "grid.N") {
    const auto n = parse_uint(v, key, line);
    if (n < 3) throw ConfigError("grid.N must be at least 3", line);
    cfg.grid.N = n;
  } else if (key == "grid.spacing") {
    if (v == "log") {
      cfg.grid.spacing = Spacing::log;
    } else if (v == "uniform") {
      cfg.grid.spacing = Spacing::uniform;
    } else {
      throw ConfigError("grid.spacing: expected log or uniform", line);
    }
  } else if (key == "sim.dt") {
    cfg.sim.dt = positive();
  } else if (key == "sim.T") {
    cfg.sim.T = positive();
  } else if (key == "sim.paths") {
    const auto n = parse_uint(v, key, line);
    if (n < 1) throw ConfigError("sim.paths must be at least 1", line);
    cfg.sim.paths = n;
  } else if (key == "sim.seed") {
    cfg.sim.seed = parse_uint(v, key, line);
  } else if (key == "sim.record_times") {
    cfg.sim.record_times = parse_list(v, key, line);
  } else if (key == "sim.initial") {
    check_initial_spec(v, key, line);
    cfg.sim.initial = v;
  } else if (key == "sim.kill_level") {
    cfg.sim.kill_level = num();
  } else if (key == "analysis.psi") {
    const auto parts = split(v, ':');
    const bool ok = v == "one" || v == "linear" || (parts.size() == 2 && parts[0] == "power" && parse_double(parts[1], key, line) >= 0.0);
    if (!ok) throw ConfigError("analysis.psi: expected one, linear or power:p", line);
    cfg.analysis.psi = v;
  } else if (key == "analysis.c") {
    const double c = num();
    if (!(c > 0.0 && c < 1.0)) throw ConfigError("analysis.c must lie in (0, 1)", line);
    cfg.analysis.c = c;
  } else if (key == "analysis.bins") {
    const auto n = parse_uint(v, key, line);
    if (n < 2) throw ConfigError("analysis.bins must be at least 2", line);
    cfg.analysis.bins = n;
  } else if (key == "analysis.fit_window") {
    const auto w = parse_list(v, key, line);
    if (w.size() != 2 || !(w[1] > w[0])) throw ConfigError("analysis.fit_window: expected lo,hi with lo < hi", line);
    cfg.analysis.fit_window = std::pair{w[0], w[1]};
  } else if (key == "analysis.mu0") {
    check_initial_spec(v, key, line);
    cfg.analysis.mu0 = v;
  } else if (key == "analysis.t_max") {
    cfg.analysis.t_max = positive();
  } else if (key == "analysis.t_step") {
    cfg.analysis.t_step = positive();
  } else if (key == "analysis.qe_t_min") {
    cfg.analysis.qe_t_min = positive();
  } else if (key == "analysis.qe_t_max") {
    cfg.analysis.qe_t_max = positive();
  } else if (key == "analysis.qe_points") {
    const auto n = parse_uint(v, key, line);
    if (n < 2) throw ConfigError("analysis.qe_points must be at least 2", line);
    cfg.analysis.qe_points = n;
  } else if (key == "analysis.qe_x") {
    cfg.analysis.qe_x = positive();
  } else if (key == "output.dir") {
    if (v.empty()) throw ConfigError("output.dir must not be empty", line);
    cfg.output.dir = v;
  } else if (key == "output.plot") {
    cfg.output.plot = parse_bool(v, key, line);
  } else {
    throw ConfigError("unknown key '" + key + "'", line);
  }
  cfg.given[key] = v;
}

// Cross-key checks, run once everything is applied.
inline void validate_config(const ExperimentConfig& cfg, const std::map<std::string, int>& lines) {
  auto line_of = [&](const std::string& k) {
    const auto it = lines.find(k);
    return it == lines.end() ? 0 : it->second;
  };
  if (cfg.model.name.empty()) throw ConfigError("missing required key model.name");
  if (cfg.model.name == "polynomial" && !cfg.model.params.count("terms")) {
    throw ConfigError("model.params.terms is required for the polynomial model", line_of("model.name"));
  }
  for (const auto& [k, v] : cfg.model.params) {
    const bool logistic = k == "sigma" || k == "r" || k == "k";
    if ((logistic && cfg.model.name != "logistic_feller") || (k == "terms" && cfg.model.name != "polynomial")) {
      throw ConfigError("model.params." + k + " does not apply to model " + cfg.model.name,
                        line_of("model.params." + k));
    }
  }
  if (cfg.grid.R && !(*cfg.grid.R > cfg.grid.eps)) throw ConfigError("grid.R must exceed grid.eps", line_of("grid.R"));
  if (!(cfg.sim.dt < cfg.sim.T)) throw ConfigError("sim.dt must be smaller than sim.T", line_of("sim.dt"));
  for (std::size_t i = 0; i < cfg.sim.record_times.size(); ++i) {
    const double t = cfg.sim.record_times[i];
    if (t < 0.0 || t > cfg.sim.T || (i > 0 && !(t > cfg.sim.record_times[i - 1]))) {
      throw ConfigError("sim.record_times must increase within [0, sim.T]", line_of("sim.record_times"));
    }
  }
  if (!(cfg.analysis.qe_t_max > cfg.analysis.qe_t_min)) {
    throw ConfigError("analysis.qe_t_max must exceed analysis.qe_t_min", line_of("analysis.qe_t_max"));
  }
  if (!(cfg.analysis.t_max > cfg.analysis.t_step)) {
    throw ConfigError("analysis.t_max must exceed analysis.t_step", line_of("analysis.t_max"));
  }
}

}  // namespace detail

/// Parses config text; environment overrides are applied when `use_env`.
inline ExperimentConfig parse_config_text(const std::string& text, bool use_env = true) {
  ExperimentConfig cfg;
  std::map<std::string, int> lines;
  std::istringstream in(text);
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    std::string s = raw;
    bool quoted = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] == '"') quoted = !quoted;
      if (s[i] == '#' && !quoted) {
        s.resize(i);
        break;
      }
    }
    s = detail::trim(s);
    if (s.empty()) continue;
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("expected key = value", line);
    const std::string key = detail::trim(s.substr(0, eq));
    const std::string value = detail::unquote(detail::trim(s.substr(eq + 1)));
    if (key.empty()) throw ConfigError("empty key", line);
    if (lines.count(key)) throw ConfigError("duplicate key '" + key + "'", line);
    lines[key] = line;
    detail::apply_key(cfg, key, value, line);
  }
  if (use_env) {
    for (const auto& key : detail::known_keys()) {
      if (const char* v = std::getenv(detail::env_name(key).c_str())) {
        try {
          detail::apply_key(cfg, key, detail::trim(v), 0);
        } catch (const ConfigError& e) {
          throw ConfigError(std::string("environment ") + detail::env_name(key) + ": " + e.what());
        }
        lines.erase(key);
      }
    }
  }
  detail::validate_config(cfg, lines);
  return cfg;
}

inline ExperimentConfig parse_config(const std::string& path, bool use_env = true) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str(), use_env);
}

/// FNV-1a over the sorted key=value pairs actually given.
inline std::uint64_t config_hash(const ExperimentConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [k, v] : cfg.given) {
    for (char c : k + "=" + v + "\n") {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

inline DiffusionModel make_model(const ExperimentConfig& cfg) {
  const auto& p = cfg.model.params;
  auto get = [&](const char* k) {
    const auto it = p.find(k);
    return it == p.end() ? 1.0 : detail::parse_double(it->second, k, 0);
  };
  if (cfg.model.name == "logistic_feller") return logistic_feller_model(get("sigma"), get("r"), get("k"));
  if (cfg.model.name == "brownian") {
    auto m = polynomial_drift_model({});
    m.name = "brownian";
    return m;
  }
  if (cfg.model.name == "polynomial") {
    std::vector<PolynomialTerm> terms;
    for (const auto& t : detail::split(p.at("terms"), ',')) {
      const auto pc = detail::split(t, ':');
      terms.push_back({detail::parse_double(pc[0], "terms", 0), detail::parse_double(pc[1], "terms", 0)});
    }
    return polynomial_drift_model(std::move(terms));
  }
  throw ConfigError("unknown model '" + cfg.model.name + "'");
}

}  // namespace qsd
