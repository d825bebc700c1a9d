#pragma once

// Stage orchestration for the command-line tool: classify, spectrum,
// simulate, converge, thm22, qergodic. Each stage writes CSV (17 significant
// digits, RFC 4180 quoting) and checks its contract; manifest.txt records the
// config hash, seed, versions, stage timings and outcomes.

#include <algorithm>
#include <array>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "qsd/analyze.hpp"
#include "qsd/boundary.hpp"
#include "qsd/config.hpp"
#include "qsd/model.hpp"
#include "qsd/simulate.hpp"
#include "qsd/spectral.hpp"

namespace qsd {

inline constexpr const char* kToolkitVersion = "1.0.0";

enum class Stage { classify, spectrum, simulate, converge, thm22, qergodic };

inline const std::array<Stage, 6>& all_stages() {
  static const std::array<Stage, 6> s = {Stage::classify, Stage::spectrum, Stage::simulate,
                                         Stage::converge, Stage::thm22,    Stage::qergodic};
  return s;
}

inline const char* to_string(Stage s) {
  switch (s) {
    case Stage::classify: return "classify";
    case Stage::spectrum: return "spectrum";
    case Stage::simulate: return "simulate";
    case Stage::converge: return "converge";
    case Stage::thm22: return "thm22";
    case Stage::qergodic: return "qergodic";
  }
  return "?";
}

inline Stage parse_stage(const std::string& name) {
  for (Stage s : all_stages()) {
    if (name == to_string(s)) return s;
  }
  throw Error("unknown stage '" + name + "'");
}

// ---------------------------------------------------------------- output

/// %.17g, which round-trips every double.
inline std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Shortest round-trip representation, for file names.
inline std::string fmt_short(double v) {
  char buf[40];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header) : out_(path) {
    if (!out_) throw Error("cannot write " + path.string());
    row(header);
  }

  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << csv_field(cells[i]);
    out_ << "\r\n";
  }

 private:
  std::ofstream out_;
};

struct SvgSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

/// Minimal line chart; non-positive values are skipped on a log axis.
inline void write_svg_chart(const std::filesystem::path& path, const std::string& title, const std::string& xlabel,
                            const std::vector<SvgSeries>& series, bool log_y) {
  const double W = 640, H = 420, L = 70, Rm = 20, T = 40, B = 50;
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  auto ty = [&](double y) { return log_y ? std::log10(y) : y; };
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i]) || (log_y && !(s.y[i] > 0.0))) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, ty(s.y[i]));
      y1 = std::max(y1, ty(s.y[i]));
    }
  }
  if (!(x1 > x0)) x1 = x0 + 1.0;
  if (!(y1 > y0)) y1 = y0 + 1.0;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - Rm); };
  auto py = [&](double y) { return H - B - (ty(y) - y0) / (y1 - y0) * (H - T - B); };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  std::ofstream f(path);
  if (!f) throw Error("cannot write " + path.string());
  f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  f << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  f << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">"
    << title << "</text>\n";
  f << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - Rm << "\" y2=\"" << H - B
    << "\" stroke=\"black\"/>\n";
  f << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double xv = x0 + (x1 - x0) * k / 4.0;
    const double yv = y0 + (y1 - y0) * k / 4.0;
    const double yp = H - B - (H - T - B) * k / 4.0;
    char xb[32], yb[32];
    std::snprintf(xb, sizeof xb, "%.3g", xv);
    std::snprintf(yb, sizeof yb, "%.3g", log_y ? std::pow(10.0, yv) : yv);
    f << "<text x=\"" << px(xv) << "\" y=\"" << H - B + 18
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << xb << "</text>\n";
    f << "<text x=\"" << L - 6 << "\" y=\"" << yp + 4
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << yb << "</text>\n";
  }
  f << "<text x=\"" << W / 2 << "\" y=\"" << H - 12
    << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << xlabel << "</text>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* col = colors[s % 6];
    f << "<polyline fill=\"none\" stroke=\"" << col << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < series[s].x.size(); ++i) {
      const double y = series[s].y[i];
      if (!std::isfinite(y) || (log_y && !(y > 0.0))) continue;
      f << px(series[s].x[i]) << ',' << py(y) << ' ';
    }
    f << "\"/>\n";
    f << "<text x=\"" << W - Rm - 4 << "\" y=\"" << T + 14 * (s + 1)
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\" fill=\"" << col << "\">"
      << series[s].name << "</text>\n";
  }
  f << "</svg>\n";
}

// ---------------------------------------------------------------- helpers

inline std::function<double(double)> make_psi(const std::string& spec) {
  if (spec == "one") return [](double) { return 1.0; };
  if (spec == "linear") return [](double x) { return 1.0 + x; };
  const auto parts = detail::split(spec, ':');
  if (parts.size() == 2 && parts[0] == "power") {
    const double p = detail::parse_double(parts[1], "analysis.psi", 0);
    return [p](double x) { return 1.0 + std::pow(x, p); };
  }
  throw ConfigError("analysis.psi: unknown psi '" + spec + "'");
}

inline std::size_t nearest_node(const Grid& grid, double x) {
  const auto it = std::lower_bound(grid.points.begin(), grid.points.end(), x);
  std::size_t j = static_cast<std::size_t>(it - grid.points.begin());
  if (j == grid.size()) return j - 1;
  if (j > 0 && x - grid.points[j - 1] < grid.points[j] - x) --j;
  return j;
}

/// A law on the grid nodes from an initial-distribution spec string.
inline Vec grid_law_from_spec(const std::string& spec, const SpectralData& sd) {
  const Grid& g = sd.grid;
  const long n = static_cast<long>(g.size());
  const auto parts = detail::split(spec, ':');
  Vec mu = Vec::Zero(n);
  if (parts[0] == "point") {
    mu[static_cast<long>(nearest_node(g, detail::parse_double(parts[1], "mu0", 0)))] = 1.0;
  } else if (parts[0] == "uniform") {
    const double a = detail::parse_double(parts[1], "mu0", 0);
    const double b = detail::parse_double(parts[2], "mu0", 0);
    for (long i = 0; i < n; ++i) {
      const double lo = std::max(a, g.cell_lo(static_cast<std::size_t>(i)));
      const double hi = std::min(b, g.cell_hi(static_cast<std::size_t>(i)));
      if (hi > lo) mu[i] = hi - lo;
    }
  } else if (parts[0] == "alpha") {
    mu = sd.alpha_weights;
  } else if (parts[0] == "beta") {
    mu = sd.beta_weights;
  } else if (parts[0] == "upper_half_alpha") {
    mu = sd.alpha_weights;
    mu.head(n / 2).setZero();
  } else {
    throw ConfigError("unknown initial spec '" + spec + "'");
  }
  const double s = mu.sum();
  if (!(s > 0.0)) throw ConfigError("initial spec '" + spec + "' has no mass on the grid");
  return mu / s;
}

inline InitialSpec initial_from_spec(const std::string& spec, const SpectralData* sd) {
  const auto parts = detail::split(spec, ':');
  if (parts[0] == "point") return InitialSpec::point(detail::parse_double(parts[1], "sim.initial", 0));
  if (parts[0] == "uniform") {
    return InitialSpec::uniform(detail::parse_double(parts[1], "sim.initial", 0),
                                detail::parse_double(parts[2], "sim.initial", 0));
  }
  if (!sd) throw Error("initial spec '" + spec + "' needs the spectrum stage");
  const Vec mu = grid_law_from_spec(spec, *sd);
  return InitialSpec::grid_measure(sd->grid, std::span<const double>(mu.data(), static_cast<std::size_t>(mu.size())));
}

inline bool needs_spectrum(const std::string& initial_spec) {
  const auto kind = detail::split(initial_spec, ':')[0];
  return kind != "point" && kind != "uniform";
}

// ---------------------------------------------------------------- pipeline

struct StageOutcome {
  Stage stage;
  bool ok = true;
  std::string message;  // failing contract, if any
  double seconds = 0.0;
  bool auto_inserted = false;
};

struct PipelineOptions {
  std::filesystem::path out_dir;  // empty: cfg.output.dir
  bool plot = false;              // OR-ed with cfg.output.plot
  unsigned threads = 0;
  std::ostream* log = &std::clog;
};

namespace detail {

struct PipelineState {
  const ExperimentConfig& cfg;
  DiffusionModel model;
  std::filesystem::path dir;
  bool plot = false;
  unsigned threads = 0;
  std::ostream& log;
  std::optional<Grid> grid;
  std::optional<GeneratorMatrix> gen;
  std::optional<SpectralData> spec;
  std::unique_ptr<SpectralSemigroup> semigroup;
  std::vector<std::pair<std::string, std::string>> notes;  // extra manifest lines
};

inline std::string run_classify(PipelineState& st) {
  CsvWriter csv(st.dir / "boundary_report.csv", {"endpoint", "classification", "I_status", "I_value",
                                                  "I_tail_exponent", "J_status", "J_value", "J_tail_exponent"});
  std::string failure;
  for (Endpoint e : {Endpoint::zero, Endpoint::infinity}) {
    const auto r = classify_boundary(st.model, e);
    auto val = [](const IntegralVerdict& v) { return v.value ? fmt17(*v.value) : std::string("inf"); };
    csv.row({to_string(e), to_string(r.classification), to_string(r.I.status), val(r.I),
             fmt17(r.I.tail_exponent_estimate), to_string(r.J.status), val(r.J), fmt17(r.J.tail_exponent_estimate)});
    st.log << "  " << to_string(e) << ": " << to_string(r.classification) << '\n';
    if (r.classification == BoundaryClass::unknown) failure = std::string("classification at ") + to_string(e) + " is inconclusive";
  }
  try {
    st.notes.emplace_back("certain_absorption", check_certain_absorption(st.model) ? "true" : "false");
  } catch (const IndeterminacyError&) {
    st.notes.emplace_back("certain_absorption", "inconclusive");
  }
  return failure;
}

inline std::string run_spectrum(PipelineState& st) {
  const auto& gc = st.cfg.grid;
  const double R = gc.R.value_or(st.model.domain_hint.x_max);
  st.grid = build_grid(st.model, gc.eps, R, gc.N, gc.spacing);
  st.gen = discretize_generator(st.model, *st.grid);
  st.spec = build_spectral_data(st.model, *st.grid, *st.gen);
  st.semigroup = std::make_unique<SpectralSemigroup>(*st.gen);
  const auto& s = *st.spec;
  const auto& g = *st.grid;

  // Contract checks.
  double orth = 0.0;
  const Vec m = g.weights();
  for (std::size_t a = 0; a < s.etas.size(); ++a) {
    for (std::size_t b = 0; b < s.etas.size(); ++b) {
      const double v = s.etas[a].cwiseProduct(s.etas[b]).dot(m) - (a == b ? 1.0 : 0.0);
      orth = std::max(orth, std::abs(v));
    }
  }
  const auto Lt = h_transform_generator(*st.gen, s);
  const auto tilde = generator_spectrum(Lt);
  double shift = std::abs(tilde[0]);
  for (std::size_t k = 1; k < s.lambdas.size(); ++k) {
    const double want = s.lambdas[k] - s.lambda1;
    shift = std::max(shift, std::abs(tilde[k] - want) / want);
  }
  const double rev = verify_reversibility(Lt, s) / reversibility_scale(Lt, s);

  std::vector<double> bs;
  for (int k = 0; k < 64; ++k) bs.push_back(g.points[static_cast<std::size_t>((g.size() - 1) * (k + 0.5) / 64.0)]);
  const auto dt = delta_tilde(st.model, s, bs);

  {
    CsvWriter csv(st.dir / "spectrum.csv", {"x", "m_weight", "eta1", "eta2", "alpha", "beta", "q_tilde"});
    for (std::size_t i = 0; i < g.size(); ++i) {
      const auto k = static_cast<long>(i);
      csv.row({fmt17(g.points[i]), fmt17(g.speed_weights[i]), fmt17(s.eta1[k]), fmt17(s.eta2[k]),
               fmt17(s.alpha_weights[k]), fmt17(s.beta_weights[k]), fmt17(s.q_tilde[k])});
    }
  }
  {
    std::ofstream meta(st.dir / "spectrum_meta.txt");
    meta << "lambda1=" << fmt17(s.lambda1) << "\nlambda2=" << fmt17(s.lambda2) << "\ngap=" << fmt17(s.gap())
         << "\nm_eta1=" << fmt17(s.m_eta1) << "\ndelta_tilde=" << fmt17(dt.value)
         << "\ndelta_tilde_argmax_b=" << fmt17(dt.argmax_b) << "\ngrid.eps=" << fmt17(g.eps)
         << "\ngrid.R=" << fmt17(g.R) << "\ngrid.N=" << g.size() << "\ngrid.spacing=" << to_string(g.spacing)
         << "\northonormality_residual=" << fmt17(orth) << "\nspectrum_shift_residual=" << fmt17(shift)
         << "\nreversibility_residual=" << fmt17(rev) << '\n';
  }
  if (st.plot) {
    std::vector<double> x(g.points), e1(g.size()), al(g.size()), be(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
      const auto k = static_cast<long>(i);
      e1[i] = s.eta1[k] / s.eta1.maxCoeff();
      al[i] = s.alpha_weights[k] / s.alpha_weights.maxCoeff();
      be[i] = s.beta_weights[k] / s.beta_weights.maxCoeff();
    }
    write_svg_chart(st.dir / "spectrum.svg", "eta1, alpha, beta (scaled to max 1)", "x",
                    {{"eta1", x, e1}, {"alpha", x, al}, {"beta", x, be}}, false);
  }
  st.log << "  lambda1=" << fmt17(s.lambda1) << " lambda2=" << fmt17(s.lambda2) << '\n';
  if (!(orth < 1e-10)) return "m-orthonormality residual " + fmt17(orth) + " >= 1e-10";
  if (!(shift < 1e-10)) return "spectrum shift residual " + fmt17(shift) + " >= 1e-10";
  if (!(rev < 1e-10)) return "reversibility residual " + fmt17(rev) + " >= 1e-10";
  return {};
}

inline std::string run_simulate(PipelineState& st) {
  const auto& sc = st.cfg.sim;
  SimConfig cfg;
  cfg.dt = sc.dt;
  cfg.T = sc.T;
  cfg.n_paths = sc.paths;
  cfg.seed = sc.seed;
  cfg.record_times = sc.record_times;
  cfg.left_kill_level = sc.kill_level;
  cfg.threads = st.threads;
  const auto init = initial_from_spec(sc.initial, st.spec ? &*st.spec : nullptr);
  const auto ens = simulate_killed(st.model, init, cfg);
  CsvWriter surv(st.dir / "survival.csv", {"t", "n_alive", "fraction"});
  std::size_t overflow = 0;
  std::vector<double> ts, fr;
  for (const auto& e : ens) {
    CsvWriter csv(st.dir / ("ensemble_t" + fmt_short(e.time) + ".csv"), {"path_id", "alive", "position"});
    for (std::size_t p = 0; p < e.positions.size(); ++p) {
      csv.row({std::to_string(p), e.alive[p] ? "1" : "0", fmt17(e.positions[p])});
    }
    surv.row({fmt17(e.time), std::to_string(e.n_alive), fmt17(e.survival_fraction())});
    overflow = std::max(overflow, e.overflow_kills);
    ts.push_back(e.time);
    fr.push_back(e.survival_fraction());
  }
  if (st.plot && !ts.empty()) write_svg_chart(st.dir / "survival.svg", "survival fraction", "t", {{"survival", ts, fr}}, true);
  st.notes.emplace_back("simulate.overflow_kills", std::to_string(overflow));
  if (overflow > 0) return std::to_string(overflow) + " paths killed by drift overflow";
  return {};
}

inline std::vector<double> sample_times(double t_max, double step) {
  std::vector<double> ts;
  const auto n = static_cast<std::size_t>(std::floor(t_max / step + 1e-9));
  for (std::size_t i = 0; i <= n; ++i) ts.push_back(step * static_cast<double>(i));
  return ts;
}

inline std::string run_converge(PipelineState& st) {
  const auto& s = *st.spec;
  const auto& ac = st.cfg.analysis;
  const Vec mu0 = grid_law_from_spec(ac.mu0, s);
  const auto psi = make_psi_spec(make_psi(ac.psi), s, ac.c);
  const auto ts = sample_times(ac.t_max, ac.t_step);
  const auto laws = conditional_evolution_exact(*st.semigroup, s, mu0, ts);
  std::vector<double> tv, ps, sv;
  CsvWriter csv(st.dir / "tv_decay.csv", {"t", "tv", "psi", "survival"});
  for (const auto& c : laws) {
    tv.push_back(tv_distance(c.law, s.alpha_weights));
    ps.push_back(psi_distance(c.law, s.alpha_weights, psi, s.grid));
    sv.push_back(c.survival);
    csv.row({fmt17(c.t), fmt17(tv.back()), fmt17(ps.back()), fmt17(c.survival)});
  }
  const auto fit = fit_rate(ts, tv, 1e-12, ac.fit_window);
  CsvWriter rf(st.dir / "rate_fit.csv", {"C", "gamma", "r2", "window"});
  rf.row({fmt17(fit.fitted_C), fmt17(fit.fitted_gamma), fmt17(fit.r_squared),
          fmt17(fit.fit_window.first) + "," + fmt17(fit.fit_window.second)});
  if (st.plot) {
    write_svg_chart(st.dir / "tv_decay.svg", "distance to the QSD", "t", {{"tv", ts, tv}, {"psi", ts, ps}}, true);
  }
  const double rel = std::abs(fit.fitted_gamma / s.gap() - 1.0);
  st.log << "  gamma=" << fmt17(fit.fitted_gamma) << " gap=" << fmt17(s.gap()) << '\n';
  if (!(rel <= 0.05)) return "fitted gamma differs from lambda2-lambda1 by " + fmt17(100.0 * rel) + "%";
  return {};
}

inline std::string run_thm22(PipelineState& st) {
  const auto& s = *st.spec;
  const auto& ac = st.cfg.analysis;
  const Vec mu0 = grid_law_from_spec(ac.mu0, s);
  const auto psi = make_psi_spec(make_psi(ac.psi), s, ac.c);
  const auto ts = sample_times(ac.t_max, ac.t_step);
  const auto rep = theorem22_check(*st.semigroup, s, psi, mu0, ts);
  CsvWriter csv(st.dir / "thm22.csv", {"t", "lhs", "rhs", "holds"});
  std::vector<double> l, r;
  for (const auto& row : rep.rows) {
    csv.row({fmt17(row.t), fmt17(row.lhs), fmt17(row.rhs), row.holds ? "1" : "0"});
    l.push_back(row.lhs);
    r.push_back(row.rhs);
  }
  if (st.plot) write_svg_chart(st.dir / "thm22.svg", "psi-distance and bound", "t", {{"lhs", ts, l}, {"rhs", ts, r}}, true);
  st.notes.emplace_back("thm22.t_mu", rep.t_mu ? fmt17(*rep.t_mu) : "none");
  st.notes.emplace_back("thm22.gamma", fmt17(rep.gamma));
  st.notes.emplace_back("thm22.gamma_halved", rep.gamma_halved ? "true" : "false");
  st.notes.emplace_back("thm22.trivially_true", rep.trivially_true ? "true" : "false");
  if (!rep.holds_eventually()) return "bound does not hold on any final segment of the sampled times";
  return {};
}

inline std::string run_qergodic(PipelineState& st) {
  const auto& s = *st.spec;
  const auto& ac = st.cfg.analysis;
  const long n = s.eta1.size();
  // g = sign(x - median of β)
  double acc = 0.0;
  double med = s.grid.points.back();
  for (long i = 0; i < n; ++i) {
    acc += s.beta_weights[i];
    if (acc >= 0.5 * s.beta_weights.sum()) {
      med = s.grid.points[static_cast<std::size_t>(i)];
      break;
    }
  }
  Vec g(n);
  for (long i = 0; i < n; ++i) {
    const double x = s.grid.points[static_cast<std::size_t>(i)];
    g[i] = x > med ? 1.0 : (x < med ? -1.0 : 0.0);
  }
  std::vector<double> ts;
  for (std::size_t i = 0; i < ac.qe_points; ++i) {
    const double f = static_cast<double>(i) / static_cast<double>(ac.qe_points - 1);
    ts.push_back(ac.qe_t_min * std::pow(ac.qe_t_max / ac.qe_t_min, f));
  }
  const auto rows = quasi_ergodic_error(*st.semigroup, s, g, nearest_node(s.grid, ac.qe_x), ts);
  CsvWriter csv(st.dir / "qe_error.csv", {"t", "estimate", "beta_g", "error"});
  std::vector<double> err;
  for (const auto& r : rows) {
    csv.row({fmt17(r.t), fmt17(r.estimate), fmt17(r.beta_g), fmt17(r.error)});
    err.push_back(r.error);
  }
  if (st.plot) write_svg_chart(st.dir / "qe_error.svg", "quasi-ergodic error", "t", {{"error", ts, err}}, true);
  const double lo = std::max(ac.qe_t_min, ac.qe_t_max / 10.0);
  const double slope = loglog_slope(rows, lo * (1.0 - 1e-12), ac.qe_t_max * (1.0 + 1e-12));
  st.notes.emplace_back("qergodic.slope", fmt17(slope));
  st.log << "  log-log slope=" << fmt17(slope) << '\n';
  if (!(slope >= -1.15 && slope <= -0.85)) return "log-log slope " + fmt17(slope) + " outside [-1.15, -0.85]";
  return {};
}

}  // namespace detail

/// Runs the requested stages (plus dependencies) in order. Returns 0 iff every
/// stage met its contract.
inline int run_pipeline(const ExperimentConfig& cfg, const std::vector<Stage>& requested,
                        const PipelineOptions& opt = {}) {
  std::set<Stage> want(requested.begin(), requested.end());
  std::set<Stage> inserted;
  const bool sim_needs_spec = want.count(Stage::simulate) && needs_spectrum(cfg.sim.initial);
  if ((want.count(Stage::converge) || want.count(Stage::thm22) || want.count(Stage::qergodic) || sim_needs_spec) &&
      !want.count(Stage::spectrum)) {
    want.insert(Stage::spectrum);
    inserted.insert(Stage::spectrum);
  }
  std::ostream& log = opt.log ? *opt.log : std::clog;
  const std::filesystem::path dir = opt.out_dir.empty() ? std::filesystem::path(cfg.output.dir) : opt.out_dir;
  std::filesystem::create_directories(dir);

  detail::PipelineState st{cfg, make_model(cfg), dir, opt.plot || cfg.output.plot, opt.threads, log,
                           {}, {}, {}, {}, {}};
  std::vector<StageOutcome> outcomes;
  bool ok = true;
  for (Stage s : all_stages()) {
    if (!want.count(s)) continue;
    StageOutcome o;
    o.stage = s;
    o.auto_inserted = inserted.count(s) > 0;
    log << "[" << to_string(s) << "]" << (o.auto_inserted ? " (auto-inserted)" : "") << '\n';
    const auto t0 = std::chrono::steady_clock::now();
    try {
      switch (s) {
        case Stage::classify: o.message = detail::run_classify(st); break;
        case Stage::spectrum: o.message = detail::run_spectrum(st); break;
        case Stage::simulate: o.message = detail::run_simulate(st); break;
        case Stage::converge: o.message = detail::run_converge(st); break;
        case Stage::thm22: o.message = detail::run_thm22(st); break;
        case Stage::qergodic: o.message = detail::run_qergodic(st); break;
      }
    } catch (const std::exception& e) {
      o.message = std::string("error: ") + e.what();
    }
    o.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    o.ok = o.message.empty();
    if (!o.ok) {
      ok = false;
      log << "  FAILED: " << o.message << '\n';
    }
    outcomes.push_back(o);
    if (!o.ok && s == Stage::spectrum) break;  // everything after depends on it
  }

  std::ofstream man(dir / "manifest.txt");
  char hash[24];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(config_hash(cfg)));
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  man << "config_hash=" << hash << "\nseed=" << cfg.sim.seed << "\ntoolkit_version=" << kToolkitVersion
      << "\ncompiler=" << __VERSION__ << "\neigen_version=" << EIGEN_WORLD_VERSION << '.' << EIGEN_MAJOR_VERSION
      << '.' << EIGEN_MINOR_VERSION << "\nmodel=" << cfg.model.name << "\ntimestamp=" << stamp << '\n';
  for (const auto& [k, v] : cfg.given) man << "config." << k << "=" << v << '\n';
  for (const auto& o : outcomes) {
    man << "stage." << to_string(o.stage) << ".status=" << (o.ok ? "ok" : "failed: " + o.message) << '\n';
    man << "stage." << to_string(o.stage) << ".seconds=" << fmt17(o.seconds) << '\n';
    if (o.auto_inserted) man << "stage." << to_string(o.stage) << ".auto_inserted=true\n";
  }
  for (const auto& [k, v] : st.notes) man << k << "=" << v << '\n';
  man << "exit_status=" << (ok ? 0 : 1) << '\n';
  return ok ? 0 : 1;
}

}  // namespace qsd
