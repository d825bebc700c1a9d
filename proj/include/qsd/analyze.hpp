#pragma once

// Distances between laws on the grid, exact conditional evolution through the
// spectral semigroup, exponential rate fits, survival asymptotics, the
// ψ-weighted convergence bound, and the quasi-ergodic 1/t error.
//
// TV is reported as the half-sum ½Σ|p-q|. The sup over |g| <= 1 convention
// is twice that; psi_distance follows the sup convention, so ψ ≡ 1 gives 2·TV.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "qsd/errors.hpp"
#include "qsd/quadrature.hpp"
#include "qsd/spectral.hpp"

namespace qsd {

namespace detail {

inline void check_law(std::span<const double> p, const char* who) {
  double s = 0.0;
  for (double v : p) {
    if (!(v >= 0.0)) throw Error(std::string(who) + ": negative or NaN mass");
    s += v;
  }
  if (std::abs(s - 1.0) > 1e-9) throw Error(std::string(who) + ": law does not sum to 1");
}

inline std::span<const double> as_span(const Vec& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

}  // namespace detail

/// ½ Σ |p_i - q_i|.
inline double tv_distance(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw Error("tv_distance: length mismatch");
  detail::check_law(p, "tv_distance");
  detail::check_law(q, "tv_distance");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
  return 0.5 * s;
}

inline double tv_distance(const Vec& p, const Vec& q) {
  return tv_distance(detail::as_span(p), detail::as_span(q));
}

struct PsiSpec {
  std::function<double(double)> psi;
  double alpha_psi = 0.0;             // α(ψ)
  double alpha_psi2_over_eta1 = 0.0;  // α(ψ²/η₁)
  double c = 0.5;
};

/// ψ with its α-moments computed by grid sums; ψ >= 1 is checked at every node.
inline PsiSpec make_psi_spec(std::function<double(double)> psi, const SpectralData& spec, double c = 0.5) {
  if (!(c > 0.0 && c < 1.0)) throw Error("make_psi_spec: c must lie in (0, 1)");
  PsiSpec s;
  s.c = c;
  for (long i = 0; i < spec.eta1.size(); ++i) {
    const double v = psi(spec.grid.points[static_cast<std::size_t>(i)]);
    if (!(v >= 1.0)) throw Error("make_psi_spec: psi < 1 at a grid node");
    s.alpha_psi += spec.alpha_weights[i] * v;
    s.alpha_psi2_over_eta1 += spec.alpha_weights[i] * v * v / spec.eta1[i];
  }
  if (!std::isfinite(s.alpha_psi) || !std::isfinite(s.alpha_psi2_over_eta1)) {
    throw Error("make_psi_spec: psi moments are not finite");
  }
  s.psi = std::move(psi);
  return s;
}

/// Σ ψ(x_i) |p_i - q_i|, the sup of |(p - q)(g)| over |g| <= ψ.
inline double psi_distance(std::span<const double> p, std::span<const double> q, const PsiSpec& psi,
                           const Grid& grid) {
  if (p.size() != q.size() || p.size() != grid.size()) throw Error("psi_distance: length mismatch");
  detail::check_law(p, "psi_distance");
  detail::check_law(q, "psi_distance");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += psi.psi(grid.points[i]) * std::abs(p[i] - q[i]);
  return s;
}

inline double psi_distance(const Vec& p, const Vec& q, const PsiSpec& psi, const Grid& grid) {
  return psi_distance(detail::as_span(p), detail::as_span(q), psi, grid);
}

/// (g∘μ)_i = g(x_i)μ_i / μ(g).
inline Vec reweight(const Vec& g, const Vec& mu) {
  if (g.size() != mu.size()) throw Error("reweight: length mismatch");
  Vec out(mu.size());
  double total = 0.0;
  for (long i = 0; i < mu.size(); ++i) {
    if (mu[i] > 0.0 && !(g[i] >= 0.0)) throw Error("reweight: g must be non-negative on the support of mu");
    out[i] = mu[i] > 0.0 ? g[i] * mu[i] : 0.0;
    total += out[i];
  }
  if (!(total > 0.0)) throw DegeneracyError("reweight: mu(g) = 0");
  return out / total;
}

inline Vec reweight(const std::function<double(double)>& g, const Vec& mu, const Grid& grid) {
  Vec gv(mu.size());
  for (long i = 0; i < mu.size(); ++i) gv[i] = g(grid.points[static_cast<std::size_t>(i)]);
  return reweight(gv, mu);
}

struct ConditionalLaw {
  double t = 0.0;
  Vec law;                    // P_μ(X_t ∈ · | T₀ > t) on the grid
  double survival = 1.0;      // P_μ(T₀ > t); may underflow to 0
  double log_survival = 0.0;  // always finite
};

/// μ_t ∝ μ₀ᵀ exp(tL), evaluated with the e^{λ₁t} prescaling so the
/// normalizer stays representable.
inline std::vector<ConditionalLaw> conditional_evolution_exact(const SpectralSemigroup& P,
                                                               const SpectralData& spec, const Vec& mu0,
                                                               std::span<const double> times) {
  detail::check_law(detail::as_span(mu0), "conditional_evolution_exact");
  std::vector<ConditionalLaw> out;
  out.reserve(times.size());
  for (double t : times) {
    if (!(t >= 0.0)) throw Error("conditional_evolution_exact: negative time");
    ConditionalLaw c;
    c.t = t;
    if (t == 0.0) {
      c.law = mu0;
    } else {
      Vec v = P.apply_left(t, mu0, spec.lambda1);
      for (long i = 0; i < v.size(); ++i) v[i] = std::max(0.0, v[i]);  // rounding-level negatives
      const double z = v.sum();
      if (!(z > 0.0)) throw RangeError("conditional_evolution_exact: survival underflow");
      c.law = v / z;
      c.log_survival = std::log(z) - spec.lambda1 * t;
      c.survival = std::exp(c.log_survival);
    }
    out.push_back(std::move(c));
  }
  return out;
}

inline std::vector<ConditionalLaw> conditional_evolution_exact(const SpectralData& spec,
                                                               const GeneratorMatrix& gen, const Vec& mu0,
                                                               std::span<const double> times) {
  return conditional_evolution_exact(SpectralSemigroup(gen), spec, mu0, times);
}

struct ConvergenceReport {
  std::vector<double> times;
  std::vector<double> distances;
  double fitted_C = 0.0;
  double fitted_gamma = 0.0;
  std::pair<double, double> fit_window{0.0, 0.0};
  double r_squared = 0.0;
  std::size_t points_used = 0;
};

/// Least squares of log d against t over the window from the first time d
/// falls below half its initial value to the last time it exceeds
/// 100·floor. An explicit window overrides the automatic one.
inline ConvergenceReport fit_rate(std::span<const double> times, std::span<const double> distances,
                                  double floor = 1e-12,
                                  std::optional<std::pair<double, double>> window = std::nullopt) {
  if (times.size() != distances.size()) throw Error("fit_rate: length mismatch");
  ConvergenceReport r;
  r.times.assign(times.begin(), times.end());
  r.distances.assign(distances.begin(), distances.end());
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (i > 0 && !(times[i] > times[i - 1])) throw Error("fit_rate: times must increase");
    if (!(distances[i] >= 0.0)) throw Error("fit_rate: distances must be non-negative");
  }
  if (times.empty()) throw InsufficientDecayError("fit_rate: no points");
  if (window) {
    r.fit_window = *window;
  } else {
    const double d0 = distances[0];
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < times.size(); ++i) {
      if (distances[i] < 0.5 * d0) {
        lo = times[i];
        break;
      }
    }
    for (std::size_t i = times.size(); i-- > 0;) {
      if (distances[i] > 100.0 * floor) {
        hi = times[i];
        break;
      }
    }
    r.fit_window = {lo, hi};
  }
  std::vector<double> ts, ys;
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (times[i] >= r.fit_window.first && times[i] <= r.fit_window.second && distances[i] > floor) {
      ts.push_back(times[i]);
      ys.push_back(std::log(distances[i]));
    }
  }
  if (ts.size() < 5) {
    throw InsufficientDecayError("fit_rate: only " + std::to_string(ts.size()) +
                                 " usable points in the fit window (need 5)");
  }
  const auto n = static_cast<double>(ts.size());
  double mt = 0.0, my = 0.0;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    mt += ts[i];
    my += ys[i];
  }
  mt /= n;
  my /= n;
  double stt = 0.0, sty = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    stt += (ts[i] - mt) * (ts[i] - mt);
    sty += (ts[i] - mt) * (ys[i] - my);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  const double slope = sty / stt;
  r.fitted_gamma = -slope;
  r.fitted_C = std::exp(my - slope * mt);
  r.r_squared = syy > 0.0 ? std::clamp(sty * sty / (stt * syy), 0.0, 1.0) : 1.0;
  r.points_used = ts.size();
  return r;
}

struct SurvivalRow {
  std::size_t node = 0;
  double x = 0.0;
  double t = 0.0;
  double scaled = 0.0;  // e^{λ₁t} P_x(T₀ > t), or with X_t ∈ B
  double limit = 0.0;   // η₁(x) m(η₁), or α(B) m(η₁)
  double rel_error = 0.0;
};

/// e^{λ₁t}(exp(tL)1_B)(x) against its limit η₁(x)·α(B)·m(η₁); B defaults to
/// the whole grid, where α(B) = 1.
inline std::vector<SurvivalRow> survival_asymptotics(const SpectralSemigroup& P, const SpectralData& spec,
                                                     std::span<const std::size_t> nodes,
                                                     std::span<const double> times,
                                                     std::optional<Vec> indicator = std::nullopt) {
  const long n = spec.eta1.size();
  const Vec f = indicator ? *indicator : Vec::Ones(n);
  const double alpha_B = spec.alpha_weights.dot(f);
  std::vector<SurvivalRow> rows;
  for (double t : times) {
    const Vec v = P.apply(t, f, spec.lambda1);
    for (std::size_t i : nodes) {
      if (i >= static_cast<std::size_t>(n)) throw Error("survival_asymptotics: node index out of range");
      SurvivalRow r;
      r.node = i;
      r.x = spec.grid.points[i];
      r.t = t;
      r.scaled = v[static_cast<long>(i)];
      r.limit = spec.eta1[static_cast<long>(i)] * alpha_B * spec.m_eta1;
      r.rel_error = std::abs(r.scaled - r.limit) / std::abs(r.limit);
      rows.push_back(r);
    }
  }
  return rows;
}

inline std::vector<SurvivalRow> survival_asymptotics(const SpectralData& spec, const GeneratorMatrix& gen,
                                                     std::span<const std::size_t> nodes,
                                                     std::span<const double> times) {
  return survival_asymptotics(SpectralSemigroup(gen), spec, nodes, times);
}

struct Thm22Row {
  double t = 0.0;
  double lhs = 0.0;
  double rhs = 0.0;
  bool holds = false;
};

struct Thm22Report {
  std::vector<Thm22Row> rows;
  double D1 = 0.0;
  double D2 = 0.0;
  double moment_factor = 0.0;  // (α(ψ²/η₁)/m(η₁))^{1/2}
  double divergence = 0.0;     // ‖d(η₁∘μ₀)/dβ - 1‖_{L²(β)}
  double gamma = 0.0;
  bool gamma_halved = false;   // bound failed at λ₂-λ₁ and was re-run at half
  bool trivially_true = false; // divergence infinite
  std::optional<double> t_mu;  // first sampled time from which the bound holds throughout

  bool holds_eventually() const { return trivially_true || t_mu.has_value(); }
};

namespace detail {

inline std::optional<double> first_time_holding_after(const std::vector<Thm22Row>& rows) {
  std::optional<double> t;
  for (std::size_t i = rows.size(); i-- > 0;) {
    if (!rows[i].holds) break;
    t = rows[i].t;
  }
  return t;
}

}  // namespace detail

/// ‖μ_t - α‖_ψ against max{D₁,D₂}·(α(ψ²/η₁)/m(η₁))^{1/2}·‖d(η₁∘μ₀)/dβ - 1‖_{L²(β)}·e^{-γt}
/// with D₁ = 1 + (1+α(ψ))/(1-c), D₂ = 2 + α(ψ), γ = λ₂-λ₁ unless given.
inline Thm22Report theorem22_check(const SpectralSemigroup& P, const SpectralData& spec, const PsiSpec& psi,
                                   const Vec& mu0, std::span<const double> times,
                                   std::optional<double> gamma = std::nullopt) {
  Thm22Report rep;
  rep.D1 = 1.0 + (1.0 + psi.alpha_psi) / (1.0 - psi.c);
  rep.D2 = 2.0 + psi.alpha_psi;
  rep.moment_factor = std::sqrt(psi.alpha_psi2_over_eta1 / spec.m_eta1);
  const Vec eta_mu = reweight(spec.eta1, mu0);
  double div2 = 0.0;
  for (long i = 0; i < eta_mu.size(); ++i) {
    const double b = spec.beta_weights[i];
    if (!(b > 0.0)) {
      if (eta_mu[i] > 0.0) rep.trivially_true = true;
      continue;
    }
    const double r = eta_mu[i] / b - 1.0;
    div2 += r * r * b;
  }
  rep.divergence = rep.trivially_true ? std::numeric_limits<double>::infinity() : std::sqrt(div2);
  const auto laws = conditional_evolution_exact(P, spec, mu0, times);
  std::vector<double> lhs;
  for (const auto& c : laws) lhs.push_back(psi_distance(c.law, spec.alpha_weights, psi, spec.grid));

  auto evaluate = [&](double g) {
    std::vector<Thm22Row> rows;
    const double k = std::max(rep.D1, rep.D2) * rep.moment_factor * rep.divergence;
    for (std::size_t i = 0; i < laws.size(); ++i) {
      Thm22Row r;
      r.t = laws[i].t;
      r.lhs = lhs[i];
      r.rhs = rep.trivially_true ? std::numeric_limits<double>::infinity() : k * std::exp(-g * r.t);
      r.holds = r.lhs <= r.rhs;
      rows.push_back(r);
    }
    return rows;
  };
  rep.gamma = gamma.value_or(spec.gap());
  rep.rows = evaluate(rep.gamma);
  rep.t_mu = detail::first_time_holding_after(rep.rows);
  if (!rep.t_mu && !rep.trivially_true && !gamma) {
    rep.gamma = 0.5 * spec.gap();
    rep.gamma_halved = true;
    rep.rows = evaluate(rep.gamma);
    rep.t_mu = detail::first_time_holding_after(rep.rows);
  }
  return rep;
}

struct QuasiErgodicRow {
  double t = 0.0;
  double estimate = 0.0;  // E_x[(1/t)∫₀ᵗ g(X_s)ds | T₀ > t]
  double beta_g = 0.0;
  double error = 0.0;     // |estimate - β(g)|
  std::size_t simpson_nodes = 0;
};

/// Time-averaged conditional expectation of g started at grid node `node`.
///
/// The numerator ∫₀ᵗ (P_s diag(g) P_{t-s} 1)(x) ds is expanded in the
/// eigenbasis: pairs of modes that are slow on the Simpson step are
/// integrated by composite Simpson with node doubling until the total changes
/// by less than 1e-4 relative; pairs involving a fast mode form boundary
/// layers at s = 0 or s = t and are integrated exactly. Modes with
/// λ - λ₁ above mode_cap are dropped.
inline std::vector<QuasiErgodicRow> quasi_ergodic_error(const SpectralSemigroup& P, const SpectralData& spec,
                                                        Vec g, std::size_t node, std::span<const double> times,
                                                        std::size_t min_nodes = 65, double mode_cap = 1e6) {
  const long n = spec.eta1.size();
  if (g.size() != n) throw Error("quasi_ergodic_error: g has the wrong length");
  if (node >= static_cast<std::size_t>(n)) throw Error("quasi_ergodic_error: node out of range");
  const double gmax = g.cwiseAbs().maxCoeff();
  if (gmax > 1.0) g /= gmax;
  const double beta_g = spec.beta_weights.dot(g);

  const auto& rates = P.rates();
  long K = 0;
  while (K < n && rates[static_cast<std::size_t>(K)] - spec.lambda1 <= mode_cap) ++K;
  K = std::max<long>(K, 2);
  const Eigen::MatrixXd V = P.modes().leftCols(K);
  const Vec& sw = P.sqrt_weights();
  const long xi = static_cast<long>(node);
  Vec mu(K), u(K), a(K);
  for (long k = 0; k < K; ++k) {
    mu[k] = std::max(0.0, rates[static_cast<std::size_t>(k)] - spec.lambda1);
    u[k] = V(xi, k) / sw[xi];
    a[k] = V.col(k).dot(sw);
  }
  const Eigen::MatrixXd G = V.transpose() * g.asDiagonal() * V;
  // c_{nk} = η_n(x) ⟨η_n, g η_k⟩_m ⟨η_k, 1⟩_m
  const Eigen::MatrixXd C = u.asDiagonal() * G * a.asDiagonal();

  // ∫₀ᵗ e^{-μ_n s - μ_k (t-s)} ds
  auto exact_pair = [](double mn, double mk, double t) {
    const double lo = std::min(mn, mk);
    const double d = std::abs(mn - mk);
    const double base = std::exp(-lo * t);
    if (d * t < 1e-8) return t * base * (1.0 - 0.5 * d * t);
    return base * (-std::expm1(-d * t)) / d;
  };

  auto numerator = [&](double t, std::size_t nodes) {
    const double h = t / static_cast<double>(nodes - 1);
    long S = 0;
    while (S < K && mu[S] * h <= 0.25) ++S;
    double total = 0.0;
    for (long i = 0; i < K; ++i) {
      for (long k = (i < S ? S : 0); k < K; ++k) total += C(i, k) * exact_pair(mu[i], mu[k], t);
    }
    if (S > 0) {
      const Eigen::MatrixXd Css = C.topLeftCorner(S, S);
      std::vector<double> f(nodes);
      Vec l(S), r(S);
      for (std::size_t j = 0; j < nodes; ++j) {
        const double s = h * static_cast<double>(j);
        for (long k = 0; k < S; ++k) {
          l[k] = std::exp(-mu[k] * s);
          r[k] = std::exp(-mu[k] * (t - s));
        }
        f[j] = l.dot(Css * r);
      }
      total += quad::simpson(f, h);
    }
    return total;
  };

  std::vector<QuasiErgodicRow> rows;
  for (double t : times) {
    if (!(t > 0.0)) throw Error("quasi_ergodic_error: times must be positive");
    std::size_t nodes = std::max<std::size_t>(65, min_nodes | 1);
    double prev = numerator(t, nodes);
    double cur = prev;
    for (;;) {
      const std::size_t next = 2 * (nodes - 1) + 1;
      cur = numerator(t, next);
      nodes = next;
      if (std::abs(cur - prev) <= 1e-4 * std::abs(cur)) break;
      if (nodes > 16385) {
        throw ResolutionError("quasi_ergodic_error: s-quadrature not converged at t=" + std::to_string(t));
      }
      prev = cur;
    }
    const double surv = P.apply(t, Vec::Ones(n), spec.lambda1)[xi];  // e^{λ₁t} P_x(T₀ > t)
    QuasiErgodicRow r;
    r.t = t;
    r.estimate = cur / (t * surv);
    r.beta_g = beta_g;
    r.error = std::abs(r.estimate - beta_g);
    r.simpson_nodes = nodes;
    rows.push_back(r);
  }
  return rows;
}

/// Slope of log error against log t by least squares over rows with t in [t_lo, t_hi].
inline double loglog_slope(const std::vector<QuasiErgodicRow>& rows, double t_lo, double t_hi) {
  std::vector<double> xs, ys;
  for (const auto& r : rows) {
    if (r.t >= t_lo && r.t <= t_hi && r.error > 0.0) {
      xs.push_back(std::log(r.t));
      ys.push_back(std::log(r.error));
    }
  }
  if (xs.size() < 2) throw InsufficientDecayError("loglog_slope: fewer than 2 points");
  const auto n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
  }
  return sxy / sxx;
}

/// Bin edges splitting the grid law `weights` into nb equal masses, treating
/// each node's mass as spread uniformly over its cell.
inline std::vector<double> equal_mass_edges(const Grid& grid, const Vec& weights, std::size_t nb) {
  if (nb < 1) throw Error("equal_mass_edges: need at least one bin");
  if (weights.size() != static_cast<long>(grid.size())) throw Error("equal_mass_edges: length mismatch");
  const double total = weights.sum();
  std::vector<double> edges{grid.cell_lo(0)};
  double acc = 0.0;
  std::size_t b = 1;
  for (std::size_t i = 0; i < grid.size() && b < nb; ++i) {
    const double w = weights[static_cast<long>(i)] / total;
    while (b < nb && acc + w >= static_cast<double>(b) / static_cast<double>(nb)) {
      const double frac = w > 0.0 ? (static_cast<double>(b) / static_cast<double>(nb) - acc) / w : 0.0;
      const double e = grid.cell_lo(i) + frac * (grid.cell_hi(i) - grid.cell_lo(i));
      if (e > edges.back()) edges.push_back(e);
      ++b;
    }
    acc += w;
  }
  edges.push_back(grid.cell_hi(grid.size() - 1));
  return edges;
}

/// A grid law binned over `edges`, with node masses spread over their cells.
inline std::vector<double> bin_grid_law(const Grid& grid, const Vec& law, std::span<const double> edges) {
  if (edges.size() < 2) throw Error("bin_grid_law: need at least two edges");
  std::vector<double> out(edges.size() - 1, 0.0);
  std::size_t b = 0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double lo = grid.cell_lo(i);
    const double hi = grid.cell_hi(i);
    const double w = law[static_cast<long>(i)];
    while (b + 1 < out.size() && edges[b + 1] <= lo) ++b;
    for (std::size_t k = b; k < out.size(); ++k) {
      const double a = std::max(lo, k == 0 ? lo : edges[k]);
      const double c = std::min(hi, k + 1 == out.size() ? hi : edges[k + 1]);
      if (c > a) out[k] += w * (c - a) / (hi - lo);
      if (k + 1 < out.size() && edges[k + 1] >= hi) break;
    }
  }
  double s = 0.0;
  for (double v : out) s += v;
  for (double& v : out) v /= s;
  return out;
}

}  // namespace qsd
