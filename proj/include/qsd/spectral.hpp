#pragma once

// Finite-volume discretization of L = ½ d²/dx² - q d/dx on a truncated grid,
// its spectral decomposition, the quasi-stationary law α = η₁m/m(η₁), the
// quasi-ergodic law β = η₁²m, and the Doob h-transform by η₁ (the Q-process).
//
// The generator is built in divergence form L f = (e^{Q}/2)(e^{-Q} f')', so
// D_m L is symmetric for the speed weights m_i. Absorption at 0 is a Dirichlet
// face at the left truncation ε; the right truncation R is reflecting, which
// stands in for an entrance boundary at ∞.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <iostream>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "qsd/errors.hpp"
#include "qsd/linalg.hpp"
#include "qsd/model.hpp"
#include "qsd/quadrature.hpp"

namespace qsd {

using Vec = Eigen::VectorXd;

enum class Spacing { uniform, log };
enum class BoundaryCondition { absorbing, reflecting };

inline const char* to_string(Spacing s) { return s == Spacing::uniform ? "uniform" : "log"; }

struct Grid {
  std::vector<double> points;
  double eps = 0.0;
  double R = 0.0;
  Spacing spacing = Spacing::log;
  std::vector<double> speed_weights;
  std::vector<double> log_speed_weights;

  std::size_t size() const { return points.size(); }
  double cell_lo(std::size_t i) const { return i == 0 ? eps : 0.5 * (points[i - 1] + points[i]); }
  double cell_hi(std::size_t i) const {
    return i + 1 == points.size() ? R : 0.5 * (points[i] + points[i + 1]);
  }
  Vec nodes() const { return Eigen::Map<const Vec>(points.data(), static_cast<long>(size())); }
  Vec weights() const {
    return Eigen::Map<const Vec>(speed_weights.data(), static_cast<long>(size()));
  }
};

namespace detail {

inline double log_cell_mass(const DiffusionModel& model, double lo, double hi) {
  const auto res = quad::log_integrate_exp([&](double y) { return -eval_Q(model, y); }, lo, hi,
                                           1e-13);
  return res.log_value;
}

inline constexpr double kLogMinNormal = -708.0;

}  // namespace detail

/// Nodes x_1 < ... < x_N strictly inside (eps, R) and speed weights
/// m_i = ∫_cell e^{-Q}, where cells split at midpoints and the outermost cells
/// extend to eps and R, so Σ m_i = ∫_eps^R e^{-Q}.
///
/// Trailing nodes whose weight underflows are dropped with a warning and R is
/// pulled in to the first dropped node.
inline Grid build_grid(const DiffusionModel& model, double eps, double R, std::size_t N,
                       Spacing spacing) {
  if (N < 3) throw Error("build_grid: N must be at least 3");
  if (!(eps >= 0.0) || !(R > eps)) throw Error("build_grid: need 0 <= eps < R");
  if (spacing == Spacing::log && !(eps > 0.0)) throw Error("build_grid: log spacing needs eps > 0");
  Grid g;
  g.eps = eps;
  g.R = R;
  g.spacing = spacing;
  g.points.resize(N);
  const double denom = static_cast<double>(N + 1);
  for (std::size_t i = 0; i < N; ++i) {
    const double s = static_cast<double>(i + 1) / denom;
    g.points[i] = spacing == Spacing::uniform ? eps + s * (R - eps)
                                              : eps * std::exp(s * std::log(R / eps));
  }
  g.log_speed_weights.resize(N);
  for (std::size_t i = 0; i < N; ++i) {
    g.log_speed_weights[i] = detail::log_cell_mass(model, g.cell_lo(i), g.cell_hi(i));
  }
  // Drop the underflowing tail.
  std::size_t keep = N;
  for (std::size_t i = 0; i < N; ++i) {
    if (!(g.log_speed_weights[i] > detail::kLogMinNormal)) {
      keep = i;
      break;
    }
  }
  if (keep < N) {
    if (keep < 3) throw ConstructionError("build_grid: speed density underflows near eps");
    std::clog << "warning: build_grid dropped " << (N - keep)
              << " nodes where e^{-Q} underflows; R reduced from " << R << " to "
              << g.points[keep] << '\n';
    g.R = g.points[keep];
    g.points.resize(keep);
    g.log_speed_weights.resize(keep);
    g.log_speed_weights[keep - 1] =
        detail::log_cell_mass(model, g.cell_lo(keep - 1), g.cell_hi(keep - 1));
  }
  g.speed_weights.resize(g.points.size());
  for (std::size_t i = 0; i < g.points.size(); ++i) {
    g.speed_weights[i] = std::exp(g.log_speed_weights[i]);
  }
  return g;
}

/// Tridiagonal generator with its symmetrizing weights: w_i A_{i,i+1} = w_{i+1} A_{i+1,i}.
struct GeneratorMatrix {
  std::vector<double> lower;  // lower[i] = A(i+1, i)
  std::vector<double> diag;
  std::vector<double> upper;  // upper[i] = A(i, i+1)
  BoundaryCondition left = BoundaryCondition::absorbing;
  BoundaryCondition right = BoundaryCondition::reflecting;
  std::vector<double> symmetrizing_weights;

  std::size_t size() const { return diag.size(); }

  Vec apply(const Vec& f) const {
    const auto n = static_cast<long>(size());
    Vec out(n);
    for (long i = 0; i < n; ++i) {
      double s = diag[i] * f[i];
      if (i > 0) s += lower[i - 1] * f[i - 1];
      if (i + 1 < n) s += upper[i] * f[i + 1];
      out[i] = s;
    }
    return out;
  }

  /// Row vector times matrix: (μᵀA)_j.
  Vec apply_left(const Vec& mu) const {
    const auto n = static_cast<long>(size());
    Vec out(n);
    for (long j = 0; j < n; ++j) {
      double s = diag[j] * mu[j];
      if (j > 0) s += upper[j - 1] * mu[j - 1];
      if (j + 1 < n) s += lower[j] * mu[j + 1];
      out[j] = s;
    }
    return out;
  }

  Eigen::MatrixXd dense() const {
    const auto n = static_cast<long>(size());
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
    for (long i = 0; i < n; ++i) {
      a(i, i) = diag[i];
      if (i + 1 < n) {
        a(i, i + 1) = upper[i];
        a(i + 1, i) = lower[i];
      }
    }
    return a;
  }

  double max_abs() const {
    double m = 0.0;
    for (double v : diag) m = std::max(m, std::abs(v));
    for (double v : lower) m = std::max(m, std::abs(v));
    for (double v : upper) m = std::max(m, std::abs(v));
    return m;
  }
};

/// max |(D_w A) - (D_w A)ᵀ| relative to max |D_w A|.
inline double symmetry_residual(const GeneratorMatrix& gen) {
  const auto& w = gen.symmetrizing_weights;
  double asym = 0.0;
  double scale = 0.0;
  for (std::size_t i = 0; i < gen.size(); ++i) {
    scale = std::max(scale, std::abs(w[i] * gen.diag[i]));
    if (i + 1 < gen.size()) {
      const double a = w[i] * gen.upper[i];
      const double b = w[i + 1] * gen.lower[i];
      asym = std::max(asym, std::abs(a - b));
      scale = std::max({scale, std::abs(a), std::abs(b)});
    }
  }
  return scale > 0.0 ? asym / scale : 0.0;
}

/// Largest absolute row sum; zero for a conservative generator.
inline double row_sum_residual(const GeneratorMatrix& gen) {
  double r = 0.0;
  for (std::size_t i = 0; i < gen.size(); ++i) {
    double s = gen.diag[i];
    if (i > 0) s += gen.lower[i - 1];
    if (i + 1 < gen.size()) s += gen.upper[i];
    r = std::max(r, std::abs(s));
  }
  return r;
}

/// Three-point divergence-form stencil with flux coefficients
/// c_{i+½} = e^{-Q(x_{i+½})} / (2 h_{i+½}) and rows divided by m_i.
inline GeneratorMatrix discretize_generator(const DiffusionModel& model, const Grid& grid,
                                            BoundaryCondition right = BoundaryCondition::reflecting) {
  const std::size_t n = grid.size();
  if (n < 3) throw Error("discretize_generator: grid too small");
  auto log_flux = [&](double a, double b) {
    return -eval_Q(model, 0.5 * (a + b)) - std::log(2.0 * (b - a));
  };
  // log c for faces 0..n: face 0 is (eps, x_1), face n is (x_N, R).
  std::vector<double> log_c(n + 1, quad::kNegInf);
  log_c[0] = log_flux(grid.eps, grid.points[0]);
  for (std::size_t i = 0; i + 1 < n; ++i) log_c[i + 1] = log_flux(grid.points[i], grid.points[i + 1]);
  if (right == BoundaryCondition::absorbing) log_c[n] = log_flux(grid.points[n - 1], grid.R);

  GeneratorMatrix g;
  g.left = BoundaryCondition::absorbing;
  g.right = right;
  g.symmetrizing_weights = grid.speed_weights;
  g.diag.assign(n, 0.0);
  g.lower.assign(n - 1, 0.0);
  g.upper.assign(n - 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double lm = grid.log_speed_weights[i];
    const double cl = std::exp(log_c[i] - lm);
    const double cr = std::exp(log_c[i + 1] - lm);
    g.diag[i] = -(cl + cr);
    if (i > 0) g.lower[i - 1] = cl;
    if (i + 1 < n) g.upper[i] = cr;
  }
  const double res = symmetry_residual(g);
  if (!(res < 1e-12)) {
    throw ConstructionError("discretize_generator: D_m L not symmetric (residual " +
                            std::to_string(res) + ")");
  }
  return g;
}

/// All eigenvalues of -A, ascending, from a bidiagonal factor -D_w^{½}AD_w^{-½} = BᵀB.
///
/// Interior rows are taken as pure flux (conservative); killing enters only
/// through absorbing boundary rows. Singular values of B are computed to high
/// relative accuracy, so small eigenvalues stay accurate even when the
/// generator norm is ~1e10.
inline std::vector<double> generator_spectrum(const GeneratorMatrix& gen) {
  const std::size_t n = gen.size();
  const auto& w = gen.symmetrizing_weights;
  std::vector<double> c(n + 1, 0.0);
  if (gen.left == BoundaryCondition::absorbing) {
    c[0] = std::max(0.0, -w[0] * (gen.diag[0] + gen.upper[0]));
  }
  for (std::size_t i = 0; i + 1 < n; ++i) c[i + 1] = w[i] * gen.upper[i];
  if (gen.right == BoundaryCondition::absorbing) {
    c[n] = std::max(0.0, -w[n - 1] * (gen.diag[n - 1] + gen.lower[n - 2]));
  }
  // (n+1)×(n+1) lower bidiagonal; the last column is zero padding.
  std::vector<double> d(n + 1, 0.0);
  std::vector<double> e(n, 0.0);
  for (std::size_t r = 0; r < n; ++r) d[r] = std::sqrt(c[r] / w[r]);
  for (std::size_t r = 1; r <= n; ++r) e[r - 1] = -std::sqrt(c[r] / w[r - 1]);
  auto sv = linalg::bidiagonal_singular_values(std::move(d), std::move(e), true);
  std::sort(sv.begin(), sv.end());
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = sv[i + 1] * sv[i + 1];
  return out;
}

namespace detail {

// Symmetric tridiagonal T = -D^{½} A D^{-½}.
inline std::pair<std::vector<double>, std::vector<double>> symmetrized_negative(
    const GeneratorMatrix& gen) {
  const std::size_t n = gen.size();
  std::vector<double> d(n);
  std::vector<double> e(n - 1);
  for (std::size_t i = 0; i < n; ++i) d[i] = -gen.diag[i];
  for (std::size_t i = 0; i + 1 < n; ++i) e[i] = -std::sqrt(gen.upper[i] * gen.lower[i]);
  return {std::move(d), std::move(e)};
}

}  // namespace detail

/// Full spectral decomposition of a symmetrizable generator; realizes exp(tA).
class SpectralSemigroup {
 public:
  explicit SpectralSemigroup(const GeneratorMatrix& gen) {
    const auto n = static_cast<int>(gen.size());
    auto [d, e] = detail::symmetrized_negative(gen);
    auto eig = linalg::symmetric_tridiagonal_eigen(d, e, 1, n, true);
    rates_ = generator_spectrum(gen);
    modes_ = std::move(eig.vectors);
    sqrt_w_.resize(n);
    for (int i = 0; i < n; ++i) sqrt_w_[i] = std::sqrt(gen.symmetrizing_weights[i]);
  }

  /// Decay rates (eigenvalues of -A), ascending.
  const std::vector<double>& rates() const { return rates_; }
  const Eigen::MatrixXd& modes() const { return modes_; }
  const Vec& sqrt_weights() const { return sqrt_w_; }
  std::size_t size() const { return rates_.size(); }

  /// Eigenfunction n (0-based), orthonormal in L²(w).
  Vec eigenfunction(std::size_t n) const {
    return modes_.col(static_cast<long>(n)).cwiseQuotient(sqrt_w_);
  }

  /// e^{shift·t} exp(tA) f.
  Vec apply(double t, const Vec& f, double shift = 0.0) const {
    if (t == 0.0) return f * std::exp(0.0);
    const long k = active_modes(t, shift);
    Vec y = modes_.leftCols(k).transpose() * f.cwiseProduct(sqrt_w_);
    for (long j = 0; j < k; ++j) y[j] *= std::exp(-(rates_[j] - shift) * t);
    return (modes_.leftCols(k) * y).cwiseQuotient(sqrt_w_);
  }

  /// e^{shift·t} μᵀ exp(tA), returned as a column vector.
  Vec apply_left(double t, const Vec& mu, double shift = 0.0) const {
    if (t == 0.0) return mu;
    const long k = active_modes(t, shift);
    Vec y = modes_.leftCols(k).transpose() * mu.cwiseQuotient(sqrt_w_);
    for (long j = 0; j < k; ++j) y[j] *= std::exp(-(rates_[j] - shift) * t);
    return (modes_.leftCols(k) * y).cwiseProduct(sqrt_w_);
  }

 private:
  long active_modes(double t, double shift) const {
    long k = 0;
    while (k < static_cast<long>(rates_.size()) && (rates_[k] - shift) * t < 745.0) ++k;
    return std::max<long>(k, 1);
  }

  std::vector<double> rates_;
  Eigen::MatrixXd modes_;
  Vec sqrt_w_;
};

struct EigenPair {
  double lambda = 0.0;
  Vec eta;  // orthonormal in L²(m)
};

/// The k smallest eigenpairs of -L.
///
/// Eigenvalues come from the bidiagonal factor (high relative accuracy),
/// eigenvectors from MRRR. η₁ is made positive; higher η_n are signed to be
/// positive at the right end.
inline std::vector<EigenPair> eigen_solve(const GeneratorMatrix& gen, int k) {
  const auto n = static_cast<int>(gen.size());
  if (k < 2 || k > n) throw Error("eigen_solve: need 2 <= k <= N");
  const auto values = generator_spectrum(gen);
  auto [d, e] = detail::symmetrized_negative(gen);
  auto eig = linalg::symmetric_tridiagonal_eigen(d, e, 1, k, true);
  for (int j = 0; j + 1 < k; ++j) {
    const double gap = values[j + 1] - values[j];
    if (!(gap > 1e-12 * std::max(1.0, std::abs(values[j + 1])))) {
      throw DegeneracyError("eigen_solve: eigenvalues " + std::to_string(j + 1) + " and " +
                            std::to_string(j + 2) + " are not separated");
    }
  }
  std::vector<EigenPair> out;
  out.reserve(k);
  for (int j = 0; j < k; ++j) {
    Vec eta(n);
    for (int i = 0; i < n; ++i) eta[i] = eig.vectors(i, j) / std::sqrt(gen.symmetrizing_weights[i]);
    const bool flip = j == 0 ? eta.sum() < 0.0 : eta[n - 1] < 0.0;
    if (flip) eta = -eta;
    out.push_back({values[j], std::move(eta)});
  }
  return out;
}

namespace detail {

// Second-order first derivative on a non-uniform grid; one-sided at the ends.
inline Vec nonuniform_derivative(const std::vector<double>& x, const Vec& f) {
  const auto n = static_cast<long>(x.size());
  Vec d(n);
  for (long i = 0; i < n; ++i) {
    if (i == 0) {
      const double h1 = x[1] - x[0];
      const double h2 = x[2] - x[1];
      d[i] = -(2 * h1 + h2) / (h1 * (h1 + h2)) * f[0] + (h1 + h2) / (h1 * h2) * f[1] -
             h1 / (h2 * (h1 + h2)) * f[2];
    } else if (i == n - 1) {
      const double h1 = x[n - 2] - x[n - 3];
      const double h2 = x[n - 1] - x[n - 2];
      d[i] = h2 / (h1 * (h1 + h2)) * f[n - 3] - (h1 + h2) / (h1 * h2) * f[n - 2] +
             (2 * h2 + h1) / (h2 * (h1 + h2)) * f[n - 1];
    } else {
      const double h1 = x[i] - x[i - 1];
      const double h2 = x[i + 1] - x[i];
      d[i] = -h2 / (h1 * (h1 + h2)) * f[i - 1] + (h2 - h1) / (h1 * h2) * f[i] +
             h1 / (h2 * (h1 + h2)) * f[i + 1];
    }
  }
  return d;
}

}  // namespace detail

struct SpectralData {
  Grid grid;
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  std::vector<double> lambdas;  // first few eigenvalues of -L
  std::vector<Vec> etas;        // matching eigenfunctions, L²(m)-orthonormal
  Vec eta1;
  Vec eta2;
  double m_eta1 = 0.0;  // Σ η₁ m_i
  Vec alpha_weights;    // quasi-stationary distribution on the grid
  Vec beta_weights;     // quasi-ergodic distribution η₁² m
  Vec q_tilde;          // Q-process drift q - η₁'/η₁

  double gap() const { return lambda2 - lambda1; }
};

inline SpectralData build_spectral_data(const DiffusionModel& model, const Grid& grid,
                                        const GeneratorMatrix& gen, int k = 4) {
  k = std::min<int>(k, static_cast<int>(grid.size()));
  auto pairs = eigen_solve(gen, k);
  SpectralData s;
  s.grid = grid;
  for (auto& p : pairs) {
    s.lambdas.push_back(p.lambda);
    s.etas.push_back(p.eta);
  }
  s.lambda1 = s.lambdas[0];
  s.lambda2 = s.lambdas[1];
  s.eta1 = s.etas[0];
  s.eta2 = s.etas[1];
  for (long i = 0; i < s.eta1.size(); ++i) {
    if (!(s.eta1[i] > 0.0)) {
      throw PositivityError("build_spectral_data: eta1 is not positive at node " + std::to_string(i));
    }
  }
  const Vec m = grid.weights();
  s.m_eta1 = s.eta1.dot(m);
  s.alpha_weights = s.eta1.cwiseProduct(m) / s.m_eta1;
  s.beta_weights = s.eta1.cwiseProduct(s.eta1).cwiseProduct(m);
  const Vec deta = detail::nonuniform_derivative(grid.points, s.eta1);
  s.q_tilde.resize(s.eta1.size());
  for (long i = 0; i < s.eta1.size(); ++i) {
    s.q_tilde[i] = model.drift(grid.points[i]) - deta[i] / s.eta1[i];
  }
  return s;
}

/// L̃ = D_η^{-1}(L + λ₁)D_η: the generator of the Q-process, symmetric in L²(β).
inline GeneratorMatrix h_transform_generator(const GeneratorMatrix& gen, const SpectralData& spec) {
  const std::size_t n = gen.size();
  const Vec& eta = spec.eta1;
  GeneratorMatrix t;
  t.left = BoundaryCondition::reflecting;
  t.right = BoundaryCondition::reflecting;
  t.diag.resize(n);
  t.lower.resize(n - 1);
  t.upper.resize(n - 1);
  for (std::size_t i = 0; i < n; ++i) t.diag[i] = gen.diag[i] + spec.lambda1;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    t.upper[i] = gen.upper[i] * eta[i + 1] / eta[i];
    t.lower[i] = gen.lower[i] * eta[i] / eta[i + 1];
  }
  t.symmetrizing_weights.assign(spec.beta_weights.data(),
                                spec.beta_weights.data() + spec.beta_weights.size());
  return t;
}

/// ‖exp(tL̃)g - e^{λ₁t} D_η^{-1} exp(tL) D_η g‖_max.
inline double verify_intertwining(const SpectralSemigroup& killed, const SpectralSemigroup& qprocess,
                                  const SpectralData& spec, double t, const Vec& g) {
  if (t > 10.0 / spec.lambda1) throw Error("verify_intertwining: t exceeds 10/lambda1");
  const Vec lhs = qprocess.apply(t, g);
  const Vec rhs = killed.apply(t, spec.eta1.cwiseProduct(g), spec.lambda1).cwiseQuotient(spec.eta1);
  return (lhs - rhs).cwiseAbs().maxCoeff();
}

inline double verify_intertwining(const GeneratorMatrix& gen, const SpectralData& spec, double t,
                                  const Vec& g) {
  const SpectralSemigroup killed(gen);
  const SpectralSemigroup qprocess(h_transform_generator(gen, spec));
  return verify_intertwining(killed, qprocess, spec, t, g);
}

/// ‖D_β L̃ - (D_β L̃)ᵀ‖_max (absolute).
inline double verify_reversibility(const GeneratorMatrix& gen_tilde, const SpectralData& spec) {
  double asym = 0.0;
  for (std::size_t i = 0; i + 1 < gen_tilde.size(); ++i) {
    const double a = spec.beta_weights[static_cast<long>(i)] * gen_tilde.upper[i];
    const double b = spec.beta_weights[static_cast<long>(i + 1)] * gen_tilde.lower[i];
    asym = std::max(asym, std::abs(a - b));
  }
  return asym;
}

/// ‖D_β L̃‖_max, the scale for verify_reversibility.
inline double reversibility_scale(const GeneratorMatrix& gen_tilde, const SpectralData& spec) {
  double s = 0.0;
  for (std::size_t i = 0; i < gen_tilde.size(); ++i) {
    const double b = spec.beta_weights[static_cast<long>(i)];
    s = std::max(s, std::abs(b * gen_tilde.diag[i]));
    if (i + 1 < gen_tilde.size()) s = std::max(s, std::abs(b * gen_tilde.upper[i]));
  }
  return s;
}

/// η₁ off the grid: linear between nodes, constant beyond R, and a power law
/// below a junction node.
///
/// The discrete η₁ vanishes linearly at the Dirichlet point ε, which is an
/// artifact of truncation; the junction is the first node at or beyond ten
/// times x_1, where the log-log slope reflects the behavior near 0 instead.
class Eta1Interpolant {
 public:
  explicit Eta1Interpolant(const SpectralData& spec)
      : x_(spec.grid.points), y_(spec.eta1.data(), spec.eta1.data() + spec.eta1.size()) {
    const std::size_t n = x_.size();
    junction_ = 1;
    while (junction_ + 2 < n && x_[junction_] < 10.0 * x_[0]) ++junction_;
    const std::size_t c = junction_;
    left_power_ = std::log(y_[c + 1] / y_[c - 1]) / std::log(x_[c + 1] / x_[c - 1]);
  }

  double operator()(double x) const {
    const double xc = x_[junction_];
    if (x <= xc) return y_[junction_] * std::pow(x / xc, left_power_);
    if (x >= x_.back()) return y_.back();
    const auto it = std::upper_bound(x_.begin(), x_.end(), x);
    const auto j = static_cast<std::size_t>(it - x_.begin());
    const double w = (x - x_[j - 1]) / (x_[j] - x_[j - 1]);
    return (1.0 - w) * y_[j - 1] + w * y_[j];
  }

  double left_power() const { return left_power_; }
  std::size_t junction() const { return junction_; }

 private:
  std::vector<double> x_;
  std::vector<double> y_;
  std::size_t junction_ = 1;
  double left_power_ = 0.0;
};

struct DeltaTilde {
  double value = 0.0;
  double argmax_b = 0.0;
};

/// sup_b ∫_ε^b e^{Q}/η₁² dy · ∫_b^R e^{-Q} η₁² dz over the sampled b.
inline DeltaTilde delta_tilde(const DiffusionModel& model, const SpectralData& spec,
                              std::span<const double> b_samples) {
  const Eta1Interpolant eta(spec);
  const double eps = spec.grid.eps;
  const double R = spec.grid.R;
  auto log_inner = [&](double y) { return eval_Q(model, y) - 2.0 * std::log(eta(y)); };
  auto log_outer = [&](double z) { return -eval_Q(model, z) + 2.0 * std::log(eta(z)); };
  auto nodes_in = [&](double a, double b) {
    std::vector<double> br;
    for (double x : spec.grid.points) {
      if (x > a && x < b) br.push_back(x);
    }
    return br;
  };
  DeltaTilde best{-1.0, 0.0};
  for (double b : b_samples) {
    if (!(b > eps && b < R)) continue;
    const auto left = quad::log_integrate_exp(log_inner, eps, b, 1e-10, nodes_in(eps, b));
    const auto right = quad::log_integrate_exp(log_outer, b, R, 1e-10, nodes_in(b, R));
    const double v = std::exp(left.log_value + right.log_value);
    if (v > best.value) best = {v, b};
  }
  if (best.value < 0.0) throw Error("delta_tilde: no sample point inside (eps, R)");
  return best;
}

/// The Q-process as a DiffusionModel: q̃ interpolated linearly on the grid,
/// continued as q beyond R (η₁ constant) and as q - p/x below the
/// interpolant's junction node (η₁ ~ x^p), with the exact potential of that
/// piecewise drift.
inline DiffusionModel qprocess_model(const DiffusionModel& base, const SpectralData& spec) {
  struct Table {
    std::vector<double> x, q, cum;
    double p = 0.0;
    double Q_base_left = 0.0, Q_base_right = 0.0;
    double anchor = 0.0;
  };
  auto tab = std::make_shared<Table>();
  const Eta1Interpolant eta(spec);
  const auto c = static_cast<long>(eta.junction());
  tab->x.assign(spec.grid.points.begin() + c, spec.grid.points.end());
  tab->q.assign(spec.q_tilde.data() + c, spec.q_tilde.data() + spec.q_tilde.size());
  tab->p = eta.left_power();
  const std::size_t n = tab->x.size();
  tab->cum.assign(n, 0.0);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    tab->cum[i + 1] = tab->cum[i] + (tab->q[i] + tab->q[i + 1]) * (tab->x[i + 1] - tab->x[i]);
  }
  tab->Q_base_left = eval_Q(base, tab->x.front());
  tab->Q_base_right = eval_Q(base, tab->x.back());

  auto drift = [tab, base](double y) {
    const auto& t = *tab;
    if (y <= t.x.front()) return base.drift(y) - t.p / y;
    if (y >= t.x.back()) return base.drift(y);
    const auto it = std::upper_bound(t.x.begin(), t.x.end(), y);
    const auto j = static_cast<std::size_t>(it - t.x.begin());
    const double w = (y - t.x[j - 1]) / (t.x[j] - t.x[j - 1]);
    return (1.0 - w) * t.q[j - 1] + w * t.q[j];
  };
  auto raw_Q = [tab, base](double y) {
    const auto& t = *tab;
    if (y <= t.x.front()) {
      return eval_Q(base, y) - t.Q_base_left - 2.0 * t.p * std::log(y / t.x.front());
    }
    if (y >= t.x.back()) return t.cum.back() + eval_Q(base, y) - t.Q_base_right;
    const auto it = std::upper_bound(t.x.begin(), t.x.end(), y);
    const auto j = static_cast<std::size_t>(it - t.x.begin());
    const double h = t.x[j] - t.x[j - 1];
    const double s = y - t.x[j - 1];
    return t.cum[j - 1] + 2.0 * (t.q[j - 1] * s + (t.q[j] - t.q[j - 1]) * s * s / (2.0 * h));
  };
  tab->anchor = raw_Q(1.0);

  DiffusionModel m;
  m.name = base.name + "_qprocess";
  m.drift = drift;
  m.Q_closed_form = [tab, raw_Q](double y) { return raw_Q(y) - tab->anchor; };
  m.domain_hint = base.domain_hint;
  return m;
}

}  // namespace qsd
