#pragma once

// Adaptive Gauss-Kronrod quadrature in linear and log space.
//
// The log-space integrator computes log(∫ exp(phi(x)) dx) without ever
// forming exp(phi) at its natural scale, so integrands such as e^{Q(y)} with
// Q ~ y^4 stay representable far past the double overflow threshold.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <queue>
#include <span>
#include <vector>

#include "qsd/errors.hpp"

namespace qsd::quad {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

namespace detail {

// 15-point Kronrod abscissae (non-negative half) and weights; every odd index
// is also a 7-point Gauss node.
inline constexpr std::array<double, 8> kXgk = {
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000};
inline constexpr std::array<double, 8> kWgk = {
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
inline constexpr std::array<double, 4> kWg = {
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

inline bool unsplittable(double a, double b) {
  const double mid = 0.5 * (a + b);
  return !(mid > std::min(a, b) && mid < std::max(a, b));
}

}  // namespace detail

/// log(e^a + e^b), tolerant of -inf arguments.
inline double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

inline double log_sum(std::span<const double> xs) {
  double hi = kNegInf;
  for (double x : xs) hi = std::max(hi, x);
  if (hi == kNegInf) return kNegInf;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - hi);
  return hi + std::log(s);
}

struct Result {
  double value = 0.0;
  double error = 0.0;
  std::size_t intervals = 0;
};

/// Global adaptive G7-K15 quadrature of f over [a, b].
///
/// Stops when the summed error estimate is below max(abs_tol, rel_tol*|I|).
/// Throws IntegrationError carrying the partial estimate after max_intervals.
template <class F>
Result integrate(F&& f, double a, double b, double abs_tol = 1e-10, double rel_tol = 0.0,
                 std::size_t max_intervals = std::size_t{1} << 15) {
  if (a == b) return {};
  struct Panel {
    double a, b, value, error;
    bool operator<(const Panel& o) const { return error < o.error; }
  };
  auto rule = [&](double lo, double hi) {
    const double c = 0.5 * (lo + hi);
    const double hl = 0.5 * (hi - lo);
    const double fc = f(c);
    if (!std::isfinite(fc)) throw EvaluationError("non-finite integrand", c);
    double k = fc * detail::kWgk[7];
    double g = fc * detail::kWg[3];
    for (int j = 0; j < 7; ++j) {
      const double dx = hl * detail::kXgk[j];
      const double f1 = f(c - dx);
      const double f2 = f(c + dx);
      if (!std::isfinite(f1)) throw EvaluationError("non-finite integrand", c - dx);
      if (!std::isfinite(f2)) throw EvaluationError("non-finite integrand", c + dx);
      k += detail::kWgk[j] * (f1 + f2);
      if (j % 2 == 1) g += detail::kWg[j / 2] * (f1 + f2);
    }
    return Panel{lo, hi, k * hl, std::abs((k - g) * hl)};
  };

  std::priority_queue<Panel> heap;
  Panel first = rule(a, b);
  double total = first.value;
  double err = first.error;
  heap.push(first);
  std::size_t count = 1;
  while (err > std::max(abs_tol, rel_tol * std::abs(total))) {
    if (count >= max_intervals) {
      throw IntegrationError("adaptive quadrature did not converge", total, err);
    }
    Panel worst = heap.top();
    if (detail::unsplittable(worst.a, worst.b)) break;
    heap.pop();
    const double mid = 0.5 * (worst.a + worst.b);
    Panel left = rule(worst.a, mid);
    Panel right = rule(mid, worst.b);
    total += left.value + right.value - worst.value;
    err += left.error + right.error - worst.error;
    heap.push(left);
    heap.push(right);
    ++count;
    // Running sums drift; refresh from the heap occasionally.
    if (count % 256 == 0) {
      auto copy = heap;
      total = 0.0;
      err = 0.0;
      while (!copy.empty()) {
        total += copy.top().value;
        err += copy.top().error;
        copy.pop();
      }
    }
  }
  return {total, err, count};
}

struct LogResult {
  double log_value = kNegInf;
  double log_error = kNegInf;
  std::size_t intervals = 0;
};

/// log ∫_a^b exp(phi(x)) dx by global adaptive G7-K15 in log space.
///
/// `breakpoints` pre-split the interval (they must lie inside (a, b), any
/// order). Convergence is relative: error <= rel_tol * integral, with
/// rel_tol raised to the rounding floor 64·eps·max|phi| when phi is large.
/// phi may return -inf where the integrand vanishes.
template <class Phi>
LogResult log_integrate_exp(Phi&& phi, double a, double b, double rel_tol = 1e-10,
                            std::span<const double> breakpoints = {},
                            std::size_t max_intervals = std::size_t{1} << 15) {
  if (!(b > a)) return {};
  struct Panel {
    double a, b, log_value, log_error;
  };
  // Largest |phi| seen: phi carries absolute rounding ~eps*|phi|, which caps
  // the attainable relative accuracy of the integral.
  double phi_scale = 0.0;
  auto rule = [&](double lo, double hi) {
    const double c = 0.5 * (lo + hi);
    const double hl = 0.5 * (hi - lo);
    std::array<double, 15> v{};
    v[7] = phi(c);
    for (int j = 0; j < 7; ++j) {
      const double dx = hl * detail::kXgk[j];
      v[j] = phi(c - dx);
      v[14 - j] = phi(c + dx);
    }
    double m = kNegInf;
    for (double x : v) {
      if (std::isnan(x) || x == std::numeric_limits<double>::infinity()) {
        throw EvaluationError("non-finite log-integrand", c);
      }
      m = std::max(m, x);
      if (x != kNegInf) phi_scale = std::max(phi_scale, std::abs(x));
    }
    if (m == kNegInf) return Panel{lo, hi, kNegInf, kNegInf};
    double k = std::exp(v[7] - m) * detail::kWgk[7];
    double g = std::exp(v[7] - m) * detail::kWg[3];
    for (int j = 0; j < 7; ++j) {
      const double s = std::exp(v[j] - m) + std::exp(v[14 - j] - m);
      k += detail::kWgk[j] * s;
      if (j % 2 == 1) g += detail::kWg[j / 2] * s;
    }
    const double lv = m + std::log(k * hl);
    const double d = std::abs(k - g);
    const double le = d > 0.0 ? m + std::log(d * hl) : kNegInf;
    return Panel{lo, hi, lv, le};
  };

  std::vector<double> cuts{a};
  for (double p : breakpoints) {
    if (p > a && p < b) cuts.push_back(p);
  }
  cuts.push_back(b);
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

  // Worst-error panel on top; totals kept as running sums of exp(log - ref)
  // and rebuilt periodically or when a panel outgrows the reference scale.
  auto by_error = [](const Panel& x, const Panel& y) { return x.log_error < y.log_error; };
  std::priority_queue<Panel, std::vector<Panel>, decltype(by_error)> heap(by_error);
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) heap.push(rule(cuts[i], cuts[i + 1]));
  std::vector<Panel> done;  // resolved to floating-point spacing

  double ref = kNegInf;
  double sv = 0.0;
  double se = 0.0;
  auto rebuild = [&]() {
    ref = kNegInf;
    auto scan = [&](auto&& visit) {
      auto copy = heap;
      while (!copy.empty()) {
        visit(copy.top());
        copy.pop();
      }
      for (const auto& p : done) visit(p);
    };
    scan([&](const Panel& p) { ref = std::max(ref, p.log_value); });
    sv = 0.0;
    se = 0.0;
    if (ref == kNegInf) return;
    scan([&](const Panel& p) {
      sv += std::exp(p.log_value - ref);
      se += std::exp(p.log_error - ref);
    });
  };
  auto add = [&](const Panel& p, double sign) {
    sv += sign * std::exp(p.log_value - ref);
    se += sign * std::exp(p.log_error - ref);
  };
  rebuild();

  std::size_t splits = 0;
  auto log_of = [&](double s) { return s > 0.0 ? ref + std::log(s) : kNegInf; };
  auto tol = [&]() {
    return std::max(rel_tol, 64.0 * std::numeric_limits<double>::epsilon() * phi_scale);
  };
  while (ref != kNegInf && !heap.empty()) {
    if (!(se > tol() * sv)) {
      rebuild();  // confirm against fresh sums before stopping
      if (!(se > tol() * sv)) break;
    }
    if (heap.size() + done.size() >= max_intervals) {
      rebuild();
      if (!(se > tol() * sv)) break;
      throw IntegrationError("log-space quadrature did not converge", log_of(sv), log_of(se));
    }
    const Panel worst = heap.top();
    heap.pop();
    if (detail::unsplittable(worst.a, worst.b)) {
      add(worst, -1.0);
      done.push_back({worst.a, worst.b, worst.log_value, kNegInf});
      add(done.back(), 1.0);
    } else {
      const double mid = 0.5 * (worst.a + worst.b);
      const Panel left = rule(worst.a, mid);
      const Panel right = rule(mid, worst.b);
      add(worst, -1.0);
      if (std::max(left.log_value, right.log_value) > ref + 300.0) {
        heap.push(left);
        heap.push(right);
        rebuild();
      } else {
        add(left, 1.0);
        add(right, 1.0);
        heap.push(left);
        heap.push(right);
      }
    }
    if (++splits % 256 == 0) rebuild();
  }
  if (splits % 256 != 0) rebuild();
  return {log_of(sv), log_of(se), heap.size() + done.size()};
}

/// Fixed-order Gauss-Legendre mean of f over [a, b] (8 nodes).
template <class F>
double gauss_legendre_mean(F&& f, double a, double b) {
  static constexpr std::array<double, 4> x = {0.183434642495649804939476142360184,
                                              0.525532409916328985817739049189246,
                                              0.796666477413626739591553936475830,
                                              0.960289856497536231683560868569473};
  static constexpr std::array<double, 4> w = {0.362683783378361982965150449277196,
                                              0.313706645877887287337962201986601,
                                              0.222381034453374470544355994426241,
                                              0.101228536290376259152531354309962};
  const double c = 0.5 * (a + b);
  const double hl = 0.5 * (b - a);
  double s = 0.0;
  for (std::size_t j = 0; j < 4; ++j) s += w[j] * (f(c - hl * x[j]) + f(c + hl * x[j]));
  return 0.5 * s;
}

/// Composite Simpson rule over equally spaced samples (odd count >= 3).
inline double simpson(std::span<const double> y, double h) {
  if (y.size() < 3 || y.size() % 2 == 0) {
    throw Error("simpson: need an odd number of samples >= 3");
  }
  double s = y.front() + y.back();
  for (std::size_t i = 1; i + 1 < y.size(); ++i) s += (i % 2 == 1 ? 4.0 : 2.0) * y[i];
  return s * h / 3.0;
}

}  // namespace qsd::quad
