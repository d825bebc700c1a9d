#pragma once

// Feller boundary classification from the iterated integrals
//   I(a) = ∫_b^a dΛ(y) ∫_b^y dm(z),   J(a) = ∫_b^a dm(y) ∫_b^y dΛ(z).
//
// Convergence is decided numerically: partial integrals are accumulated over
// dyadic cutoffs approaching the endpoint and the increment ratios are tested.
// Everything is carried in log space; near-endpoint inner integrals are taken
// in the offset variable u = |y - z| so that steep potentials stay resolved.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "qsd/errors.hpp"
#include "qsd/model.hpp"
#include "qsd/quadrature.hpp"

namespace qsd {

enum class Endpoint { zero, infinity };
enum class VerdictStatus { converged, diverged, inconclusive };
enum class BoundaryClass { regular, exit, entrance, natural, unknown };

inline const char* to_string(Endpoint e) { return e == Endpoint::zero ? "zero" : "infinity"; }

inline const char* to_string(VerdictStatus s) {
  switch (s) {
    case VerdictStatus::converged: return "converged";
    case VerdictStatus::diverged: return "diverged";
    case VerdictStatus::inconclusive: return "inconclusive";
  }
  return "?";
}

inline const char* to_string(BoundaryClass c) {
  switch (c) {
    case BoundaryClass::regular: return "regular";
    case BoundaryClass::exit: return "exit";
    case BoundaryClass::entrance: return "entrance";
    case BoundaryClass::natural: return "natural";
    case BoundaryClass::unknown: return "unknown";
  }
  return "?";
}

struct IntegralVerdict {
  VerdictStatus status = VerdictStatus::inconclusive;
  std::optional<double> value;  // present iff converged
  double tail_exponent_estimate = 0.0;
  double log_partial = quad::kNegInf;  // log of the last partial integral
  std::size_t cutoffs = 0;
};

struct BoundaryReport {
  Endpoint endpoint = Endpoint::zero;
  IntegralVerdict I;
  IntegralVerdict J;
  BoundaryClass classification = BoundaryClass::unknown;
};

struct ImproperOptions {
  std::size_t min_cutoffs = 20;
  std::size_t max_cutoffs = 64;
  double zero_floor = 1e-12;
  double converge_ratio = 0.9;
  double diverge_ratio = 0.999;
  double rel_tail = 1e-9;
  std::size_t converge_window = 3;
  std::size_t diverge_window = 5;
  double quad_rel_tol = 1e-11;
};

namespace detail {

// Above this the partial integral no longer fits in a double.
inline constexpr double kLogOverflow = 709.0;

inline double integrand_tail_exponent(double ld_prev, double ld, double log_step) {
  if (ld == quad::kNegInf || ld_prev == quad::kNegInf) return -std::numeric_limits<double>::infinity();
  return (ld - ld_prev) / log_step - 1.0;
}

}  // namespace detail

/// Improper integral of exp(log_integrand) from `from` to the endpoint.
///
/// Increments over dyadic cutoffs are tested: converged when the last ratios
/// stay below `converge_ratio` and the geometric (Richardson) extrapolation of
/// the partial sums is stable to `rel_tail`; diverged when the last ratios stay
/// at or above `diverge_ratio` or the partial integral leaves double range.
template <class LogF>
IntegralVerdict improper_log_integral(LogF&& log_integrand, double from, Endpoint direction,
                                      const ImproperOptions& opt = {}) {
  if (!(from > 0.0)) throw Error("improper_integral: base point must be positive");
  const double step = direction == Endpoint::infinity ? 2.0 : 0.5;
  const double log_step = std::log(step);

  IntegralVerdict out;
  std::vector<double> ld;      // log increments
  std::vector<double> ratios;  // increment ratios
  double log_s = quad::kNegInf;
  double prev_extrap = std::numeric_limits<double>::quiet_NaN();
  double lo_cut = from;

  for (std::size_t k = 1; k <= opt.max_cutoffs; ++k) {
    const double cut = from * std::pow(step, static_cast<double>(k));
    if (direction == Endpoint::zero && cut < opt.zero_floor) break;
    if (!std::isfinite(cut)) break;
    const double a = std::min(lo_cut, cut);
    const double b = std::max(lo_cut, cut);
    double inc = quad::kNegInf;
    try {
      inc = quad::log_integrate_exp(log_integrand, a, b, opt.quad_rel_tol).log_value;
    } catch (const IntegrationError& e) {
      inc = e.partial_estimate();  // log-space partial; good enough for a ratio test
    }
    lo_cut = cut;
    ld.push_back(inc);
    log_s = quad::log_add(log_s, inc);
    out.cutoffs = k;
    out.log_partial = log_s;
    if (ld.size() >= 2) {
      const double prev = ld[ld.size() - 2];
      double r = 0.0;
      if (inc == quad::kNegInf) {
        r = 0.0;
      } else if (prev == quad::kNegInf) {
        r = std::numeric_limits<double>::infinity();
      } else {
        r = std::exp(inc - prev);
      }
      ratios.push_back(r);
      out.tail_exponent_estimate = detail::integrand_tail_exponent(prev, inc, log_step);
    }

    if (log_s > detail::kLogOverflow) {
      out.status = VerdictStatus::diverged;
      return out;
    }

    double extrap = std::numeric_limits<double>::quiet_NaN();
    if (!ratios.empty()) {
      const double r = ratios.back();
      const double s = std::exp(log_s);
      const double d = std::exp(inc);
      extrap = r < 1.0 ? s + d * r / (1.0 - r) : std::numeric_limits<double>::infinity();
    }

    if (k >= opt.min_cutoffs) {
      if (ratios.size() >= opt.converge_window) {
        const bool shrinking = std::all_of(ratios.end() - static_cast<long>(opt.converge_window),
                                           ratios.end(),
                                           [&](double r) { return r < opt.converge_ratio; });
        const bool stable = std::isfinite(extrap) && std::isfinite(prev_extrap) &&
                            std::abs(extrap - prev_extrap) <= opt.rel_tail * extrap;
        if (shrinking && stable) {
          out.status = VerdictStatus::converged;
          out.value = extrap;
          return out;
        }
      }
      if (ratios.size() >= opt.diverge_window) {
        const bool growing = std::all_of(ratios.end() - static_cast<long>(opt.diverge_window),
                                         ratios.end(),
                                         [&](double r) { return r >= opt.diverge_ratio; });
        if (growing) {
          out.status = VerdictStatus::diverged;
          return out;
        }
      }
    }
    prev_extrap = extrap;
  }
  out.status = VerdictStatus::inconclusive;
  return out;
}

/// Improper integral of a positive integrand; see improper_log_integral.
template <class F>
IntegralVerdict improper_integral(F&& integrand, double from, Endpoint direction,
                                  const ImproperOptions& opt = {}) {
  return improper_log_integral(
      [&](double x) {
        const double v = integrand(x);
        if (std::isnan(v) || v < 0.0) throw EvaluationError("integrand must be non-negative", x);
        return v > 0.0 ? std::log(v) : quad::kNegInf;
      },
      from, direction, opt);
}

namespace detail {

enum class FellerKind { I, J };

// log of the outer integrand of I or J at y: the inner integral with the
// outer density folded in, ∫ exp(±(Q(y) - Q(z))) dz over z between b and y.
inline double feller_log_integrand(const DiffusionModel& model, FellerKind kind, Endpoint a,
                                   double b, double y, double rel_tol) {
  const double span = std::abs(y - b);
  if (span == 0.0) return quad::kNegInf;
  // z = y - u toward infinity (z in [b, y]); z = y + u toward zero (z in [y, b]).
  const double dir = a == Endpoint::infinity ? 1.0 : -1.0;
  // For I the exponent is Q(y) - Q(z); for J it is Q(z) - Q(y).
  const double sign = kind == FellerKind::I ? 1.0 : -1.0;
  auto phi = [&](double u) { return sign * delta_Q(model, y, dir * u); };

  // The exponent varies on the scale min(y, 1/|2q(y)|) next to u = 0.
  const double qy = std::abs(model.drift(y));
  double scale = std::min(y, 1.0 / (1.0 + 2.0 * qy));
  scale = std::min(scale, span) / 16.0;
  std::vector<double> breaks;
  for (double s = span / 2.0; s > scale && breaks.size() < 200; s /= 2.0) breaks.push_back(s);
  if (!breaks.empty()) breaks.push_back(breaks.back() / 2.0);
  return quad::log_integrate_exp(phi, 0.0, span, rel_tol, breaks).log_value;
}

}  // namespace detail

inline IntegralVerdict feller_I(const DiffusionModel& model, Endpoint a, double b = 1.0,
                                const ImproperOptions& opt = {}) {
  if (!(b > 0.0)) throw Error("feller_I: b must be positive");
  return improper_log_integral(
      [&](double y) {
        return detail::feller_log_integrand(model, detail::FellerKind::I, a, b, y, opt.quad_rel_tol);
      },
      b, a, opt);
}

inline IntegralVerdict feller_J(const DiffusionModel& model, Endpoint a, double b = 1.0,
                                const ImproperOptions& opt = {}) {
  if (!(b > 0.0)) throw Error("feller_J: b must be positive");
  return improper_log_integral(
      [&](double y) {
        return detail::feller_log_integrand(model, detail::FellerKind::J, a, b, y, opt.quad_rel_tol);
      },
      b, a, opt);
}

inline BoundaryClass classify(const IntegralVerdict& I, const IntegralVerdict& J) {
  using S = VerdictStatus;
  if (I.status == S::inconclusive || J.status == S::inconclusive) return BoundaryClass::unknown;
  if (I.status == S::converged) {
    return J.status == S::converged ? BoundaryClass::regular : BoundaryClass::exit;
  }
  return J.status == S::converged ? BoundaryClass::entrance : BoundaryClass::natural;
}

inline BoundaryReport classify_boundary(const DiffusionModel& model, Endpoint endpoint,
                                        double b = 1.0, const ImproperOptions& opt = {}) {
  BoundaryReport r;
  r.endpoint = endpoint;
  r.I = feller_I(model, endpoint, b, opt);
  r.J = feller_J(model, endpoint, b, opt);
  r.classification = classify(r.I, r.J);
  return r;
}

/// True iff Λ(∞) = ∞, which makes absorption at an accessible 0 certain.
inline bool check_certain_absorption(const DiffusionModel& model, const ImproperOptions& opt = {}) {
  const auto v = improper_log_integral([&](double y) { return eval_Q(model, y); }, 1.0,
                                       Endpoint::infinity, opt);
  switch (v.status) {
    case VerdictStatus::diverged: return true;
    case VerdictStatus::converged: return false;
    case VerdictStatus::inconclusive: break;
  }
  throw IndeterminacyError(
      "scale integral at infinity is inconclusive; raise ImproperOptions::max_cutoffs");
}

}  // namespace qsd
