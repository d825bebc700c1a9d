#pragma once

// Unit-noise diffusions dX = dB - q(X) dt on (0, ∞), their potential
// Q(y) = ∫_1^y 2q, scale function and speed density.

#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "qsd/errors.hpp"
#include "qsd/quadrature.hpp"

namespace qsd {

using RealFn = std::function<double(double)>;

struct DomainHint {
  double x_min = 1e-3;
  double x_max = 20.0;
};

struct DiffusionModel {
  std::string name;
  RealFn drift;
  std::optional<RealFn> drift_derivative;
  std::optional<RealFn> Q_closed_form;
  DomainHint domain_hint;

  double q(double x) const { return drift(x); }
};

namespace detail {

// Segments [lo, hi] at powers of two so that singular or steep integrands near
// 0 or far from 1 are resolved on a log scale.
inline std::vector<double> dyadic_breaks(double lo, double hi) {
  std::vector<double> out;
  if (!(lo > 0.0) || !(hi > lo)) return out;
  double p = std::exp2(std::ceil(std::log2(lo)));
  if (p <= lo) p *= 2.0;
  for (; p < hi && out.size() < 4096; p *= 2.0) out.push_back(p);
  return out;
}

}  // namespace detail

/// Q(x) = ∫_1^x 2q(y) dy.
///
/// Uses the closed form when present, otherwise adaptive Gauss-Kronrod on
/// dyadic segments with absolute tolerance 1e-10.
inline double eval_Q(const DiffusionModel& model, double x) {
  if (!(x > 0.0)) throw Error("eval_Q: x must be positive");
  if (model.Q_closed_form) return (*model.Q_closed_form)(x);
  if (x == 1.0) return 0.0;
  const double lo = std::min(x, 1.0);
  const double hi = std::max(x, 1.0);
  std::vector<double> cuts{lo};
  for (double b : detail::dyadic_breaks(lo, hi)) cuts.push_back(b);
  cuts.push_back(hi);
  const double tol = 1e-10 / static_cast<double>(cuts.size() - 1);
  double total = 0.0;
  auto integrand = [&](double y) { return 2.0 * model.drift(y); };
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    try {
      total += quad::integrate(integrand, cuts[i], cuts[i + 1], tol).value;
    } catch (const IntegrationError& e) {
      const double partial = (x < 1.0 ? -1.0 : 1.0) * (total + e.partial_estimate());
      throw IntegrationError("eval_Q: quadrature of 2q did not converge", partial,
                             e.error_estimate());
    }
  }
  return x < 1.0 ? -total : total;
}

/// Q(y) - Q(y - u) evaluated without cancellation when u is small relative to
/// y, where differencing two large Q values would lose every digit.
inline double delta_Q(const DiffusionModel& model, double y, double u) {
  if (u == 0.0) return 0.0;
  const double z = y - u;
  const bool near = std::abs(u) <= 0.1 * std::max(y, z);
  if (near) {
    // Cheap exit when the potentials are small enough to difference safely.
    if (model.Q_closed_form) {
      const double qy = (*model.Q_closed_form)(y);
      const double qz = (*model.Q_closed_form)(z);
      if (std::max(std::abs(qy), std::abs(qz)) < 1e3) return qy - qz;
    }
    // Integrate in the offset variable so the result keeps full relative
    // precision even when u is below the floating-point spacing at y.
    const double mean = quad::gauss_legendre_mean(
        [&](double s) { return model.drift(y - s); }, 0.0, u);
    return 2.0 * u * mean;
  }
  return eval_Q(model, y) - eval_Q(model, z);
}

/// Λ(x) = ∫_1^x e^{Q} and the speed density e^{-Q}, memoized per point.
class ScaleSpeed {
 public:
  explicit ScaleSpeed(DiffusionModel model)
      : model_(std::make_shared<const DiffusionModel>(std::move(model))),
        cache_(std::make_shared<Cache>()) {}

  /// log|Λ(x)|; Λ(x) is negative for x < 1.
  double log_abs_Lambda(double x) const {
    if (!(x > 0.0)) throw Error("Lambda: x must be positive");
    if (x == 1.0) return quad::kNegInf;
    {
      std::lock_guard lock(cache_->mutex);
      if (auto it = cache_->log_lambda.find(x); it != cache_->log_lambda.end()) return it->second;
    }
    const double lo = std::min(x, 1.0);
    const double hi = std::max(x, 1.0);
    const auto breaks = detail::dyadic_breaks(lo, hi);
    const auto res = quad::log_integrate_exp([&](double y) { return eval_Q(*model_, y); }, lo, hi,
                                             1e-12, breaks);
    std::lock_guard lock(cache_->mutex);
    cache_->log_lambda.emplace(x, res.log_value);
    return res.log_value;
  }

  double Lambda(double x) const {
    const double l = log_abs_Lambda(x);
    if (l > std::log(std::numeric_limits<double>::max())) {
      throw RangeError("Lambda overflows double range at x=" + std::to_string(x));
    }
    return (x < 1.0 ? -1.0 : 1.0) * std::exp(l);
  }

  double speed_density(double x) const {
    {
      std::lock_guard lock(cache_->mutex);
      if (auto it = cache_->speed.find(x); it != cache_->speed.end()) return it->second;
    }
    const double v = std::exp(-eval_Q(*model_, x));
    std::lock_guard lock(cache_->mutex);
    cache_->speed.emplace(x, v);
    return v;
  }

  const DiffusionModel& model() const { return *model_; }

 private:
  struct Cache {
    std::mutex mutex;
    std::map<double, double> log_lambda;
    std::map<double, double> speed;
  };
  std::shared_ptr<const DiffusionModel> model_;
  std::shared_ptr<Cache> cache_;
};

inline ScaleSpeed scale_speed(const DiffusionModel& model) { return ScaleSpeed(model); }

namespace detail {

// Grid truncation where the speed density has fallen by e^{-64} from its
// value at 1: beyond that the truncated mass is negligible in double.
inline double truncation_hint(const DiffusionModel& m, double cap = 20.0) {
  double r = 1.0;
  while (r < cap && eval_Q(m, r) < 64.0) r *= 1.25;
  if (r >= cap) return cap;
  double lo = r / 1.25;
  double hi = r;
  for (int i = 0; i < 60; ++i) {
    const double mid = 0.5 * (lo + hi);
    (eval_Q(m, mid) < 64.0 ? lo : hi) = mid;
  }
  return std::min(cap, std::ceil(10.0 * hi) / 10.0);
}

}  // namespace detail

/// The image X = 2√(Z/σ) of the logistic Feller diffusion
/// dZ = √(σZ) dB + (rZ - kZ²) dt, which has unit noise and drift
/// q(x) = 1/(2x) - r x/2 + kσ x³/8.
inline DiffusionModel logistic_feller_model(double sigma, double r, double k) {
  if (!(sigma > 0.0) || !(r > 0.0) || !(k > 0.0)) {
    throw Error("logistic_feller_model: sigma, r, k must be positive");
  }
  DiffusionModel m;
  m.name = "logistic_feller";
  m.drift = [=](double x) { return 0.5 / x - 0.5 * r * x + k * sigma * x * x * x / 8.0; };
  m.drift_derivative = [=](double x) { return -0.5 / (x * x) - 0.5 * r + 3.0 * k * sigma * x * x / 8.0; };
  m.Q_closed_form = [=](double y) {
    return std::log(y) - 0.5 * r * (y * y - 1.0) + k * sigma * (y * y * y * y - 1.0) / 16.0;
  };
  m.domain_hint = {1e-3, detail::truncation_hint(m)};
  return m;
}

struct PolynomialTerm {
  double power = 0.0;
  double coeff = 0.0;
};

/// q(x) = Σ coeff·x^power with its exact potential.
inline DiffusionModel polynomial_drift_model(std::vector<PolynomialTerm> terms) {
  for (const auto& t : terms) {
    if (!std::isfinite(t.power) || !std::isfinite(t.coeff)) {
      throw Error("polynomial_drift_model: non-finite term");
    }
  }
  DiffusionModel m;
  m.name = "polynomial";
  m.drift = [terms](double x) {
    double s = 0.0;
    for (const auto& t : terms) s += t.coeff * std::pow(x, t.power);
    return s;
  };
  m.drift_derivative = [terms](double x) {
    double s = 0.0;
    for (const auto& t : terms) {
      if (t.power != 0.0) s += t.coeff * t.power * std::pow(x, t.power - 1.0);
    }
    return s;
  };
  m.Q_closed_form = [terms](double y) {
    double s = 0.0;
    for (const auto& t : terms) {
      if (t.power == -1.0) {
        s += 2.0 * t.coeff * std::log(y);
      } else {
        const double p1 = t.power + 1.0;
        s += 2.0 * t.coeff * (std::pow(y, p1) - 1.0) / p1;
      }
    }
    return s;
  };
  m.domain_hint = {1e-3, detail::truncation_hint(m)};
  return m;
}

}  // namespace qsd
