#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "qsd/model.hpp"

using namespace qsd;

namespace {

// Composite Simpson with n (even) panels.
template <class F>
double simpson_oracle(F f, double a, double b, int n) {
  const double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * f(a + i * h);
  return s * h / 3.0;
}

DiffusionModel without_closed_form(DiffusionModel m) {
  m.Q_closed_form.reset();
  m.name += "_numeric";
  return m;
}

std::vector<double> log_points(double lo, double hi, int n) {
  std::vector<double> xs;
  for (int i = 0; i < n; ++i) xs.push_back(lo * std::pow(hi / lo, i / (n - 1.0)));
  return xs;
}

}  // namespace

TEST(LogisticFeller, DriftValues) {
  const auto m = logistic_feller_model(1, 1, 1);
  EXPECT_NEAR(m.q(2.0), 0.25, 1e-15);
  EXPECT_NEAR(logistic_feller_model(2, 3, 1).q(1.0), -0.75, 1e-15);
  // inward pull dominated by kσx³/8
  EXPECT_NEAR(m.q(1e3) / (1e9 / 8.0), 1.0, 1e-5);
}

TEST(LogisticFeller, RejectsNonPositiveParameters) {
  EXPECT_THROW(logistic_feller_model(0, 1, 1), Error);
  EXPECT_THROW(logistic_feller_model(1, -1, 1), Error);
  EXPECT_THROW(logistic_feller_model(1, 1, 0), Error);
}

TEST(LogisticFeller, DomainHintFromPotential) {
  const auto m = logistic_feller_model(1, 1, 1);
  EXPECT_NEAR(m.domain_hint.x_max, 6.0, 0.5);
  EXPECT_GT(m.domain_hint.x_min, 0.0);
}

TEST(EvalQ, ClosedFormExamples) {
  EXPECT_EQ(eval_Q(polynomial_drift_model({}), 5.0), 0.0);
  EXPECT_NEAR(eval_Q(polynomial_drift_model({{1, 1}}), 2.0), 3.0, 1e-14);
}

TEST(EvalQ, LogisticAgreesWithSimpsonOracle) {
  const auto m = logistic_feller_model(1, 1, 1);
  const auto num = without_closed_form(m);
  for (double x : {0.01, 0.5, 2.0, 4.5}) {
    const double oracle = (x > 1 ? 1 : -1) *
                          simpson_oracle([&](double y) { return 2.0 * m.q(y); }, std::min(x, 1.0), std::max(x, 1.0),
                                         x < 0.1 ? 2'000'000 : 20'000);
    EXPECT_NEAR(eval_Q(m, x), oracle, 1e-8 * std::max(1.0, std::abs(oracle))) << x;
    EXPECT_NEAR(eval_Q(num, x), oracle, 1e-8 * std::max(1.0, std::abs(oracle))) << x;
  }
}

TEST(EvalQ, ClosedFormsVanishAtOne) {
  for (const auto& m : {logistic_feller_model(1, 1, 1), logistic_feller_model(2, 3, 0.5),
                        polynomial_drift_model({{3, 1}, {-1, 0.5}, {0, -2}})}) {
    EXPECT_NEAR(eval_Q(m, 1.0), 0.0, 1e-15) << m.name;
  }
}

TEST(EvalQ, DerivativeIsTwiceDrift) {
  const std::vector<DiffusionModel> models = {
      logistic_feller_model(1, 1, 1), logistic_feller_model(2, 3, 1), polynomial_drift_model({{3, 1}}),
      polynomial_drift_model({{1, 1}, {-1, 0.25}}), without_closed_form(logistic_feller_model(1, 1, 1))};
  for (const auto& m : models) {
    for (double x : log_points(1e-2, 5.0, 100)) {
      const double h = 1e-5 * x;
      const double fd = (eval_Q(m, x + h) - eval_Q(m, x - h)) / (2 * h);
      const double want = 2.0 * m.q(x);
      EXPECT_NEAR(fd, want, 1e-5 * std::max(1.0, std::abs(want))) << m.name << " x=" << x;
    }
  }
}

TEST(DeltaQ, MatchesDifferenceAndResolvesTinyOffsets) {
  const auto m = logistic_feller_model(1, 1, 1);
  EXPECT_NEAR(delta_Q(m, 2.0, 0.5), eval_Q(m, 2.0) - eval_Q(m, 1.5), 1e-12);
  // for u far below the spacing of Q values, ΔQ ≈ 2q(y)u
  const double u = 1e-14;
  EXPECT_NEAR(delta_Q(m, 40.0, u) / (2.0 * m.q(40.0) * u), 1.0, 1e-6);
  EXPECT_EQ(delta_Q(m, 3.0, 0.0), 0.0);
}

TEST(ScaleSpeed, BrownianMotion) {
  const auto s = scale_speed(polynomial_drift_model({}));
  for (double x : {0.1, 0.5, 1.0, 3.0, 10.0}) {
    EXPECT_NEAR(s.Lambda(x), x - 1.0, 1e-12) << x;
    EXPECT_NEAR(s.speed_density(x), 1.0, 1e-15);
  }
}

TEST(ScaleSpeed, LinearDriftSpeedDensity) {
  const auto s = scale_speed(polynomial_drift_model({{1, 1}}));
  for (double x : {0.2, 1.0, 2.5}) EXPECT_NEAR(s.speed_density(x), std::exp(1.0 - x * x), 1e-14);
}

TEST(ScaleSpeed, LogisticLambdaAgreesWithOracle) {
  const auto m = logistic_feller_model(1, 1, 1);
  const auto s = scale_speed(m);
  const double oracle = simpson_oracle([&](double y) { return std::exp(eval_Q(m, y)); }, 1.0, 2.0, 20'000);
  EXPECT_NEAR(s.Lambda(2.0), oracle, 1e-8 * oracle);
  EXPECT_EQ(s.Lambda(1.0), 0.0);
  EXPECT_LT(s.Lambda(0.5), 0.0);
}

TEST(ScaleSpeed, LambdaStrictlyIncreasing) {
  for (const auto& m : {logistic_feller_model(1, 1, 1), logistic_feller_model(2, 3, 1),
                        logistic_feller_model(0.5, 0.2, 4)}) {
    const auto s = scale_speed(m);
    double prev = -INFINITY;
    for (double x : log_points(1e-3, 3.0, 60)) {
      const double L = s.Lambda(x);
      EXPECT_GT(L, prev) << m.name << " x=" << x;
      EXPECT_GT(s.speed_density(x), 0.0);
      prev = L;
    }
  }
}

TEST(ScaleSpeed, OverflowIsARangeErrorButLogStaysFinite) {
  const auto s = scale_speed(logistic_feller_model(1, 1, 1));
  // Q(40) ≈ 40⁴/16 ≈ 1.6e5
  EXPECT_TRUE(std::isfinite(s.log_abs_Lambda(40.0)));
  EXPECT_THROW(s.Lambda(40.0), RangeError);
}

TEST(PolynomialModel, Factories) {
  const auto lin = polynomial_drift_model({{1, 1}});
  EXPECT_NEAR(lin.q(3.0), 3.0, 1e-15);
  const auto bm = polynomial_drift_model({});
  EXPECT_EQ(bm.q(7.0), 0.0);
  const auto cubic = polynomial_drift_model({{3, 1}});
  EXPECT_NEAR(cubic.q(2.0), 8.0, 1e-14);
  EXPECT_NEAR(eval_Q(polynomial_drift_model({{-1, 0.5}}), std::exp(2.0)), 2.0, 1e-14);
  EXPECT_THROW(polynomial_drift_model({{NAN, 1}}), Error);
}
