#include <cmath>
#include <numbers>
#include <vector>

#include <gtest/gtest.h>

#include "qsd/errors.hpp"
#include "qsd/quadrature.hpp"

namespace quad = qsd::quad;

TEST(Integrate, PolynomialIsExact) {
  const auto r = quad::integrate([](double x) { return 3 * x * x - 2 * x + 1; }, -1.0, 2.0);
  EXPECT_NEAR(r.value, 9.0 - 3.0 + 3.0, 1e-13);
}

TEST(Integrate, OscillatoryAndPeaked) {
  EXPECT_NEAR(quad::integrate([](double x) { return std::sin(x); }, 0.0, std::numbers::pi).value, 2.0, 1e-12);
  const auto r = quad::integrate([](double x) { return 1.0 / (1e-4 + (x - 0.3) * (x - 0.3)); }, 0.0, 1.0, 1e-10);
  const double exact = 100.0 * (std::atan(0.7 / 1e-2) + std::atan(0.3 / 1e-2));
  EXPECT_NEAR(r.value, exact, 1e-8);
}

TEST(Integrate, ReversedLimitsFlipSign) {
  const auto a = quad::integrate([](double x) { return std::exp(x); }, 0.0, 1.0);
  const auto b = quad::integrate([](double x) { return std::exp(x); }, 1.0, 0.0);
  EXPECT_NEAR(a.value, -b.value, 1e-14);
}

TEST(Integrate, BudgetExhaustionCarriesPartialEstimate) {
  auto f = [](double x) { return std::pow(std::abs(x - 0.3), -0.95); };
  try {
    quad::integrate(f, 0.0, 1.0, 1e-14, 0.0, 8);
    FAIL() << "expected IntegrationError";
  } catch (const qsd::IntegrationError& e) {
    EXPECT_GT(e.partial_estimate(), 0.0);
    EXPECT_GT(e.error_estimate(), 0.0);
  }
}

TEST(Integrate, NonFiniteIntegrandReportsAbscissa) {
  try {
    quad::integrate([](double x) { return x > 0.5 ? NAN : 1.0; }, 0.0, 1.0);
    FAIL() << "expected EvaluationError";
  } catch (const qsd::EvaluationError& e) {
    EXPECT_GT(e.abscissa(), 0.5);
  }
}

TEST(LogIntegrateExp, MatchesClosedForm) {
  // ∫_0^2 e^{3x} dx
  const auto r = quad::log_integrate_exp([](double x) { return 3.0 * x; }, 0.0, 2.0, 1e-13);
  EXPECT_NEAR(r.log_value, std::log((std::exp(6.0) - 1.0) / 3.0), 1e-12);
}

TEST(LogIntegrateExp, HugeExponentsStayFinite) {
  // ∫_0^1 e^{2000 x} dx, far beyond double range
  const auto r = quad::log_integrate_exp([](double x) { return 2000.0 * x; }, 0.0, 1.0, 1e-12);
  const double exact = 2000.0 - std::log(2000.0) + std::log1p(-std::exp(-2000.0));
  EXPECT_NEAR(r.log_value, exact, 1e-9);
}

TEST(LogIntegrateExp, BreakpointsInAnyOrder) {
  auto phi = [](double x) { return -std::abs(x - 0.25) * 50.0; };
  const std::vector<double> bp{0.7, 0.25, 0.1};
  const auto r = quad::log_integrate_exp(phi, 0.0, 1.0, 1e-12, bp);
  const double exact = (2.0 - std::exp(-12.5) - std::exp(-37.5)) / 50.0;
  EXPECT_NEAR(std::exp(r.log_value), exact, 1e-13);
}

TEST(LogIntegrateExp, VanishingIntegrand) {
  auto phi = [](double x) { return x < 0.5 ? quad::kNegInf : 0.0; };
  const std::vector<double> bp{0.5};
  const auto r = quad::log_integrate_exp(phi, 0.0, 1.0, 1e-12, bp);
  EXPECT_NEAR(std::exp(r.log_value), 0.5, 1e-14);
}

TEST(LogSum, Basics) {
  EXPECT_NEAR(quad::log_add(std::log(2.0), std::log(3.0)), std::log(5.0), 1e-15);
  EXPECT_EQ(quad::log_add(quad::kNegInf, 1.5), 1.5);
  const std::vector<double> xs{1000.0, 1000.0, quad::kNegInf};
  EXPECT_NEAR(quad::log_sum(xs), 1000.0 + std::log(2.0), 1e-12);
}

TEST(Simpson, CubicIsExact) {
  std::vector<double> y;
  const double h = 0.25;
  for (int i = 0; i <= 8; ++i) y.push_back(std::pow(i * h, 3));
  EXPECT_NEAR(quad::simpson(y, h), 4.0, 1e-14);
}

TEST(GaussLegendreMean, SmoothFunction) {
  EXPECT_NEAR(quad::gauss_legendre_mean([](double s) { return std::cos(s); }, 0.0, 0.5), std::sin(0.5) / 0.5,
              1e-14);
}
