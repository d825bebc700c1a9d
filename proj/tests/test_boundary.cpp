#include <chrono>
#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "qsd/boundary.hpp"

using namespace qsd;

namespace {

using VS = VerdictStatus;
using BC = BoundaryClass;

// I(0) and J(0) at b = 1 on a uniform grid in u = log y, trapezoid rule for
// both the inner cumulative integral and the outer one.
struct TrapezoidIJ {
  double I, J;
};

TrapezoidIJ trapezoid_zero(const DiffusionModel& m, double u_min, int n) {
  const double h = -u_min / n;
  std::vector<double> u(n + 1), Q(n + 1);
  for (int i = 0; i <= n; ++i) {
    u[i] = u_min + i * h;
    Q[i] = eval_Q(m, std::exp(u[i]));
  }
  // inner integrals from y up to 1, accumulated from the right
  std::vector<double> in_m(n + 1, 0.0), in_L(n + 1, 0.0);
  for (int i = n; i-- > 0;) {
    const double y0 = std::exp(u[i]), y1 = std::exp(u[i + 1]);
    in_m[i] = in_m[i + 1] + 0.5 * h * (std::exp(-Q[i]) * y0 + std::exp(-Q[i + 1]) * y1);
    in_L[i] = in_L[i + 1] + 0.5 * h * (std::exp(Q[i]) * y0 + std::exp(Q[i + 1]) * y1);
  }
  double I = 0.0, J = 0.0;
  for (int i = 0; i < n; ++i) {
    const double y0 = std::exp(u[i]), y1 = std::exp(u[i + 1]);
    I += 0.5 * h * (std::exp(Q[i]) * in_m[i] * y0 + std::exp(Q[i + 1]) * in_m[i + 1] * y1);
    J += 0.5 * h * (std::exp(-Q[i]) * in_L[i] * y0 + std::exp(-Q[i + 1]) * in_L[i + 1] * y1);
  }
  return {I, J};
}

}  // namespace

TEST(ImproperIntegral, ClosedFormExamples) {
  const auto a = improper_integral([](double y) { return 1.0 / (y * y); }, 1.0, Endpoint::infinity);
  ASSERT_EQ(a.status, VS::converged);
  EXPECT_NEAR(*a.value, 1.0, 1e-8);

  const auto b = improper_integral([](double y) { return 1.0 / y; }, 1.0, Endpoint::infinity);
  EXPECT_EQ(b.status, VS::diverged);
  EXPECT_FALSE(b.value.has_value());

  const auto c = improper_integral([](double y) { return 1.0 / std::sqrt(y); }, 1.0, Endpoint::zero);
  ASSERT_EQ(c.status, VS::converged);
  EXPECT_NEAR(*c.value, 2.0, 1e-8);
}

TEST(ImproperIntegral, TailExponentReflectsDecay) {
  const auto a = improper_integral([](double y) { return std::pow(y, -3.0); }, 1.0, Endpoint::infinity);
  ASSERT_EQ(a.status, VS::converged);
  EXPECT_NEAR(a.tail_exponent_estimate, -3.0, 0.05);
  EXPECT_NEAR(*a.value, 0.5, 1e-8);
}

TEST(ImproperIntegral, EvaluationFailureCarriesAbscissa) {
  try {
    improper_integral([](double y) { return y > 8.0 ? NAN : 1.0 / (y * y); }, 1.0, Endpoint::infinity);
    FAIL() << "expected EvaluationError";
  } catch (const EvaluationError& e) {
    EXPECT_GT(e.abscissa(), 8.0);
  }
}

TEST(FellerIntegrals, Brownian) {
  const auto bm = polynomial_drift_model({});
  EXPECT_EQ(feller_I(bm, Endpoint::infinity).status, VS::diverged);
  const auto J0 = feller_J(bm, Endpoint::zero);
  ASSERT_EQ(J0.status, VS::converged);
  EXPECT_NEAR(*J0.value, 0.5, 1e-8);
  const auto I0 = feller_I(bm, Endpoint::zero);
  ASSERT_EQ(I0.status, VS::converged);
  EXPECT_NEAR(*I0.value, 0.5, 1e-8);
}

TEST(FellerIntegrals, CubicDriftAtInfinity) {
  const auto cubic = polynomial_drift_model({{3, 1}});
  EXPECT_EQ(feller_I(cubic, Endpoint::infinity).status, VS::diverged);
  const auto J = feller_J(cubic, Endpoint::infinity);
  EXPECT_EQ(J.status, VS::converged);
  // integrand ~ 1/(2y³) in the tail
  EXPECT_NEAR(J.tail_exponent_estimate, -3.0, 0.1);
}

TEST(FellerIntegrals, LogisticAtZero) {
  const auto m = logistic_feller_model(1, 1, 1);
  EXPECT_EQ(feller_I(m, Endpoint::zero).status, VS::converged);
  EXPECT_EQ(feller_J(m, Endpoint::zero).status, VS::diverged);
}

TEST(FellerIntegrals, ConvergedValuesMatchTrapezoidOracle) {
  for (const auto& m : {polynomial_drift_model({}), polynomial_drift_model({{1, 1}}),
                        polynomial_drift_model({{0, -0.5}, {2, 0.3}})}) {
    const auto I = feller_I(m, Endpoint::zero);
    const auto J = feller_J(m, Endpoint::zero);
    ASSERT_EQ(I.status, VS::converged) << m.name;
    ASSERT_EQ(J.status, VS::converged) << m.name;
    const auto o = trapezoid_zero(m, -40.0, 400'000);
    EXPECT_NEAR(*I.value, o.I, 1e-6 * o.I) << m.name;
    EXPECT_NEAR(*J.value, o.J, 1e-6 * o.J) << m.name;
  }
  // logistic I(0): J diverges but I is finite
  const auto m = logistic_feller_model(1, 1, 1);
  const auto I = feller_I(m, Endpoint::zero);
  const auto o = trapezoid_zero(m, -40.0, 400'000);
  EXPECT_NEAR(*I.value, o.I, 1e-6 * o.I);
}

TEST(ClassifyTable, Lookup) {
  IntegralVerdict c, d, u;
  c.status = VS::converged;
  d.status = VS::diverged;
  u.status = VS::inconclusive;
  EXPECT_EQ(classify(c, c), BC::regular);
  EXPECT_EQ(classify(c, d), BC::exit);
  EXPECT_EQ(classify(d, c), BC::entrance);
  EXPECT_EQ(classify(d, d), BC::natural);
  EXPECT_EQ(classify(u, c), BC::unknown);
  EXPECT_EQ(classify(d, u), BC::unknown);
}

TEST(ClassifyBoundary, LogisticFellerExitAndEntrance) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto m = logistic_feller_model(1, 1, 1);
  EXPECT_EQ(classify_boundary(m, Endpoint::zero).classification, BC::exit);
  EXPECT_EQ(classify_boundary(m, Endpoint::infinity).classification, BC::entrance);
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), 5.0);
}

TEST(ClassifyBoundary, BrownianAndCubic) {
  const auto bm = polynomial_drift_model({});
  EXPECT_EQ(classify_boundary(bm, Endpoint::zero).classification, BC::regular);
  EXPECT_EQ(classify_boundary(bm, Endpoint::infinity).classification, BC::natural);
  EXPECT_EQ(classify_boundary(polynomial_drift_model({{3, 1}}), Endpoint::infinity).classification, BC::entrance);
}

TEST(ClassifyBoundary, InvariantUnderBasePoint) {
  const std::vector<DiffusionModel> models = {logistic_feller_model(1, 1, 1), logistic_feller_model(2, 3, 1),
                                              polynomial_drift_model({}), polynomial_drift_model({{3, 1}}),
                                              polynomial_drift_model({{1, 1}})};
  for (const auto& m : models) {
    for (Endpoint e : {Endpoint::zero, Endpoint::infinity}) {
      const auto ref = classify_boundary(m, e, 1.0).classification;
      EXPECT_NE(ref, BC::unknown) << m.name << ' ' << to_string(e);
      for (double b : {0.5, 2.0}) {
        EXPECT_EQ(classify_boundary(m, e, b).classification, ref) << m.name << ' ' << to_string(e) << " b=" << b;
      }
    }
  }
}

TEST(CertainAbsorption, Examples) {
  EXPECT_TRUE(check_certain_absorption(logistic_feller_model(1, 1, 1)));
  EXPECT_TRUE(check_certain_absorption(polynomial_drift_model({{3, 1}})));
  EXPECT_FALSE(check_certain_absorption(polynomial_drift_model({{0, -1}})));
}

TEST(CertainAbsorption, TooFewCutoffsIsIndeterminate) {
  ImproperOptions opt;
  opt.min_cutoffs = 20;
  opt.max_cutoffs = 3;
  EXPECT_THROW(check_certain_absorption(polynomial_drift_model({{0, -1}}), opt), IndeterminacyError);
}
