#include <cmath>
#include <memory>
#include <numbers>
#include <numeric>
#include <vector>

#include <gtest/gtest.h>
#include <unsupported/Eigen/MatrixFunctions>

#include "qsd/boundary.hpp"
#include "qsd/spectral.hpp"

using namespace qsd;

namespace {

struct Logistic {
  DiffusionModel model = logistic_feller_model(1, 1, 1);
  Grid grid;
  GeneratorMatrix gen;
  SpectralData spec;
  GeneratorMatrix tilde;
};

class LogisticGrid : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    L = std::make_unique<Logistic>();
    L->grid = build_grid(L->model, 1e-3, 6.0, 2000, Spacing::log);
    L->gen = discretize_generator(L->model, L->grid);
    L->spec = build_spectral_data(L->model, L->grid, L->gen);
    L->tilde = h_transform_generator(L->gen, L->spec);
  }
  static void TearDownTestSuite() { L.reset(); }
  static std::unique_ptr<Logistic> L;
};
std::unique_ptr<Logistic> LogisticGrid::L;

// ∫_a^b e^{-Q} by Simpson in log x.
double mass_oracle(const DiffusionModel& m, double a, double b, int n) {
  const double la = std::log(a), h = (std::log(b) - la) / n;
  double s = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double x = std::exp(la + i * h);
    const double f = std::exp(-eval_Q(m, x)) * x;
    s += (i == 0 || i == n ? 1.0 : (i % 2 ? 4.0 : 2.0)) * f;
  }
  return s * h / 3.0;
}

// max_j |Σ_i μ_i A_ij|, with the scale max_j Σ_i |μ_i A_ij|.
std::pair<double, double> left_residual(const GeneratorMatrix& g, const Vec& mu, double shift) {
  const Vec r = g.apply_left(mu) + shift * mu;
  GeneratorMatrix a = g;
  for (auto& v : a.diag) v = std::abs(v);
  for (auto& v : a.lower) v = std::abs(v);
  for (auto& v : a.upper) v = std::abs(v);
  return {r.cwiseAbs().maxCoeff(), a.apply_left(mu.cwiseAbs()).maxCoeff()};
}

GeneratorMatrix two_identical_blocks() {
  GeneratorMatrix g;
  g.diag = {-2, -2, -1, -1, -2, -2};
  g.upper = {1, 1, 0, 1, 1};
  g.lower = {1, 1, 0, 1, 1};
  g.right = BoundaryCondition::absorbing;
  g.symmetrizing_weights.assign(6, 1.0);
  return g;
}

}  // namespace

// ---------------------------------------------------------------- grid

TEST(BuildGrid, ThreeNodeBrownianDualCells) {
  const auto g = build_grid(polynomial_drift_model({}), 0.0, 1.0, 3, Spacing::uniform);
  ASSERT_EQ(g.size(), 3u);
  EXPECT_DOUBLE_EQ(g.points[0], 0.25);
  EXPECT_DOUBLE_EQ(g.points[2], 0.75);
  // outer cells reach the truncation points
  EXPECT_NEAR(g.speed_weights[0], 0.375, 1e-14);
  EXPECT_NEAR(g.speed_weights[1], 0.25, 1e-14);
  EXPECT_NEAR(g.speed_weights[2], 0.375, 1e-14);
}

TEST(BuildGrid, MassMatchesQuadrature) {
  const auto lf = logistic_feller_model(1, 1, 1);
  const auto g1 = build_grid(lf, 1e-3, 6.0, 2000, Spacing::log);
  const double o1 = mass_oracle(lf, 1e-3, 6.0, 200'000);
  EXPECT_NEAR(std::accumulate(g1.speed_weights.begin(), g1.speed_weights.end(), 0.0), o1, 1e-6 * o1);

  const auto cubic = polynomial_drift_model({{3, 1}});
  const auto g2 = build_grid(cubic, 1e-3, 4.0, 1500, Spacing::log);
  const double o2 = mass_oracle(cubic, 1e-3, 4.0, 200'000);
  EXPECT_NEAR(std::accumulate(g2.speed_weights.begin(), g2.speed_weights.end(), 0.0), o2, 1e-6 * o2);
}

TEST(BuildGrid, InvariantsHold) {
  const auto g = build_grid(logistic_feller_model(2, 3, 1), 1e-3, 5.0, 500, Spacing::log);
  for (std::size_t i = 0; i < g.size(); ++i) {
    EXPECT_GT(g.points[i], g.eps);
    EXPECT_LT(g.points[i], g.R);
    if (i) {
      EXPECT_GT(g.points[i], g.points[i - 1]);
    }
    EXPECT_GT(g.speed_weights[i], 0.0);
  }
}

TEST(BuildGrid, UnderflowingTailIsDropped) {
  // e^{-Q} with Q ≈ y⁴/2 underflows near y ≈ 6.1
  const auto g = build_grid(polynomial_drift_model({{3, 1}}), 1e-3, 20.0, 400, Spacing::uniform);
  EXPECT_LT(g.size(), 400u);
  EXPECT_LT(g.R, 7.0);
  EXPECT_GT(g.R, g.points.back());
  for (double w : g.speed_weights) EXPECT_GT(w, 0.0);
}

TEST(BuildGrid, RejectsBadArguments) {
  const auto m = polynomial_drift_model({});
  EXPECT_THROW(build_grid(m, 1e-3, 1.0, 2, Spacing::log), Error);
  EXPECT_THROW(build_grid(m, 0.0, 1.0, 10, Spacing::log), Error);
  EXPECT_THROW(build_grid(m, 2.0, 1.0, 10, Spacing::uniform), Error);
}

// ---------------------------------------------------------------- generator

TEST(Discretize, BrownianInteriorStencil) {
  const auto m = polynomial_drift_model({});
  const auto g = build_grid(m, 0.0, 1.0, 9, Spacing::uniform);
  const auto L = discretize_generator(m, g);
  const double h = 0.1;
  for (std::size_t i = 1; i + 1 < 9; ++i) {
    EXPECT_NEAR(L.lower[i - 1], 1.0 / (2 * h * h), 1e-9);
    EXPECT_NEAR(L.diag[i], -1.0 / (h * h), 1e-9);
    EXPECT_NEAR(L.upper[i], 1.0 / (2 * h * h), 1e-9);
  }
}

TEST_F(LogisticGrid, GeneratorStructure) {
  const auto& g = L->gen;
  EXPECT_LT(symmetry_residual(g), 1e-12);
  for (double v : g.lower) EXPECT_GE(v, 0.0);
  for (double v : g.upper) EXPECT_GE(v, 0.0);
  // killing only through the left edge
  const Vec ones = Vec::Ones(static_cast<long>(g.size()));
  const Vec L1 = g.apply(ones);
  EXPECT_LT(L1[0], 0.0);
  const double scale = g.max_abs();
  for (long i = 1; i < L1.size(); ++i) EXPECT_LT(std::abs(L1[i]), 1e-12 * scale) << i;
}

TEST(Discretize, DirichletBothEndsMatchesSineModes) {
  // -½f'' on (0,π) with f = 0 at both ends: eigenvalues n²/2
  const auto m = polynomial_drift_model({});
  std::vector<double> err;
  for (std::size_t N : {250u, 500u, 1000u}) {
    const auto g = build_grid(m, 0.0, std::numbers::pi, N, Spacing::uniform);
    const auto L = discretize_generator(m, g, BoundaryCondition::absorbing);
    const auto lam = generator_spectrum(L);
    EXPECT_NEAR(lam[0], 0.5, 1e-3);
    EXPECT_NEAR(lam[1], 2.0, 4e-3);
    EXPECT_NEAR(lam[2], 4.5, 1e-2);
    err.push_back(std::abs(lam[0] - 0.5));
  }
  // error shrinks on refinement
  EXPECT_LT(err[2], 0.6 * err[0]);
}

// ---------------------------------------------------------------- eigen_solve

TEST_F(LogisticGrid, EigenpairsAreOrthonormalAndOrdered) {
  const auto pairs = eigen_solve(L->gen, 4);
  const Vec m = L->grid.weights();
  for (std::size_t a = 0; a < 4; ++a) {
    if (a) {
      EXPECT_GT(pairs[a].lambda, pairs[a - 1].lambda);
    }
    for (std::size_t b = 0; b < 4; ++b) {
      const double ip = pairs[a].eta.cwiseProduct(pairs[b].eta).dot(m);
      EXPECT_NEAR(ip, a == b ? 1.0 : 0.0, 1e-10);
    }
    // eigen-relation L η = -λ η, relative to the generator scale
    const Vec r = L->gen.apply(pairs[a].eta) + pairs[a].lambda * pairs[a].eta;
    EXPECT_LT(r.cwiseAbs().maxCoeff(), 1e-9 * L->gen.max_abs() * pairs[a].eta.cwiseAbs().maxCoeff());
  }
  EXPECT_GT(pairs[0].eta.minCoeff(), 0.0);
}

TEST_F(LogisticGrid, EigenvaluesStableUnderRefinement) {
  const auto g = build_grid(L->model, 1e-3, 6.0, 1000, Spacing::log);
  const auto coarse = eigen_solve(discretize_generator(L->model, g), 2);
  EXPECT_NEAR(coarse[0].lambda / L->spec.lambda1, 1.0, 5e-4);
  EXPECT_NEAR(coarse[1].lambda / L->spec.lambda2, 1.0, 5e-4);
}

TEST(EigenSolve, BadArgumentsAndDegeneracy) {
  const auto m = polynomial_drift_model({});
  const auto g = build_grid(m, 0.0, 1.0, 10, Spacing::uniform);
  const auto L = discretize_generator(m, g);
  EXPECT_THROW(eigen_solve(L, 1), Error);
  EXPECT_THROW(eigen_solve(L, 11), Error);
  EXPECT_THROW(eigen_solve(two_identical_blocks(), 2), DegeneracyError);
}

TEST_F(LogisticGrid, SpectrumAgreesWithDenseSolver) {
  const auto g = build_grid(L->model, 1e-2, 6.0, 200, Spacing::uniform);
  const auto gen = discretize_generator(L->model, g);
  const auto lam = generator_spectrum(gen);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
  Eigen::MatrixXd a = gen.dense();
  Vec s(static_cast<long>(g.size()));
  for (long i = 0; i < s.size(); ++i) s[i] = std::sqrt(g.speed_weights[static_cast<std::size_t>(i)]);
  es.compute(-(s.asDiagonal() * a * s.cwiseInverse().asDiagonal()));
  for (int k = 0; k < 5; ++k) EXPECT_NEAR(lam[k] / es.eigenvalues()[k], 1.0, 1e-9) << k;
}

// ---------------------------------------------------------------- spectral data

TEST_F(LogisticGrid, SpectralDataInvariants) {
  const auto& s = L->spec;
  EXPECT_GT(s.lambda1, 0.0);
  EXPECT_GT(s.lambda2, s.lambda1);
  EXPECT_NEAR(s.alpha_weights.sum(), 1.0, 1e-12);
  EXPECT_NEAR(s.beta_weights.sum(), 1.0, 1e-10);
  EXPECT_NEAR(s.m_eta1, s.eta1.dot(L->grid.weights()), 1e-14 * s.m_eta1);
  int changes = 0;
  for (long i = 1; i < s.eta2.size(); ++i) changes += (s.eta2[i] > 0) != (s.eta2[i - 1] > 0);
  EXPECT_EQ(changes, 1);
  EXPECT_EQ(s.q_tilde.size(), s.eta1.size());
}

TEST_F(LogisticGrid, Eta1IncreasingAndBounded) {
  const auto& e = L->spec.eta1;
  for (long i = 1; i < e.size(); ++i) EXPECT_GE(e[i], e[i - 1]) << i;
  long arg = 0;
  e.maxCoeff(&arg);
  EXPECT_GE(arg, static_cast<long>(0.95 * static_cast<double>(e.size())));
  EXPECT_TRUE(std::isfinite(e.maxCoeff()));
}

TEST_F(LogisticGrid, QsdIsLeftEigenvector) {
  const auto [r, scale] = left_residual(L->gen, L->spec.alpha_weights, L->spec.lambda1);
  EXPECT_LT(r, 1e-8 * scale);
}

// ---------------------------------------------------------------- h-transform

TEST_F(LogisticGrid, HTransformSpectrumIsShifted) {
  const auto tilde = generator_spectrum(L->tilde);
  const auto base = generator_spectrum(L->gen);
  EXPECT_LT(std::abs(tilde[0]), 1e-10);
  EXPECT_NEAR(tilde[1] / L->spec.gap(), 1.0, 1e-10);
  for (std::size_t k = 1; k < 50; ++k) {
    EXPECT_NEAR(tilde[k] / (base[k] - base[0]), 1.0, 1e-10) << k;
  }
}

TEST_F(LogisticGrid, HTransformIsConservativeWithInvariantBeta) {
  const double scale = L->tilde.max_abs();
  EXPECT_LT(row_sum_residual(L->tilde), 1e-8 * scale);
  const auto [r, bscale] = left_residual(L->tilde, L->spec.beta_weights, 0.0);
  EXPECT_LT(r, 1e-8 * bscale);
}

TEST_F(LogisticGrid, Reversibility) {
  EXPECT_LT(verify_reversibility(L->tilde, L->spec), 1e-10 * reversibility_scale(L->tilde, L->spec));
  // negative control: perturbed transition rates are detected
  auto bad = L->tilde;
  for (std::size_t i = 0; i < bad.upper.size(); i += 7) bad.upper[i] *= 1.0 + 1e-3 * std::sin(double(i));
  EXPECT_GT(verify_reversibility(bad, L->spec), 1e-6 * reversibility_scale(bad, L->spec));
}

TEST(Reversibility, BrownianDirichletLeft) {
  const auto m = polynomial_drift_model({});
  const auto g = build_grid(m, 0.0, 3.0, 300, Spacing::uniform);
  const auto gen = discretize_generator(m, g);
  const auto s = build_spectral_data(m, g, gen);
  const auto t = h_transform_generator(gen, s);
  EXPECT_LT(verify_reversibility(t, s), 1e-12 * reversibility_scale(t, s));
}

TEST_F(LogisticGrid, Intertwining) {
  const SpectralSemigroup P(L->gen), Pt(L->tilde);
  const long n = L->spec.eta1.size();
  const Vec ones = Vec::Ones(n);
  EXPECT_EQ(verify_intertwining(P, Pt, L->spec, 0.0, ones), 0.0);
  for (double t : {0.5, 1.0, 2.0}) EXPECT_LT(verify_intertwining(P, Pt, L->spec, t, ones), 1e-8) << t;

  const Vec g = L->spec.eta2.cwiseQuotient(L->spec.eta1);
  const double gn = g.cwiseAbs().maxCoeff();
  EXPECT_LT(verify_intertwining(P, Pt, L->spec, 1.0, g), 1e-8 * gn);
  const Vec lhs = Pt.apply(1.0, g);
  EXPECT_LT((lhs - std::exp(-L->spec.gap()) * g).cwiseAbs().maxCoeff(), 1e-8 * gn);
  EXPECT_THROW(verify_intertwining(P, Pt, L->spec, 11.0 / L->spec.lambda1, ones), Error);
}

TEST(SpectralSemigroup, MatchesDenseMatrixExponential) {
  const auto m = logistic_feller_model(1, 1, 1);
  const auto g = build_grid(m, 0.05, 6.0, 60, Spacing::uniform);
  const auto gen = discretize_generator(m, g);
  const SpectralSemigroup P(gen);
  const Eigen::MatrixXd A = gen.dense();
  Vec f(60), mu(60);
  for (long i = 0; i < 60; ++i) {
    f[i] = std::cos(0.3 * i);
    mu[i] = 1.0 + 0.5 * std::sin(0.2 * i);
  }
  for (double t : {0.1, 0.7, 3.0}) {
    const Eigen::MatrixXd E = (A * t).exp();
    const Vec want = E * f;
    EXPECT_LT((P.apply(t, f) - want).cwiseAbs().maxCoeff(), 1e-9 * f.cwiseAbs().maxCoeff()) << t;
    const Vec wl = E.transpose() * mu;
    EXPECT_LT((P.apply_left(t, mu) - wl).cwiseAbs().maxCoeff(), 1e-9 * mu.cwiseAbs().maxCoeff()) << t;
    // shift only rescales
    const Vec shifted = P.apply(t, f, 0.4);
    const double tol = 1e-9 * std::exp(0.4 * t) * f.cwiseAbs().maxCoeff();
    EXPECT_LT((shifted - std::exp(0.4 * t) * want).cwiseAbs().maxCoeff(), tol);
  }
}

// ---------------------------------------------------------------- δ̃ and the Q-process

TEST_F(LogisticGrid, DeltaTildeIsFiniteAndRespectsChenBound) {
  std::vector<double> bs;
  for (int k = 0; k < 40; ++k) bs.push_back(L->grid.points[static_cast<std::size_t>(50 * k + 25)]);
  const auto dt = delta_tilde(L->model, L->spec, bs);
  EXPECT_TRUE(std::isfinite(dt.value));
  EXPECT_GT(dt.value, 0.0);
  EXPECT_LE(1.0 / (4.0 * dt.value), L->spec.gap());
}

TEST(DeltaTilde, CubicDrift) {
  const auto m = polynomial_drift_model({{3, 1}});
  const auto g = build_grid(m, 1e-3, 4.0, 800, Spacing::log);
  const auto gen = discretize_generator(m, g);
  const auto s = build_spectral_data(m, g, gen);
  std::vector<double> bs;
  for (std::size_t i = 10; i < g.size(); i += 40) bs.push_back(g.points[i]);
  const auto dt = delta_tilde(m, s, bs);
  EXPECT_TRUE(std::isfinite(dt.value));
  EXPECT_LE(1.0 / (4.0 * dt.value), s.gap());
}

TEST_F(LogisticGrid, Eta1Interpolant) {
  const Eta1Interpolant eta(L->spec);
  const auto& x = L->grid.points;
  const auto& e = L->spec.eta1;
  for (std::size_t i = eta.junction(); i < x.size(); i += 97) {
    EXPECT_NEAR(eta(x[i]), e[static_cast<long>(i)], 1e-14 * e[static_cast<long>(i)]);
  }
  EXPECT_EQ(eta(50.0), e[e.size() - 1]);
  // exit boundary of the logistic model: η₁ ~ x² near 0
  EXPECT_NEAR(eta.left_power(), 2.0, 0.1);
}

TEST_F(LogisticGrid, QProcessIsEntranceAtInfinity) {
  // q̃ is piecewise linear with a kink at every node; 1e-8 keeps the nested
  // quadrature from resolving each kink to full precision.
  ImproperOptions opt;
  opt.quad_rel_tol = 1e-8;
  const auto qm = qprocess_model(L->model, L->spec);
  const auto inf = classify_boundary(qm, Endpoint::infinity, 1.0, opt);
  EXPECT_EQ(inf.I.status, VerdictStatus::diverged);
  EXPECT_EQ(inf.J.status, VerdictStatus::converged);
  EXPECT_EQ(inf.classification, BoundaryClass::entrance);
  // 0 is no longer reachable for the conditioned process
  EXPECT_EQ(feller_I(qm, Endpoint::zero, 1.0, opt).status, VerdictStatus::diverged);
}

TEST_F(LogisticGrid, QProcessModelPotential) {
  const auto qm = qprocess_model(L->model, L->spec);
  EXPECT_NEAR(eval_Q(qm, 1.0), 0.0, 1e-12);
  for (double x : {0.05, 0.5, 2.0, 5.0, 8.0}) {
    const double h = 1e-5 * x;
    const double fd = (eval_Q(qm, x + h) - eval_Q(qm, x - h)) / (2 * h);
    EXPECT_NEAR(fd, 2.0 * qm.q(x), 1e-4 * std::max(1.0, std::abs(qm.q(x)))) << x;
  }
}
