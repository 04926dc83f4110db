#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "crflow/conformal.hpp"
#include "crflow/mobius.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace crflow;
using fixture::basis;
using fixture::random_positive;

TEST(WebsterCurvature, RoundFactorHasRoundCurvature) {
  for (int n : {1, 2}) {
    auto b = basis(n, n == 1 ? 6 : 3);
    ConformalState s(SpectralField::constant(b, 1.0));
    EXPECT_NEAR((s.R_grid().array() - 0.5 * n * (n + 1)).abs().maxCoeff(), 0.0, 1e-12);
    EXPECT_NEAR(s.vol() / round_volume(n), 1.0, 1e-12);
    EXPECT_NEAR(energy(s) / (round_curvature(n) * round_volume(n)), 1.0, 1e-12);
  }
  EXPECT_DOUBLE_EQ(round_curvature(1), 1.0);
}

TEST(WebsterCurvature, MatchesFiniteDifferenceOracle) {
  std::mt19937_64 rng(11);
  for (int n : {1, 2}) {
    auto b = basis(n, n == 1 ? 5 : 3);
    SpectralField u = random_positive(b, rng);
    ConformalState s(u);
    FieldEvaluator ue(u);
    oracle::SphereFn f = [&](const CVec& x) { return ue(x); };
    const double c = 2.0 + 2.0 / n;
    for (int k = 0; k < 8; ++k) {
      const std::size_t m = (k * 7919) % b->node_count();
      const CVec x = b->nodes().col(m);
      const double ux = f(x);
      const double R = std::pow(ux, -(n + 2.0) / n) *
                       (-c * oracle::sublaplacian(f, x) + round_curvature(n) * ux);
      EXPECT_NEAR(s.R_grid()[m], R, 1e-5 * std::max(1.0, std::abs(R))) << "n=" << n;
    }
  }
}

TEST(WebsterCurvature, FirstOrderExpansion) {
  auto b = basis(1, 6);
  const int n = 1;
  const double eps = 0.01;
  // Degree-one coordinates lie in the kernel of the linearization; use degree two.
  Vec e = Vec::Zero(b->size());
  e[b->count_upto(1)] = 1.0;
  SpectralField phi(b, e);
  phi = phi * (1.0 / phi.values().cwiseAbs().maxCoeff());
  ConformalState s(SpectralField::constant(b, 1.0) + phi * eps);
  const Vec lap = apply_sublaplacian(phi).values();
  const double R0 = round_curvature(n), c = 2.0 + 2.0 / n;
  const Vec lin = eps * (-c * lap + R0 * phi.values() - (1.0 + 2.0 / n) * R0 * phi.values());
  const Vec dev = s.R_grid() - Vec::Constant(b->node_count(), R0);
  EXPECT_GT(dev.cwiseAbs().maxCoeff(), 1e-3);
  EXPECT_LT((dev - lin).cwiseAbs().maxCoeff(), 1e-3);
  // Halving eps should quarter the remainder.
  ConformalState s2(SpectralField::constant(b, 1.0) + phi * (eps / 2));
  const Vec rem2 = s2.R_grid() - Vec::Constant(b->node_count(), R0) - lin / 2;
  const double ratio = (dev - lin).cwiseAbs().maxCoeff() / rem2.cwiseAbs().maxCoeff();
  EXPECT_NEAR(ratio, 4.0, 0.2);
}

TEST(WebsterCurvature, BubbleHasRoundCurvature) {
  auto b = basis(1, 16);
  MoebiusParams p = MoebiusParams::identity(1);
  p.r = 1.25;
  p.p.z[0] = cplx(0.1, -0.2);
  ConformalState s(bubble(b, p));
  EXPECT_LT((s.R_grid().array() - 1.0).abs().maxCoeff(), 1e-6);
  EXPECT_NEAR(s.vol() / round_volume(1), 1.0, 1e-8);
  EXPECT_NEAR(energy(s) / (round_curvature(1) * round_volume(1)), 1.0, 1e-6);
  EXPECT_NEAR(yamabe_quotient(s.u()) / yamabe_invariant(1), 1.0, 1e-6);
}

TEST(WebsterCurvature, PositivityViolationNamesNode) {
  auto b = basis(1, 4);
  SpectralField u = SpectralField::constant(b, 0.2) + SpectralField::coordinate(b, 0, false);
  try {
    ConformalState s(u);
    FAIL() << "expected PositivityError";
  } catch (const PositivityError& e) {
    EXPECT_LE(u.values()[e.node()], kPositivityFloor);
    EXPECT_NE(std::string(e.what()).find("node"), std::string::npos);
  }
}

TEST(ConformalSublaplacian, ReducesAndAnnihilatesConstants) {
  std::mt19937_64 rng(3);
  auto b = basis(1, 6);
  SpectralField phi = random_positive(b, rng);
  ConformalState one(SpectralField::constant(b, 1.0));
  EXPECT_LT((conformal_sublaplacian(one, phi) - apply_sublaplacian(phi).values()).cwiseAbs().maxCoeff(),
            1e-12);
  ConformalState s(random_positive(b, rng));
  EXPECT_LT(conformal_sublaplacian(s, SpectralField::constant(b, 3.0)).cwiseAbs().maxCoeff(), 1e-11);
}

TEST(ConformalSublaplacian, SelfAdjointInEvolvedVolume) {
  std::mt19937_64 rng(5);
  for (int n : {1, 2}) {
    auto b = basis(n, n == 1 ? 6 : 3);
    ConformalState s(random_positive(b, rng));
    for (int trial = 0; trial < 3; ++trial) {
      SpectralField a = random_positive(b, rng) - SpectralField::constant(b, 1.0);
      SpectralField c = random_positive(b, rng) - SpectralField::constant(b, 1.0);
      const Vec& d = s.density();
      const double ab = integrate(*b, conformal_sublaplacian(s, a).cwiseProduct(c.values()).cwiseProduct(d));
      const double ba = integrate(*b, conformal_sublaplacian(s, c).cwiseProduct(a.values()).cwiseProduct(d));
      EXPECT_NEAR(ab, ba, 1e-8 * std::max(1.0, std::abs(ab)));
      // and nonpositive
      const double aa = integrate(*b, conformal_sublaplacian(s, a).cwiseProduct(a.values()).cwiseProduct(d));
      EXPECT_LT(aa, 0.0);
    }
  }
}

TEST(Energy, DualFormsAgreeOnRandomStates) {
  std::mt19937_64 rng(17);
  for (int n : {1, 2}) {
    auto b = basis(n, n == 1 ? 8 : 4);
    for (int k = 0; k < 10; ++k) {
      ConformalState s(random_positive(b, rng, 0.6, 0.2));
      const double curv = integrate(*b, s.R_grid().cwiseProduct(s.density()));
      EXPECT_NEAR(curv / s.E(), 1.0, 1e-10);
      EXPECT_NO_THROW(energy(s));
    }
  }
}

TEST(Energy, Homogeneity) {
  std::mt19937_64 rng(19);
  for (int n : {1, 2}) {
    auto b = basis(n, n == 1 ? 6 : 3);
    SpectralField u = random_positive(b, rng);
    SpectralField f = random_positive(b, rng, 0.2, 0.5);
    ConformalState s(u), s2(u * 2.0), s3(u * 0.7);
    EXPECT_NEAR(s2.vol() / s.vol(), std::pow(2.0, 2.0 + 2.0 / n), 1e-12);
    EXPECT_NEAR(energy(s3) / energy(s), 0.49, 1e-12);
    // (c^2 E) / (c^{(2n+2)/n} D)^{n/(n+1)} = E / D^{n/(n+1)}
    EXPECT_NEAR(normalized_energy(s3, f) / normalized_energy(s, f), 1.0, 1e-12);
    ConformalState one(SpectralField::constant(b, 2.0));
    EXPECT_NEAR(one.vol() / round_volume(n), std::pow(2.0, 2.0 + 2.0 / n), 1e-12);
  }
}

TEST(NormalizedEnergy, RoundValueIsYamabeInvariant) {
  for (int n : {1, 2}) {
    auto b = basis(n, 3);
    ConformalState s(SpectralField::constant(b, 1.0));
    const double Y = round_curvature(n) * std::pow(round_volume(n), 1.0 / (n + 1));
    EXPECT_NEAR(normalized_energy(s, SpectralField::constant(b, 1.0)) / Y, 1.0, 1e-12);
    EXPECT_NEAR(yamabe_invariant(n) / Y, 1.0, 1e-14);
  }
}

TEST(NormalizedEnergy, RejectsNonpositiveDenominator) {
  auto b = basis(1, 4);
  ConformalState s(SpectralField::constant(b, 1.0));
  EXPECT_THROW(normalized_energy(s, SpectralField::constant(b, -1.0)), ArgumentError);
  EXPECT_THROW(alpha(s, SpectralField::zero(b)), ArgumentError);
}

TEST(Alpha, ClosedFormsAndBalance) {
  std::mt19937_64 rng(23);
  auto b = basis(1, 6);
  ConformalState one(SpectralField::constant(b, 1.0));
  EXPECT_NEAR(alpha(one, SpectralField::constant(b, 2.5)), round_curvature(1) / 2.5, 1e-12);
  ConformalState s(random_positive(b, rng));
  const Vec& d = s.density();
  const double meanR = integrate(*b, s.R_grid().cwiseProduct(d)) / s.vol();
  EXPECT_NEAR(alpha(s, SpectralField::constant(b, 1.0)), meanR, 1e-10);
  SpectralField f = random_positive(b, rng, 0.4, 0.4);
  const double a = alpha(s, f);
  EXPECT_NEAR(a * integrate(*b, f.values().cwiseProduct(d)), integrate(*b, s.R_grid().cwiseProduct(d)),
              1e-8 * s.E());
}

TEST(Renormalize, FixesVolume) {
  std::mt19937_64 rng(29);
  for (int n : {1, 2}) {
    auto b = basis(n, n == 1 ? 6 : 3);
    SpectralField two = renormalize_volume(SpectralField::constant(b, 2.0));
    EXPECT_LT((two.values().array() - 1.0).abs().maxCoeff(), 1e-12);
    SpectralField one = SpectralField::constant(b, 1.0);
    EXPECT_LT((renormalize_volume(one).coeffs() - one.coeffs()).cwiseAbs().maxCoeff(), 1e-14);
    for (int k = 0; k < 5; ++k) {
      SpectralField u = renormalize_volume(random_positive(b, rng) * 1.7);
      const double direct = integrate(*b, rational_power(u.values(), 2 * n + 2, n));
      EXPECT_NEAR(direct / round_volume(n), 1.0, 1e-10);
    }
  }
}

TEST(YamabeQuotient, SharpFloorOnRandomFields) {
  std::mt19937_64 rng(31);
  auto b = basis(1, 6);
  const double Y = yamabe_invariant(1);
  EXPECT_NEAR(yamabe_quotient(SpectralField::constant(b, 0.3)) / Y, 1.0, 1e-12);
  double worst = 1e300;
  for (int k = 0; k < 100; ++k) {
    const double amp = 0.05 + 0.9 * (k / 99.0);
    SpectralField u = random_positive(b, rng, amp, 0.05);
    const double q = yamabe_quotient(u);
    EXPECT_GE(q, Y - 1e-8) << "sample " << k;
    worst = std::min(worst, q - Y);
  }
  EXPECT_GE(worst, -1e-8);
  EXPECT_THROW(yamabe_quotient(SpectralField::zero(b)), ArgumentError);
  EXPECT_THROW(yamabe_quotient(SpectralField::constant(b, -1.0)), ArgumentError);
}

TEST(YamabeQuotient, AcceptsNonnegativeFields) {
  // Nonnegative but degenerate fields are accepted.
  auto b = basis(1, 6);
  SpectralField u = SpectralField::constant(b, 1.0) + SpectralField::coordinate(b, 1, false);
  Vec g = u.values();
  ASSERT_GE(g.minCoeff(), -1e-12);
  EXPECT_GT(yamabe_quotient(u), yamabe_invariant(1));
}
