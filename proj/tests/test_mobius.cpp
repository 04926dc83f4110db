#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "crflow/mobius.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace crflow;
using fixture::basis;
using fixture::random_positive;

namespace {

HeisenbergPoint random_h(int n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  HeisenbergPoint h{CVec(n), g(rng)};
  for (int j = 0; j < n; ++j) h.z[j] = cplx(g(rng), g(rng));
  return h;
}

double dist(const HeisenbergPoint& a, const HeisenbergPoint& b) {
  return std::max((a.z - b.z).cwiseAbs().maxCoeff(), std::abs(a.tau - b.tau));
}

MoebiusParams params(int n, double r, cplx z0, double tau) {
  MoebiusParams p = MoebiusParams::identity(n);
  p.r = r;
  p.p.z[0] = z0;
  p.p.tau = tau;
  return p;
}

CVec north(int n) {
  CVec q = CVec::Zero(n + 1);
  q[n] = 1.0;
  return q;
}

}  // namespace

TEST(Cayley, Examples) {
  HeisenbergPoint h = cayley(north(2));
  EXPECT_EQ(h.z.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(h.tau, 0.0);
  h = cayley(CVec{{1.0, 0.0}});
  EXPECT_NEAR(std::abs(h.z[0] - 1.0), 0.0, 1e-15);
  EXPECT_NEAR(h.tau, 0.0, 1e-15);
  h = cayley(CVec{{0.0, cplx(0.0, 1.0)}});
  EXPECT_NEAR(std::abs(h.z[0]), 0.0, 1e-15);
  EXPECT_NEAR(h.tau, 1.0, 1e-15);
  EXPECT_NEAR((inverse_cayley(HeisenbergPoint::origin(3)) - north(3)).norm(), 0.0, 1e-15);
}

TEST(Cayley, PoleIsSingular) {
  CVec pole = -north(1);
  EXPECT_THROW(cayley(pole), SingularityError);
  CVec near = pole;
  near[0] = 1e-13;
  EXPECT_THROW(cayley(near / near.norm()), SingularityError);
  near[0] = 1e-6;
  EXPECT_NO_THROW(cayley(near / near.norm()));
}

TEST(Cayley, RoundTrip) {
  std::mt19937_64 rng(1);
  for (int n : {1, 2}) {
    double worst = 0.0, sphere = 0.0, back = 0.0;
    for (int k = 0; k < 1000; ++k) {
      HeisenbergPoint h = random_h(n, rng, 2.0);
      CVec x = inverse_cayley(h);
      sphere = std::max(sphere, std::abs(x.norm() - 1.0));
      worst = std::max(worst, dist(cayley(x), h) / (1.0 + h.z.norm() + std::abs(h.tau)));
      CVec y = oracle::random_sphere_point(n, rng);
      back = std::max(back, (inverse_cayley(cayley(y)) - y).norm());
    }
    EXPECT_LE(worst, 1e-12);
    EXPECT_LE(sphere, 1e-12);
    EXPECT_LE(back, 1e-12);
  }
}

TEST(Heisenberg, DilationAndTranslation) {
  HeisenbergPoint h{CVec{{cplx(0.3, -0.2)}}, 0.7};
  HeisenbergPoint d = dilate(h, 2.0);
  EXPECT_NEAR(dist(d, {2.0 * h.z, 4.0 * h.tau}), 0.0, 1e-15);
  EXPECT_THROW(dilate(h, 0.0), ArgumentError);
  EXPECT_THROW(dilate(h, -1.0), ArgumentError);
  EXPECT_NEAR(dist(translate(HeisenbergPoint::origin(1), h), h), 0.0, 0.0);
  // T_{(z',t')}(z,t) = (z+z', t+t'+2 Im(z' conj z))
  HeisenbergPoint p{CVec{{cplx(1.0, 0.0)}}, 0.0};
  HeisenbergPoint q{CVec{{cplx(0.0, 1.0)}}, 0.0};
  EXPECT_NEAR(translate(q, p).tau, 2.0 * (cplx(1.0, 0.0) * std::conj(cplx(0.0, 1.0))).imag(), 1e-15);
}

TEST(Heisenberg, GroupLawAndDilationCovariance) {
  std::mt19937_64 rng(2);
  for (int n : {1, 3}) {
    for (int k = 0; k < 50; ++k) {
      HeisenbergPoint p = random_h(n, rng), q = random_h(n, rng), h = random_h(n, rng);
      HeisenbergPoint lhs = translate(translate(h, q), p);
      HeisenbergPoint rhs = translate(h, heisenberg_product(p, q));
      EXPECT_LT(dist(lhs, rhs), 1e-12);
      const double lam = 0.3 + k * 0.05;
      EXPECT_LT(dist(dilate(translate(h, p), lam), translate(dilate(h, lam), dilate(p, lam))), 1e-12);
    }
  }
}

TEST(Moebius, IdentityAndSemigroup) {
  std::mt19937_64 rng(3);
  for (int n : {1, 2}) {
    for (int k = 0; k < 100; ++k) {
      CVec x = oracle::random_sphere_point(n, rng);
      EXPECT_LT((moebius_apply(MoebiusParams::identity(n), x) - x).norm(), 1e-14);
      const double r1 = 0.5 + 0.01 * k, r2 = 1.7 - 0.01 * k;
      MoebiusParams a = MoebiusParams::identity(n), b = a, c = a;
      a.r = r1;
      b.r = r2;
      c.r = r1 * r2;
      CVec lhs = moebius_apply(a, moebius_apply(b, x));
      EXPECT_LT((lhs - moebius_apply(c, x)).norm(), 1e-10);
    }
  }
}

TEST(Moebius, NodeImagesStayOnSphere) {
  auto b = basis(1, 8);
  MoebiusParams p = params(1, 1.8, cplx(0.4, -0.3), -0.5);
  double worst = 0.0;
  for (std::size_t m = 0; m < b->node_count(); ++m)
    worst = std::max(worst, std::abs(moebius_apply(p, b->nodes().col(m)).norm() - 1.0));
  EXPECT_LE(worst, 1e-12);
}

TEST(Jacobian, IdentityAndAxialSymmetry) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> ang(0.0, 2.0 * std::numbers::pi);
  for (int n : {1, 2}) {
    MoebiusParams id = MoebiusParams::identity(n);
    MoebiusParams d = id;
    d.r = 1.7;
    for (int k = 0; k < 50; ++k) {
      CVec x = oracle::random_sphere_point(n, rng);
      EXPECT_NEAR(jacobian_factor(id, x), 1.0, 1e-14);
      CVec y = x;
      // Any unitary on the first n coordinates fixes x_{n+1}.
      for (int j = 0; j < n; ++j) y[j] = std::polar(1.0, ang(rng)) * x[j];
      if (n == 2) {
        const double c = std::cos(0.7), s = std::sin(0.7);
        const cplx a = y[0], bb = y[1];
        y[0] = c * a - s * bb;
        y[1] = s * a + c * bb;
      }
      EXPECT_NEAR(jacobian_factor(d, x), jacobian_factor(d, y), 1e-12);
    }
  }
}

TEST(Jacobian, MatchesVolumeFormOracle) {
  std::mt19937_64 rng(5);
  for (int n : {1, 2}) {
    MoebiusParams p = params(n, 1.4, cplx(0.3, 0.2), -0.4);
    for (int k = 0; k < 10; ++k) {
      CVec x = oracle::random_sphere_point(n, rng);
      std::vector<CVec> frame = oracle::horizontal_frame(x);
      frame.push_back(cplx(0.0, 1.0) * x);
      const double h = 1e-5;
      std::vector<CVec> pushed;
      for (const CVec& v : frame) {
        CVec xp = x + h * v, xm = x - h * v;
        pushed.push_back((moebius_apply(p, xp / xp.norm()) - moebius_apply(p, xm / xm.norm())) /
                         (2 * h));
      }
      const double ratio = oracle::contact_volume_form(moebius_apply(p, x), pushed) /
                           oracle::contact_volume_form(x, frame);
      EXPECT_NEAR(std::abs(ratio) / volume_distortion(p, x), 1.0, 1e-7) << "n=" << n;
      EXPECT_NEAR(volume_distortion(p, x), std::pow(jacobian_factor(p, x), (2.0 * n + 2) / n), 1e-10);
    }
  }
}

TEST(Jacobian, IntegratesToVolume) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (int n : {1, 2}) {
    auto b = basis(n, n == 1 ? 12 : 6);
    for (int k = 0; k < 4; ++k) {
      MoebiusParams p = params(n, std::exp(u(rng)), cplx(u(rng), u(rng)), u(rng));
      Vec g(b->node_count());
      for (std::size_t m = 0; m < b->node_count(); ++m) g[m] = volume_distortion(p, b->nodes().col(m));
      EXPECT_NEAR(integrate(*b, g) / round_volume(n), 1.0, 1e-6);
    }
  }
}

TEST(JerisonLee, OmegaMatchesSphereSide) {
  EXPECT_DOUBLE_EQ(jerison_lee_omega(1, HeisenbergPoint::origin(1)), 2.0);
  EXPECT_DOUBLE_EQ(jerison_lee_omega(3, HeisenbergPoint::origin(3)), 8.0);
  std::mt19937_64 rng(7);
  for (int n : {1, 2}) {
    for (int k = 0; k < 50; ++k) {
      HeisenbergPoint h = random_h(n, rng);
      const CVec x = inverse_cayley(h);
      EXPECT_NEAR(std::pow(jerison_lee_omega(n, h), 2.0 / n), std::norm(1.0 + x[n]), 1e-12);
    }
  }
}

TEST(Pullback, IdentityIsExact) {
  std::mt19937_64 rng(8);
  auto b = basis(1, 6);
  SpectralField u = random_positive(b, rng);
  SpectralField v = pullback(u, MoebiusParams::identity(1));
  EXPECT_LT((v.coeffs() - u.coeffs()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Pullback, ConstantGivesJacobianFactorAndSharpQuotient) {
  auto b = basis(1, 16);
  for (double r : {0.5, 2.0}) {
    MoebiusParams p = params(1, r, cplx(0.2, 0.1), 0.1);
    PullbackOptions opts;
    opts.band_loss_tol = 1e-6;
    SpectralField v = pullback(SpectralField::constant(b, 1.0), p, opts);
    const Vec vg = v.values();
    double worst = 0.0;
    for (std::size_t m = 0; m < b->node_count(); m += 37)
      worst = std::max(worst, std::abs(vg[m] - jacobian_factor(p, b->nodes().col(m))));
    EXPECT_LT(worst, 1e-3);
    EXPECT_NEAR(yamabe_quotient(v) / yamabe_invariant(1), 1.0, 1e-5);
  }
}

TEST(Pullback, PreservesEnergyAndVolume) {
  std::mt19937_64 rng(9);
  auto b = basis(1, 14);
  auto b_low = basis(1, 4);
  for (double r : {0.8, 1.25}) {
    // band-limited u at low degree keeps the pulled-back tail small
    SpectralField low = random_positive(b_low, rng, 0.3, 0.5);
    Vec c = Vec::Zero(b->size());
    c.head(b_low->size()) = low.coeffs();
    SpectralField u(b, c);
    MoebiusParams p = params(1, r, cplx(0.1, -0.15), 0.2);
    PullbackOptions opts;
    opts.band_loss_tol = 1e-6;
    SpectralField v = pullback(u, p, opts);
    ConformalState su(u), sv(v);
    EXPECT_NEAR(sv.vol() / su.vol(), 1.0, 1e-6);
    EXPECT_NEAR(sv.E() / su.E(), 1.0, 1e-5);
    EXPECT_GT(sv.u_grid().minCoeff(), 0.0);
  }
}

TEST(Pullback, ReportsResolutionLoss) {
  auto b = basis(1, 6);
  MoebiusParams p = params(1, 8.0, cplx(0.0, 0.0), 0.0);
  EXPECT_THROW(pullback(SpectralField::constant(b, 1.0), p), ResolutionError);
  EXPECT_THROW(bubble(b, p), ResolutionError);
  EXPECT_TRUE(bubble_beyond_capacity(p, 6));
  EXPECT_FALSE(bubble_beyond_capacity(params(1, 1.5, 0.0, 0.0), 6));
}

TEST(CenterOfMass, RoundAndConcentrated) {
  auto b = basis(1, 16);
  ConformalState one(SpectralField::constant(b, 1.0));
  CenterOfMass c = center_of_mass(one);
  EXPECT_LT(c.P.norm(), 1e-12);
  EXPECT_LT(c.P_hat.norm(), 1e-12);
  ConformalState s(bubble(b, params(1, 3.0, 0.0, 0.0)));
  c = center_of_mass(s);
  EXPECT_GE((c.P_hat.dot(north(1))).real(), 0.99);
  EXPECT_NEAR(c.P_hat.norm(), 1.0, 1e-14);
  EXPECT_LE(c.P.norm(), s.vol());
}

TEST(Balance, RoundIsAlreadyBalanced) {
  auto b = basis(1, 8);
  BalanceResult res = balance(SpectralField::constant(b, 1.0));
  EXPECT_EQ(res.iterations, 0);
  EXPECT_EQ(res.map.params.r, 1.0);
  EXPECT_LT(res.residual, 1e-12);
}

TEST(Balance, RecoversConstructedBubble) {
  auto b = basis(1, 16);
  for (double r : {1.4, 0.7}) {
    MoebiusParams p = params(1, r, cplx(0.2, 0.1), 0.1);
    SpectralField u = bubble(b, p);
    BalanceResult res = balance(u);
    EXPECT_LE(res.residual, 1e-8);
    EXPECT_LT((res.v.values().array() - 1.0).abs().maxCoeff(), 1e-6) << "r=" << r;
    // idempotent
    BalanceResult again = balance(res.v);
    EXPECT_EQ(again.iterations, 0);
    EXPECT_EQ(again.map.params.r, 1.0);
  }
}

TEST(Balance, ConvergesOnRandomPerturbations) {
  std::mt19937_64 rng(10);
  auto b = basis(1, 8);
  auto b_low = basis(1, 3);
  for (int k = 0; k < 3; ++k) {
    SpectralField low = random_positive(b_low, rng, 0.3, 0.5);
    Vec c = Vec::Zero(b->size());
    c.head(b_low->size()) = low.coeffs();
    SpectralField u = renormalize_volume(SpectralField(b, c));
    BalanceResult res = balance(u);
    EXPECT_LE(res.residual, 1e-8);
    EXPECT_LE(res.iterations, 30);
    EXPECT_NEAR(balance_residual(res.v), res.residual, 1e-14);
  }
}

TEST(Balance, ReportsFailures) {
  auto b = basis(1, 12);
  SpectralField u = bubble(b, params(1, 2.0, cplx(0.1, 0.0), 0.0));
  BalanceOptions opts;
  opts.max_dilation = 1.2;
  EXPECT_THROW(balance(u, opts), DegenerateBalancingError);
  std::mt19937_64 rng(12);
  auto b_low = basis(1, 3);
  SpectralField low = random_positive(b_low, rng, 0.3, 0.5);
  Vec c = Vec::Zero(b->size());
  c.head(b_low->size()) = low.coeffs();
  BalanceOptions none;
  none.max_iterations = 0;
  try {
    balance(SpectralField(b, c), none);
    FAIL() << "expected NonConvergenceError";
  } catch (const NonConvergenceError& e) {
    EXPECT_GT(e.residual(), 1e-8);
  }
}

TEST(Concentration, RoundProfileMatchesCaps) {
  auto b = basis(1, 16);
  ConformalState one(SpectralField::constant(b, 1.0));
  const CVec q = north(1);
  std::vector<double> radii{0.3, 0.6, 1.0, 1.4, 2.5};
  auto prof = concentration_profile(one, q, radii);
  for (const auto& s : prof) {
    if (s.radius >= 2.0) continue;
    const double phi = 2.0 * std::asin(s.radius / 2.0);
    const double cap = (phi - std::sin(phi) * std::cos(phi)) / std::numbers::pi;
    EXPECT_NEAR(s.mass_fraction, cap, 0.02) << "radius " << s.radius;
  }
  EXPECT_NEAR(prof.back().mass_fraction, 1.0, 1e-12);
  EXPECT_NEAR(prof.back().curvature_functional / yamabe_invariant(1), 1.0, 1e-10);
  EXPECT_THROW(concentration_profile(one, q, {0.0}), ArgumentError);
}

TEST(Concentration, CapRadiusInvertsClosedForm) {
  for (double frac : {0.01, 0.05, 0.3, 0.5, 0.9}) {
    const double rho = round_cap_radius(1, frac);
    const double phi = 2.0 * std::asin(rho / 2.0);
    EXPECT_NEAR((phi - std::sin(phi) * std::cos(phi)) / std::numbers::pi, frac, 1e-10);
  }
  // n=2: polar density sin^4
  const double rho = round_cap_radius(2, 0.5);
  EXPECT_NEAR(rho, std::sqrt(2.0), 1e-10);
}

TEST(Concentration, StrongBubbleCarriesHalfTheMass) {
  auto b = basis(1, 16);
  ConformalState s(bubble(b, params(1, 3.5, 0.0, 0.0)));
  const double rho = round_cap_radius(1, 0.05);
  auto prof = concentration_profile(s, north(1), {rho});
  EXPECT_GE(prof[0].mass_fraction, 0.5);
  EXPECT_LE(mass_radius(s, north(1), 0.5), rho);
  ConformalState one(SpectralField::constant(b, 1.0));
  EXPECT_LT(concentration_profile(one, north(1), {rho})[0].mass_fraction, 0.05 + 0.01);
}

TEST(Concentration, SiteCount) {
  auto b = basis(1, 16);
  std::vector<ConformalState> flat(4, ConformalState(SpectralField::constant(b, 1.0)));
  EXPECT_EQ(site_count(flat, {}), 0);
  std::vector<ConformalState> bubbles;
  for (double r : {2.5, 3.0, 3.5, 4.0}) bubbles.emplace_back(bubble(b, params(1, r, 0.0, 0.0)));
  EXPECT_EQ(site_count(bubbles, {}), 1);
  EXPECT_EQ(site_count({}, {}), 0);
}
