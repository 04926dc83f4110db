#pragma once

#include <vector>

#include "crflow/conformal.hpp"

namespace crflow {

struct HeisenbergPoint {
  CVec z;  // n complex entries
  double tau = 0.0;
  static HeisenbergPoint origin(int n) { return {CVec::Zero(n), 0.0}; }
};

// phi_{p,r} = Psi o T_p o D_r o pi
struct MoebiusParams {
  HeisenbergPoint p;
  double r = 1.0;
  static MoebiusParams identity(int n) { return {HeisenbergPoint::origin(n), 1.0}; }
};

// x -> rotation * phi_{p,r}(x), with a unitary rotation.
struct NormalizingMap {
  Eigen::MatrixXcd rotation;
  MoebiusParams params;
  static NormalizingMap identity(int n);
  static NormalizingMap from(const MoebiusParams& params);
};

struct CenterOfMass {
  CVec P;
  CVec P_hat;
};

HeisenbergPoint cayley(const CVec& x);
CVec inverse_cayley(const HeisenbergPoint& h);
HeisenbergPoint dilate(const HeisenbergPoint& h, double lambda);
// T_p(h)
HeisenbergPoint translate(const HeisenbergPoint& h, const HeisenbergPoint& p);
// p.q with T_p o T_q = T_{p.q}
HeisenbergPoint heisenberg_product(const HeisenbergPoint& p, const HeisenbergPoint& q);

CVec moebius_apply(const MoebiusParams& params, const CVec& x);
CVec moebius_apply(const NormalizingMap& map, const CVec& x);
// phi^* theta0 = J theta0
double contact_ratio(const MoebiusParams& params, const CVec& x);
// |det d phi|^{n/(2n+2)} = J^{n/2}
double jacobian_factor(const MoebiusParams& params, const CVec& x);
// |det d phi| = J^{n+1}
double volume_distortion(const MoebiusParams& params, const CVec& x);

struct PullbackOptions {
  double band_loss_tol = 1e-9;
  bool check_invariants = true;
  double volume_tol = 1e-6;
  double energy_tol = 1e-5;
};

// Node values of (u o map) * J^{n/2}, before projection.
Vec pullback_values(const SpectralField& u, const NormalizingMap& map);
SpectralField pullback(const SpectralField& u, const MoebiusParams& params,
                       const PullbackOptions& opts = {});
SpectralField pullback(const SpectralField& u, const NormalizingMap& map,
                       const PullbackOptions& opts = {});

CenterOfMass center_of_mass(const ConformalState& s);

struct BalanceOptions {
  double tolerance = 1e-8;  // on |int x dV_h| / Vol
  int max_iterations = 30;
  double fd_step = 1e-6;
  double max_dilation = 1e6;
};

struct BalanceResult {
  NormalizingMap map;
  SpectralField v;
  double residual;  // |int x v^{2+2/n} dV| / Vol
  int iterations;
};

BalanceResult balance(const SpectralField& u, const BalanceOptions& opts = {});
// |int x u^{2+2/n} dV| / Vol
double balance_residual(const SpectralField& u);

double jerison_lee_omega(int n, const HeisenbergPoint& h);
// Pullback of the constant 1, volume-normalized.  Throws ResolutionError when
// the band-limited tail carries more than tail_tol of the energy.
SpectralField bubble(const BasisPtr& basis, const MoebiusParams& params,
                     double tail_tol = 0.01);
// True when r exceeds the N/4 capacity heuristic.
bool bubble_beyond_capacity(const MoebiusParams& params, int N);

struct ConcentrationSample {
  double radius;
  double mass_fraction;
  double curvature_functional;  // (int_ball |R|^{n+1} dV_theta)^{1/(n+1)}
};

// Balls are chordal: |x - center| < radius in C^{n+1}.
std::vector<ConcentrationSample> concentration_profile(const ConformalState& s,
                                                       const CVec& center,
                                                       const std::vector<double>& radii);
// Smallest chordal radius around center holding the given mass fraction.
double mass_radius(const ConformalState& s, const CVec& center, double fraction);
// Chordal radius whose ball carries the given fraction of round volume.
double round_cap_radius(int n, double fraction);

struct SiteThreshold {
  double radius = 0.0;  // 0: the radius of a round cap holding 5% of the volume
  double epsilon = 0.5;
  double tail_fraction = 0.25;
  int max_candidates = 8;
};

int site_count(const std::vector<ConformalState>& trajectory, const SiteThreshold& th);

}  // namespace crflow
