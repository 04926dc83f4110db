#pragma once

#include "crflow/sphere.hpp"

namespace crflow {

// u^(num/den) pointwise; integer exponents avoid exp/log.
Vec rational_power(const Vec& u, int num, int den);

inline constexpr double kPositivityFloor = 1e-8;

// Index of the first node where u <= floor, or -1.
long first_nonpositive(const Vec& u, double floor = kPositivityFloor);
[[noreturn]] void throw_positivity(const BasisTable& b, const Vec& u, long node,
                                   const char* where);

// Conformal factor of theta = u^{2/n} theta0 with derived node values.
class ConformalState {
 public:
  explicit ConformalState(SpectralField u, double t = 0.0);

  const SpectralField& u() const { return u_; }
  const BasisTable& basis() const { return u_.basis(); }
  int n() const { return u_.basis().n(); }
  double t() const { return t_; }

  const Vec& u_grid() const { return u_grid_; }
  const Vec& lap_grid() const { return lap_grid_; }
  const Vec& R_grid() const { return R_grid_; }
  // u^{2+2/n}, the density of dV_theta against dV_theta0.
  const Vec& density() const { return density_; }
  double vol() const { return vol_; }
  double E() const { return E_; }

 private:
  SpectralField u_;
  double t_;
  Vec u_grid_, lap_grid_, R_grid_, density_;
  double vol_ = 0.0;
  double E_ = 0.0;
};

Vec webster_curvature(const ConformalState& s);
Vec conformal_sublaplacian(const ConformalState& s, const SpectralField& phi);
double volume_theta(const ConformalState& s);
// Gradient form; cross-checked against the curvature integral.
double energy(const ConformalState& s);
double energy_gradient_form(const SpectralField& u);
double normalized_energy(const ConformalState& s, const SpectralField& f);
double alpha(const ConformalState& s, const SpectralField& f);
SpectralField renormalize_volume(const SpectralField& u);
double yamabe_quotient(const SpectralField& u);

// int f u^{2+2/n} dV_theta0
double weighted_volume(const ConformalState& s, const Vec& f_grid);

}  // namespace crflow
