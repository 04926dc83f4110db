#include "crflow/conformal.hpp"

#include <cmath>
#include <sstream>

namespace crflow {

Vec rational_power(const Vec& u, int num, int den) {
  Vec out(u.size());
  if (num % den == 0) {
    const int k = num / den;
    const int a = std::abs(k);
    for (Eigen::Index i = 0; i < u.size(); ++i) {
      double base = u[i], acc = 1.0;
      for (int e = a; e > 0; e >>= 1) {
        if (e & 1) acc *= base;
        base *= base;
      }
      out[i] = k < 0 ? 1.0 / acc : acc;
    }
    return out;
  }
  const double p = static_cast<double>(num) / den;
  for (Eigen::Index i = 0; i < u.size(); ++i) out[i] = std::exp(p * std::log(u[i]));
  return out;
}

long first_nonpositive(const Vec& u, double floor) {
  for (Eigen::Index i = 0; i < u.size(); ++i)
    if (!(u[i] > floor)) return static_cast<long>(i);
  return -1;
}

void throw_positivity(const BasisTable& b, const Vec& u, long node, const char* where) {
  std::ostringstream os;
  os << where << ": conformal factor " << u[node] << " at node " << node << " (";
  for (int d = 0; d <= b.n(); ++d)
    os << (d ? ", " : "") << b.nodes()(d, node).real() << (b.nodes()(d, node).imag() < 0 ? "" : "+")
       << b.nodes()(d, node).imag() << "i";
  os << ") is below the positivity floor";
  throw PositivityError(os.str(), static_cast<std::size_t>(node), u[node]);
}

ConformalState::ConformalState(SpectralField u, double t) : u_(std::move(u)), t_(t) {
  const BasisTable& b = u_.basis();
  const int n = b.n();
  u_grid_ = u_.values();
  if (long bad = first_nonpositive(u_grid_); bad >= 0)
    throw_positivity(b, u_grid_, bad, "ConformalState");
  lap_grid_ = apply_sublaplacian(u_).values();
  const double R0 = round_curvature(n);
  const double c = 2.0 + 2.0 / n;
  Vec inv = rational_power(u_grid_, -(n + 2), n);
  R_grid_ = inv.cwiseProduct(-c * lap_grid_ + R0 * u_grid_);
  density_ = rational_power(u_grid_, 2 * n + 2, n);
  vol_ = integrate(b, density_);
  E_ = energy_gradient_form(u_);
}

double energy_gradient_form(const SpectralField& u) {
  const int n = u.basis().n();
  const double c = 2.0 + 2.0 / n;
  const double R0 = round_curvature(n);
  double sum = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i)
    sum += (c * u.basis().eigenvalue(i) + R0) * u.coeffs()[i] * u.coeffs()[i];
  return sum;
}

Vec webster_curvature(const ConformalState& s) { return s.R_grid(); }

Vec conformal_sublaplacian(const ConformalState& s, const SpectralField& phi) {
  const int n = s.n();
  Vec inv = rational_power(s.u_grid(), -(n + 2), n);
  Vec lap = apply_sublaplacian(phi).values();
  Vec lp = levi_product(s.u(), phi);
  return inv.cwiseProduct(s.u_grid().cwiseProduct(lap) + 2.0 * lp);
}

double volume_theta(const ConformalState& s) { return s.vol(); }

double energy(const ConformalState& s) {
  const double curv = integrate(s.basis(), s.R_grid().cwiseProduct(s.density()));
  const double E = s.E();
  if (!(std::abs(curv - E) <= 1e-8 * std::max(std::abs(E), 1e-300))) {
    std::ostringstream os;
    os << "energy: gradient form " << E << " and curvature integral " << curv
       << " disagree";
    throw NumericalHealthError(os.str());
  }
  return E;
}

double weighted_volume(const ConformalState& s, const Vec& f_grid) {
  return integrate(s.basis(), f_grid.cwiseProduct(s.density()));
}

double normalized_energy(const ConformalState& s, const SpectralField& f) {
  const double denom = weighted_volume(s, f.values());
  if (!(denom > 0.0))
    throw ArgumentError("normalized_energy: int f u^{2+2/n} is not positive");
  const int n = s.n();
  return energy(s) / std::pow(denom, static_cast<double>(n) / (n + 1));
}

double alpha(const ConformalState& s, const SpectralField& f) {
  const double denom = weighted_volume(s, f.values());
  if (!(denom > 0.0)) throw ArgumentError("alpha: int f dV_theta is not positive");
  return energy(s) / denom;
}

SpectralField renormalize_volume(const SpectralField& u) {
  ConformalState s(u);
  const int n = u.basis().n();
  const double c = std::pow(round_volume(n) / s.vol(), static_cast<double>(n) / (2 * n + 2));
  return u * c;
}

double yamabe_quotient(const SpectralField& u) {
  const int n = u.basis().n();
  Vec g = u.values();
  if (g.cwiseAbs().maxCoeff() == 0.0) throw ArgumentError("yamabe_quotient: zero field");
  if (g.minCoeff() < -1e-12 * g.cwiseAbs().maxCoeff())
    throw ArgumentError("yamabe_quotient: field takes negative values");
  const double denom = integrate(u.basis(), rational_power(g.cwiseAbs(), 2 * n + 2, n));
  return energy_gradient_form(u) / std::pow(denom, static_cast<double>(n) / (n + 1));
}

}  // namespace crflow
