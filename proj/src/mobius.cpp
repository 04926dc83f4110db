#include "crflow/mobius.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

namespace crflow {

NormalizingMap NormalizingMap::identity(int n) {
  return {Eigen::MatrixXcd::Identity(n + 1, n + 1), MoebiusParams::identity(n)};
}

NormalizingMap NormalizingMap::from(const MoebiusParams& params) {
  const auto n = params.p.z.size();
  return {Eigen::MatrixXcd::Identity(n + 1, n + 1), params};
}

HeisenbergPoint cayley(const CVec& x) {
  const auto n = x.size() - 1;
  const cplx w = x[n];
  const double dist = std::sqrt(x.head(n).squaredNorm() + std::norm(w + 1.0));
  if (!(dist > 1e-12)) {
    std::ostringstream os;
    os << "cayley: point lies within " << dist << " of the pole";
    throw SingularityError(os.str());
  }
  HeisenbergPoint h;
  h.z = x.head(n) / (1.0 + w);
  h.tau = (cplx(0.0, 1.0) * (1.0 - w) / (1.0 + w)).real();
  return h;
}

CVec inverse_cayley(const HeisenbergPoint& h) {
  const auto n = h.z.size();
  const cplx zeta(h.z.squaredNorm(), -h.tau);
  CVec x(n + 1);
  x.head(n) = 2.0 * h.z / (1.0 + zeta);
  x[n] = (1.0 - zeta) / (1.0 + zeta);
  return x;
}

HeisenbergPoint dilate(const HeisenbergPoint& h, double lambda) {
  if (!(lambda > 0.0)) throw ArgumentError("dilate: lambda must be positive");
  return {lambda * h.z, lambda * lambda * h.tau};
}

HeisenbergPoint translate(const HeisenbergPoint& h, const HeisenbergPoint& p) {
  // z'.conj(z) = sum z'_j conj(z_j)
  const cplx cross = h.z.dot(p.z);
  return {h.z + p.z, h.tau + p.tau + 2.0 * cross.imag()};
}

HeisenbergPoint heisenberg_product(const HeisenbergPoint& p, const HeisenbergPoint& q) {
  return translate(q, p);
}

CVec moebius_apply(const MoebiusParams& params, const CVec& x) {
  if (!(params.r > 0.0)) throw ArgumentError("moebius_apply: r must be positive");
  return inverse_cayley(translate(dilate(cayley(x), params.r), params.p));
}

CVec moebius_apply(const NormalizingMap& map, const CVec& x) {
  return map.rotation * moebius_apply(map.params, x);
}

double contact_ratio(const MoebiusParams& params, const CVec& x) {
  const auto n = x.size() - 1;
  const CVec y = moebius_apply(params, x);
  return params.r * params.r * std::norm(1.0 + y[n]) / std::norm(1.0 + x[n]);
}

double jacobian_factor(const MoebiusParams& params, const CVec& x) {
  const auto n = static_cast<double>(x.size() - 1);
  return std::pow(contact_ratio(params, x), 0.5 * n);
}

double volume_distortion(const MoebiusParams& params, const CVec& x) {
  const auto n = static_cast<double>(x.size() - 1);
  return std::pow(contact_ratio(params, x), n + 1.0);
}

Vec pullback_values(const SpectralField& u, const NormalizingMap& map) {
  const BasisTable& b = u.basis();
  FieldEvaluator eval(u);
  Vec out(b.node_count());
  for (std::size_t m = 0; m < b.node_count(); ++m) {
    const CVec x = b.nodes().col(m);
    const CVec y = moebius_apply(map, x);
    out[m] = eval(y) * jacobian_factor(map.params, x);
  }
  return out;
}

namespace {

bool is_identity(const NormalizingMap& map) {
  const auto n = map.params.p.z.size();
  return map.params.r == 1.0 && map.params.p.tau == 0.0 &&
         map.params.p.z.cwiseAbs().maxCoeff() == 0.0 &&
         (map.rotation - Eigen::MatrixXcd::Identity(n + 1, n + 1)).cwiseAbs().maxCoeff() == 0.0;
}

}  // namespace

SpectralField pullback(const SpectralField& u, const MoebiusParams& params,
                       const PullbackOptions& opts) {
  return pullback(u, NormalizingMap::from(params), opts);
}

SpectralField pullback(const SpectralField& u, const NormalizingMap& map,
                       const PullbackOptions& opts) {
  if (map.params.p.z.size() != u.basis().n())
    throw ArgumentError("pullback: parameter dimension does not match the sphere");
  if (is_identity(map)) return u;
  ConformalState su(u);
  const Vec grid = pullback_values(u, map);
  const double loss = band_loss(grid, u.basis());
  if (!(loss <= opts.band_loss_tol)) {
    std::ostringstream os;
    os << "pullback: band-limit loss " << loss << " exceeds " << opts.band_loss_tol
       << "; increase the basis degree (N=" << u.basis().degree() << ")";
    throw ResolutionError(os.str());
  }
  SpectralField v = analyze(grid, u.basis_ptr());
  if (opts.check_invariants) {
    ConformalState sv(v);
    const double dv = std::abs(sv.vol() - su.vol()) / su.vol();
    const double de = std::abs(sv.E() - su.E()) / su.E();
    if (!(dv <= opts.volume_tol) || !(de <= opts.energy_tol)) {
      std::ostringstream os;
      os << "pullback: invariance lost at N=" << u.basis().degree() << " (volume "
         << dv << ", energy " << de << "); increase the basis degree";
      throw ResolutionError(os.str());
    }
  }
  return v;
}

CenterOfMass center_of_mass(const ConformalState& s) {
  const BasisTable& b = s.basis();
  const int n = s.n();
  CenterOfMass c;
  c.P = CVec::Zero(n + 1);
  for (int d = 0; d <= n; ++d) {
    Vec re = b.nodes().row(d).real().transpose().cwiseProduct(s.density());
    Vec im = b.nodes().row(d).imag().transpose().cwiseProduct(s.density());
    c.P[d] = cplx(integrate(b, re), integrate(b, im));
  }
  const double norm = c.P.norm();
  c.P_hat = norm > 1e-12 * s.vol() ? CVec(c.P / norm) : CVec(c.P);
  return c;
}

double balance_residual(const SpectralField& u) {
  ConformalState s(u);
  return center_of_mass(s).P.norm() / s.vol();
}

namespace {

MoebiusParams params_from(const Vec& y, int n) {
  MoebiusParams p;
  p.p.z.resize(n);
  for (int j = 0; j < n; ++j) p.p.z[j] = cplx(y[j], y[n + j]);
  p.p.tau = y[2 * n];
  p.r = std::exp(y[2 * n + 1]);
  return p;
}

Eigen::MatrixXcd rotation_to(const CVec& target) {
  const auto m = target.size();
  Eigen::MatrixXcd A = Eigen::MatrixXcd::Identity(m, m);
  A.col(0) = target;
  Eigen::HouseholderQR<Eigen::MatrixXcd> qr(A);
  Eigen::MatrixXcd Q = qr.householderQ();
  Eigen::MatrixXcd U(m, m);
  for (Eigen::Index j = 1; j < m; ++j) U.col(j - 1) = Q.col(j);
  U.col(m - 1) = target;
  return U;
}

}  // namespace

BalanceResult balance(const SpectralField& u, const BalanceOptions& opts) {
  const BasisTable& b = u.basis();
  const int n = b.n();
  ConformalState s(u);
  const double vol = s.vol();
  CenterOfMass com = center_of_mass(s);
  const double rho = com.P.norm() / vol;
  if (rho <= opts.tolerance)
    return {NormalizingMap::identity(n), u, rho, 0};

  NormalizingMap map = NormalizingMap::identity(n);
  map.rotation = rotation_to(com.P_hat);

  const int dim = 2 * n + 2;
  auto residual = [&](const Vec& y, SpectralField* keep) {
    NormalizingMap trial = map;
    trial.params = params_from(y, n);
    SpectralField v = analyze(pullback_values(u, trial), u.basis_ptr());
    Vec dens = rational_power(v.values(), 2 * n + 2, n);
    Vec F(dim);
    for (int d = 0; d <= n; ++d) {
      Vec re = b.nodes().row(d).real().transpose().cwiseProduct(dens);
      Vec im = b.nodes().row(d).imag().transpose().cwiseProduct(dens);
      F[2 * d] = integrate(b, re) / vol;
      F[2 * d + 1] = integrate(b, im) / vol;
    }
    if (keep) *keep = v;
    return F;
  };

  Vec y = Vec::Zero(dim);
  const double rc = std::min(rho, 0.999);
  y[2 * n + 1] = 0.5 * std::log((1.0 - rc) / (1.0 + rc));
  Vec F = residual(y, nullptr);
  double norm = F.norm();
  int it = 0;
  for (; it < opts.max_iterations && norm > 0.1 * opts.tolerance; ++it) {
    Eigen::MatrixXd Jm(dim, dim);
    for (int k = 0; k < dim; ++k) {
      Vec yp = y, ym = y;
      yp[k] += opts.fd_step;
      ym[k] -= opts.fd_step;
      Jm.col(k) = (residual(yp, nullptr) - residual(ym, nullptr)) / (2.0 * opts.fd_step);
    }
    Vec step = Jm.colPivHouseholderQr().solve(-F);
    double t = 1.0;
    Vec ynew, Fnew;
    double nnew = norm;
    while (t > 1e-4) {
      ynew = y + t * step;
      Fnew = residual(ynew, nullptr);
      nnew = Fnew.norm();
      if (std::isfinite(nnew) && nnew < norm) break;
      t *= 0.5;
    }
    if (!(nnew < norm)) break;
    y = ynew;
    F = Fnew;
    norm = nnew;
    if (std::abs(y[2 * n + 1]) > std::log(opts.max_dilation)) {
      std::ostringstream os;
      os << "balance: required dilation " << std::exp(y[2 * n + 1])
         << " is beyond the degenerate limit " << opts.max_dilation;
      throw DegenerateBalancingError(os.str());
    }
  }
  if (!(norm <= opts.tolerance)) {
    std::ostringstream os;
    os << "balance: no convergence after " << it << " iterations, residual " << norm;
    throw NonConvergenceError(os.str(), norm);
  }
  map.params = params_from(y, n);
  PullbackOptions po;
  po.band_loss_tol = 1e-6;
  SpectralField v = pullback(u, map, po);
  return {map, v, balance_residual(v), it};
}

double jerison_lee_omega(int n, const HeisenbergPoint& h) {
  const double a = 1.0 + h.z.squaredNorm();
  return std::pow(4.0 / (h.tau * h.tau + a * a), 0.5 * n);
}

SpectralField bubble(const BasisPtr& basis, const MoebiusParams& params, double tail_tol) {
  const int n = basis->n();
  if (params.p.z.size() != n) throw ArgumentError("bubble: parameter dimension mismatch");
  Vec grid(basis->node_count());
  for (std::size_t m = 0; m < basis->node_count(); ++m)
    grid[m] = jacobian_factor(params, basis->nodes().col(m));
  const double loss = band_loss(grid, *basis);
  if (!(loss <= tail_tol)) {
    std::ostringstream os;
    os << "bubble: spectral tail carries " << loss << " of the energy at N="
       << basis->degree() << " (r=" << params.r << ")";
    throw ResolutionError(os.str());
  }
  return renormalize_volume(analyze(grid, basis));
}

bool bubble_beyond_capacity(const MoebiusParams& params, int N) {
  const double r = std::max(params.r, 1.0 / params.r);
  return r > N / 4.0;
}

std::vector<ConcentrationSample> concentration_profile(const ConformalState& s,
                                                       const CVec& center,
                                                       const std::vector<double>& radii) {
  const BasisTable& b = s.basis();
  const int n = s.n();
  Vec dist(b.node_count());
  for (std::size_t m = 0; m < b.node_count(); ++m) dist[m] = (b.nodes().col(m) - center).norm();
  const Vec Rp = rational_power(s.R_grid().cwiseAbs(), n + 1, 1).cwiseProduct(s.density());
  std::vector<ConcentrationSample> out;
  for (double r : radii) {
    if (!(r > 0.0)) throw ArgumentError("concentration_profile: radii must be positive");
    Vec mask = (dist.array() < r).cast<double>();
    const double mass = integrate(b, mask.cwiseProduct(s.density()));
    const double curv = integrate(b, mask.cwiseProduct(Rp));
    out.push_back({r, mass / s.vol(), std::pow(curv, 1.0 / (n + 1))});
  }
  return out;
}

double mass_radius(const ConformalState& s, const CVec& center, double fraction) {
  const BasisTable& b = s.basis();
  std::vector<std::pair<double, double>> items(b.node_count());
  for (std::size_t m = 0; m < b.node_count(); ++m)
    items[m] = {(b.nodes().col(m) - center).norm(), b.weights()[m] * s.density()[m]};
  std::sort(items.begin(), items.end());
  double acc = 0.0;
  for (const auto& [d, w] : items) {
    acc += w;
    if (acc >= fraction * s.vol()) return d;
  }
  return 2.0;
}

double round_cap_radius(int n, double fraction) {
  // Fraction of the sphere with angle below phi from a point: the polar
  // angle density is proportional to sin^{2n} phi.
  auto cap = [n](double phi) {
    const int steps = 2000;
    auto g = [n](double a) { return std::pow(std::sin(a), 2 * n); };
    auto simpson = [&](double hi) {
      double h = hi / steps, acc = g(0) + g(hi);
      for (int i = 1; i < steps; ++i) acc += (i % 2 ? 4.0 : 2.0) * g(i * h);
      return acc * h / 3.0;
    };
    return simpson(phi) / simpson(std::numbers::pi);
  };
  double lo = 0.0, hi = std::numbers::pi;
  for (int it = 0; it < 60; ++it) {
    double mid = 0.5 * (lo + hi);
    (cap(mid) < fraction ? lo : hi) = mid;
  }
  return 2.0 * std::sin(0.25 * (lo + hi));
}

int site_count(const std::vector<ConformalState>& trajectory, const SiteThreshold& th) {
  if (trajectory.empty()) return 0;
  const ConformalState& last = trajectory.back();
  const BasisTable& b = last.basis();
  const int n = last.n();
  const double Y = yamabe_invariant(n);
  const double radius = th.radius > 0.0 ? th.radius : round_cap_radius(n, 0.05);
  std::vector<std::size_t> order(b.node_count());
  std::iota(order.begin(), order.end(), 0);
  const Vec& ug = last.u_grid();
  std::sort(order.begin(), order.end(), [&](auto a, auto c) { return ug[a] > ug[c]; });

  std::vector<CVec> centers;
  for (std::size_t m : order) {
    if (static_cast<int>(centers.size()) >= th.max_candidates) break;
    const CVec x = b.nodes().col(m);
    bool far = true;
    for (const CVec& c : centers) far = far && (x - c).norm() > 2.0 * radius;
    if (far) centers.push_back(x);
  }

  const std::size_t count = trajectory.size();
  std::size_t first = count - std::max<std::size_t>(
                                  1, static_cast<std::size_t>(std::ceil(th.tail_fraction * count)));
  int sites = 0;
  for (const CVec& c : centers) {
    bool stays = true;
    for (std::size_t k = first; k < count && stays; ++k) {
      auto prof = concentration_profile(trajectory[k], c, {radius});
      stays = prof[0].curvature_functional >= (1.0 - th.epsilon) * Y;
    }
    if (stays) ++sites;
  }
  return sites;
}

}  // namespace crflow
