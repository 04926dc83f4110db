#include "crflow/diagnostics.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <limits>
#include <cstdlib>
#include <sstream>

namespace crflow {

Eigenpairs conformal_eigenpairs(const ConformalState& s, std::size_t k,
                                std::size_t residual_count) {
  const BasisTable& b = s.basis();
  const std::size_t nb = b.size();
  if (k == 0 || k > nb) {
    std::ostringstream os;
    os << "conformal_eigenpairs: requested " << k << " pairs from a band of " << nb;
    throw ArgumentError(os.str());
  }
  const int L = 2 * b.degree();
  const Eigen::MatrixXd M = b.weighted_gram(s.density());
  const Vec u2 = s.u_grid().cwiseAbs2();
  const Eigen::MatrixXd A = b.weighted_gram(u2);
  Vec c = b.analyze(u2, L);
  for (Eigen::Index i = 0; i < c.size(); ++i) c[i] *= -b.eigenvalue(i);
  const Eigen::MatrixXd G = b.weighted_gram(b.synthesize(c, L));
  const Vec lam = b.eigenvalues(b.degree());
  Eigen::MatrixXd K = 0.5 * G;
  K += 0.5 * (A * lam.asDiagonal());
  K += 0.5 * (lam.asDiagonal() * A);
  K = 0.5 * (K + K.transpose()).eval();

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> mass(M, Eigen::EigenvaluesOnly);
  const double cond = mass.eigenvalues().maxCoeff() / mass.eigenvalues().minCoeff();
  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> es(K, M);
  if (es.info() != Eigen::Success || !(cond > 0.0) || !std::isfinite(cond)) {
    std::ostringstream os;
    os << "conformal_eigenpairs: generalized eigensolver failed (mass condition " << cond << ")";
    throw NumericalHealthError(os.str());
  }
  Eigenpairs e;
  e.values = es.eigenvalues().head(k);
  e.vectors = es.eigenvectors().leftCols(k);
  e.condition = cond;
  e.residuals.resize(std::min(k, residual_count));
  for (std::size_t i = 0; i < static_cast<std::size_t>(e.residuals.size()); ++i) {
    SpectralField phi = eigenfunction(s, e, i);
    const Vec r = -conformal_sublaplacian(s, phi) - e.values[i] * phi.values();
    e.residuals[i] = std::sqrt(integrate(b, r.cwiseAbs2().cwiseProduct(s.density())));
  }
  return e;
}

SpectralField eigenfunction(const ConformalState& s, const Eigenpairs& e, std::size_t i) {
  return SpectralField(s.u().basis_ptr(), e.vectors.col(i));
}

SpectralDeficit spectral_deficit(const ConformalState& s, const SpectralField& f) {
  return spectral_deficit(s, f, conformal_eigenpairs(s, s.basis().size(), 0));
}

SpectralDeficit spectral_deficit(const ConformalState& s, const SpectralField& f,
                                 const Eigenpairs& e) {
  const BasisTable& b = s.basis();
  const Vec w = deficit(s, f);
  const Vec proj = b.analyze(w.cwiseProduct(s.density()), b.degree());
  SpectralDeficit d;
  d.betas = e.vectors.transpose() * proj;
  d.eigenvalues = e.values;
  d.F2 = F_p(s, f, 2.0);
  d.G2 = G_2(s, f);
  const double sb = d.betas.squaredNorm();
  const double sl = d.betas.cwiseAbs2().dot(d.eigenvalues);
  d.parseval_F = d.F2 > 0.0 ? std::abs(sb - d.F2) / d.F2 : sb;
  d.parseval_G = d.G2 > 0.0 ? std::abs(sl - d.G2) / d.G2 : sl;
  return d;
}

Vec kazdan_warner_residual(const ConformalState& s) {
  const BasisTable& b = s.basis();
  const int n = s.n();
  const SpectralField R = analyze(s.R_grid(), s.u().basis_ptr());
  Vec out(2 * n + 2);
  for (int j = 0; j <= n; ++j) {
    for (int im = 0; im < 2; ++im) {
      const SpectralField x = SpectralField::coordinate(s.u().basis_ptr(), j, im == 1);
      out[2 * j + im] = integrate(b, levi_product(x, R).cwiseProduct(s.density()));
    }
  }
  return out;
}

Vec kazdan_warner_residual(const ConformalState& s, const SpectralField& f) {
  if (f.coeffs().tail(f.coeffs().size() - 1).cwiseAbs().maxCoeff() <= 1e-14 * std::abs(f.coeffs()[0]))
    return kazdan_warner_residual(s);
  return kazdan_warner_residual(ConformalState(balance(s.u()).v, s.t()));
}

double record_field(const MonitorRecord& r, const std::string& name) {
  if (name == "t") return r.t;
  if (name == "dt") return r.dt;
  if (name == "vol") return r.vol;
  if (name == "E") return r.E;
  if (name == "E_f") return r.E_f;
  if (name == "alpha") return r.alpha;
  if (name == "alpha_prime") return r.alpha_prime;
  if (name == "G2") return r.G2;
  if (name == "minRminusAf") return r.min_R_minus_af;
  if (name == "minU") return r.min_u;
  if (name == "normP") return r.norm_P;
  if (name == "minV") return r.min_v;
  if (name == "sup_deficit") return r.sup_deficit;
  if (name.size() > 1 && name[0] == 'F') {
    char* end = nullptr;
    const double p = std::strtod(name.c_str() + 1, &end);
    if (end && *end == '\0') return r.F_at(p);
  }
  throw ArgumentError("record_field: unknown monitor '" + name + "'");
}

double round_gap_eigenvalue(int n) {
  double best = std::numeric_limits<double>::infinity();
  for (int p = 0; p <= 3; ++p)
    for (int q = 0; p + q <= 3; ++q) {
      const double l = eigenvalue_law(n, p, q);
      if (l > 0.5 * n + 1e-12) best = std::min(best, l);
    }
  return best;
}

DecayFit decay_fit(const std::vector<double>& t, const std::vector<double>& y, int n) {
  if (t.size() != y.size() || t.size() < 2)
    throw ArgumentError("decay_fit: window needs at least two samples");
  const std::size_t m = t.size();
  double st = 0, sy = 0;
  for (std::size_t i = 0; i < m; ++i) {
    if (!(y[i] > 0.0)) {
      std::ostringstream os;
      os << "decay_fit: window contains a nonpositive sample " << y[i] << " at t=" << t[i];
      throw ArgumentError(os.str());
    }
    st += t[i];
    sy += std::log(y[i]);
  }
  st /= m;
  sy /= m;
  double stt = 0, sty = 0;
  for (std::size_t i = 0; i < m; ++i) {
    stt += (t[i] - st) * (t[i] - st);
    sty += (t[i] - st) * (std::log(y[i]) - sy);
  }
  if (!(stt > 0.0)) throw ArgumentError("decay_fit: window has no time extent");
  DecayFit fit;
  fit.t0 = t.front();
  fit.t1 = t.back();
  fit.samples = m;
  const double slope = sty / stt;
  fit.delta = -slope;
  fit.log_intercept = sy - slope * st;
  double ss = 0;
  for (std::size_t i = 0; i < m; ++i) {
    const double r = std::log(y[i]) - (fit.log_intercept + slope * t[i]);
    ss += r * r;
  }
  fit.residual = std::sqrt(ss / m);
  fit.predicted = 2.0 * (n + 1) * (round_gap_eigenvalue(n) - 0.5 * n);
  return fit;
}

DecayFit decay_fit(const std::vector<MonitorRecord>& records, const std::string& field,
                   double t0, double t1, int n) {
  std::vector<double> t, y;
  for (const MonitorRecord& r : records)
    if (r.t >= t0 && r.t <= t1) {
      t.push_back(r.t);
      y.push_back(record_field(r, field));
    }
  return decay_fit(t, y, n);
}

SbcResult sbc_check(const SpectralField& f) {
  const Vec g = f.values();
  const double lo = g.minCoeff(), hi = g.maxCoeff();
  if (!(lo > 0.0)) {
    std::ostringstream os;
    os << "sbc_check: f is not positive on the grid (min " << lo << ")";
    throw ArgumentError(os.str());
  }
  const int n = f.basis().n();
  SbcResult r{hi / lo, std::pow(2.0, 1.0 / n), false};
  r.pass = r.ratio < r.threshold;
  return r;
}

namespace {

struct AubinTerms {
  double grad, l2, lp;
};

AubinTerms aubin_terms(const SpectralField& u, bool check_balance) {
  const BasisTable& b = u.basis();
  const int n = b.n();
  const Vec g = u.values();
  const double sup = g.cwiseAbs().maxCoeff();
  if (sup == 0.0) throw ArgumentError("aubin_deficit: zero field");
  if (g.minCoeff() < -1e-12 * sup) throw ArgumentError("aubin_deficit: field takes negative values");
  const Vec dens = rational_power(g.cwiseAbs(), 2 * n + 2, n);
  const double lp = integrate(b, dens);
  if (check_balance) {
    CVec P(n + 1);
    for (int d = 0; d <= n; ++d) {
      const Vec re = b.nodes().row(d).real().transpose().cwiseProduct(dens);
      const Vec im = b.nodes().row(d).imag().transpose().cwiseProduct(dens);
      P[d] = cplx(integrate(b, re), integrate(b, im));
    }
    const double res = P.norm() / round_volume(n);
    if (res > 1e-6) {
      std::ostringstream os;
      os << "aubin_deficit: field is not balanced (|int x u^{2+2/n}| / Vol = " << res << ")";
      throw ArgumentError(os.str());
    }
  }
  return {dirichlet_energy(u), u.coeffs().squaredNorm(), lp};
}

double gradient_coefficient(int n, double epsilon) {
  return std::pow(2.0, -1.0 / (n + 1)) * (2.0 * n + 2.0) / n + epsilon;
}

}  // namespace

double aubin_deficit(const SpectralField& u, double epsilon, double C_epsilon) {
  const int n = u.basis().n();
  const AubinTerms a = aubin_terms(u, true);
  return gradient_coefficient(n, epsilon) * a.grad + C_epsilon * a.l2 -
         yamabe_invariant(n) * std::pow(a.lp, static_cast<double>(n) / (n + 1));
}

double aubin_required_constant(const SpectralField& u, double epsilon) {
  const int n = u.basis().n();
  const AubinTerms a = aubin_terms(u, false);
  return (yamabe_invariant(n) * std::pow(a.lp, static_cast<double>(n) / (n + 1)) -
          gradient_coefficient(n, epsilon) * a.grad) /
         a.l2;
}

SpectralField antipodal_two_bubble(const BasisPtr& basis, double r) {
  const int n = basis->n();
  MoebiusParams p = MoebiusParams::identity(n);
  p.r = r;
  Vec g(basis->node_count());
  for (std::size_t m = 0; m < basis->node_count(); ++m) {
    const CVec x = basis->nodes().col(m);
    g[m] = jacobian_factor(p, x) + jacobian_factor(p, CVec(-x));
  }
  const double loss = band_loss(g, *basis);
  if (!(loss <= 0.01)) {
    std::ostringstream os;
    os << "antipodal_two_bubble: spectral tail carries " << loss << " at N=" << basis->degree();
    throw ResolutionError(os.str());
  }
  return renormalize_volume(analyze(g, basis));
}

double aubin_calibrate(const BasisPtr& basis, double epsilon, const std::vector<double>& rs) {
  double c = aubin_required_constant(SpectralField::constant(basis, 1.0), epsilon);
  for (double r : rs) c = std::max(c, aubin_required_constant(antipodal_two_bubble(basis, r), epsilon));
  return c;
}

EigenvalueGuardReport eigenvalue_lower_guard(const std::vector<ConformalState>& trajectory,
                                             double beta0, double tail_fraction) {
  EigenvalueGuardReport rep;
  rep.beta0 = beta0;
  if (trajectory.empty()) return rep;
  const std::size_t count = trajectory.size();
  const std::size_t tail = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::ceil(std::clamp(tail_fraction, 0.0, 1.0) * count)));
  rep.min_lambda1 = std::numeric_limits<double>::infinity();
  for (std::size_t k = count - tail; k < count; ++k) {
    const Eigenpairs e = conformal_eigenpairs(trajectory[k], 2);
    rep.t.push_back(trajectory[k].t());
    rep.lambda1.push_back(e.values[1]);
    rep.min_lambda1 = std::min(rep.min_lambda1, e.values[1]);
  }
  rep.pass = rep.min_lambda1 >= beta0;
  return rep;
}

}  // namespace crflow
