#include "crflow/flow.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace crflow {

std::string to_string(Scheme s) { return s == Scheme::rk4 ? "explicit-RK4" : "semi-implicit"; }

std::string to_string(Classification c) {
  switch (c) {
    case Classification::running: return "running";
    case Classification::converged: return "converged";
    case Classification::concentrating: return "concentrating";
    case Classification::failed: return "failed";
  }
  return "unknown";
}

double MonitorRecord::F_at(double p) const {
  for (std::size_t i = 0; i < ps.size(); ++i)
    if (ps[i] == p) return F[i];
  throw ArgumentError("MonitorRecord: F_p not monitored for this p");
}

Vec deficit(const ConformalState& s, const SpectralField& f) {
  const double a = alpha(s, f);
  return a * f.values() - s.R_grid();
}

SpectralField rhs(const ConformalState& s, const SpectralField& f) {
  const double half_n = 0.5 * s.n();
  Vec g = half_n * deficit(s, f).cwiseProduct(s.u_grid());
  return analyze(g, s.u().basis_ptr());
}

double F_p(const ConformalState& s, const SpectralField& f, double p) {
  if (!(p >= 1.0)) throw ArgumentError("F_p: p must be at least 1");
  Vec w = deficit(s, f).cwiseAbs();
  if (p == 2.0)
    w = w.cwiseAbs2();
  else
    w = w.array().pow(p).matrix();
  return integrate(s.basis(), w.cwiseProduct(s.density()));
}

double G_2(const ConformalState& s, const SpectralField& f) {
  SpectralField w = analyze(deficit(s, f), s.u().basis_ptr());
  const Vec lp = levi_product(w, w);
  return integrate(s.basis(), s.u_grid().cwiseAbs2().cwiseProduct(lp));
}

double alpha_prime(const ConformalState& s, const SpectralField& f) {
  const double a = alpha(s, f);
  const Vec w = a * f.values() - s.R_grid();
  const Vec& d = s.density();
  const double sq = integrate(s.basis(), w.cwiseAbs2().cwiseProduct(d));
  const double cross = integrate(s.basis(), (a * f.values()).cwiseProduct(w).cwiseProduct(d));
  return a / energy(s) * (-s.n() * sq - cross);
}

double dissipation_rate(const ConformalState& s, const SpectralField& f) {
  const int n = s.n();
  const Vec w = deficit(s, f);
  const double sq = integrate(s.basis(), w.cwiseAbs2().cwiseProduct(s.density()));
  return -n * sq / std::pow(weighted_volume(s, f.values()), static_cast<double>(n) / (n + 1));
}

double dissipation_check(const ConformalState& s, const SpectralField& f, double dt) {
  if (!(dt > 0.0)) throw ArgumentError("dissipation_check: dt must be positive");
  const ConformalState s1 = step(s, f, dt);
  const ConformalState s2 = step(s1, f, dt);
  const double e0 = normalized_energy(s, f), e1 = normalized_energy(s1, f),
               e2 = normalized_energy(s2, f);
  const double fd = (-3.0 * e0 + 4.0 * e1 - e2) / (2.0 * dt);
  const double closed = dissipation_rate(s, f);
  return std::abs(fd - closed) / std::max(std::abs(closed), 1e-12);
}

GuardConstants guard_constants(const SpectralField& f, const SpectralField& u0) {
  const int n = u0.basis().n();
  const Vec fg = f.values();
  GuardConstants g{};
  g.m = fg.minCoeff();
  g.M = fg.maxCoeff();
  if (!(g.m > 0.0)) throw ArgumentError("guard_constants: f must be positive");
  const double vol = round_volume(n), R0 = round_curvature(n);
  const double ef0 = normalized_energy(ConformalState(u0), f);
  const double mv = std::pow(g.M * vol, static_cast<double>(n) / (n + 1));
  g.alpha1 = R0 * vol / (g.M * vol);
  g.alpha2 = ef0 * mv / (g.m * vol);
  g.alpha0 = std::pow(g.alpha2, 3) * g.M * g.M * vol / (4.0 * n * ef0 * mv);
  g.gamma = std::min(R0 - g.alpha2 * g.M,
                     -(g.alpha0 * g.M + g.alpha2 * g.alpha2 * g.M * g.M) / (g.alpha1 * g.m));
  g.E_lower = R0 * vol;
  g.E_upper = ef0 * mv;
  return g;
}

std::vector<std::string> guard_violations(const GuardConstants& g, const MonitorRecord& r,
                                          double relative_slack, double gamma_slack) {
  std::vector<std::string> out;
  auto add = [&](const char* what, double value, const char* rel, double bound) {
    std::ostringstream os;
    os.precision(12);
    os << "t=" << r.t << ": " << what << " = " << value << ' ' << rel << ' ' << bound;
    out.push_back(os.str());
  };
  if (r.alpha < g.alpha1 * (1.0 - relative_slack)) add("alpha", r.alpha, "<", g.alpha1);
  if (r.alpha > g.alpha2 * (1.0 + relative_slack)) add("alpha", r.alpha, ">", g.alpha2);
  if (r.alpha_prime > g.alpha0 + relative_slack * std::abs(g.alpha0))
    add("alpha'", r.alpha_prime, ">", g.alpha0);
  if (r.min_R_minus_af < g.gamma - gamma_slack) add("min(R - alpha f)", r.min_R_minus_af, "<", g.gamma);
  if (r.E < g.E_lower * (1.0 - relative_slack)) add("E", r.E, "<", g.E_lower);
  if (r.E > g.E_upper * (1.0 + relative_slack)) add("E", r.E, ">", g.E_upper);
  return out;
}

double stable_dt(const ConformalState& s) {
  const int n = s.n();
  const BasisTable& b = s.basis();
  const double lmax = b.eigenvalues(b.degree()).maxCoeff();
  const double umin = s.u_grid().minCoeff();
  const double stiff = (n + 1) * lmax * std::pow(umin, -2.0 / n);
  return stiff > 0.0 ? 2.785 / stiff : std::numeric_limits<double>::infinity();
}

namespace {

void check_finite(const SpectralField& u) {
  if (!u.coeffs().allFinite()) throw NumericalHealthError("step: non-finite coefficients");
}

}  // namespace

ConformalState step(const ConformalState& s, const SpectralField& f, double dt, Scheme scheme) {
  if (!(dt > 0.0)) throw ArgumentError("step: dt must be positive");
  const SpectralField& u = s.u();
  if (scheme == Scheme::rk4) {
    const SpectralField k1 = rhs(s, f);
    SpectralField u2 = u + k1 * (0.5 * dt);
    check_finite(u2);
    const SpectralField k2 = rhs(ConformalState(u2), f);
    SpectralField u3 = u + k2 * (0.5 * dt);
    check_finite(u3);
    const SpectralField k3 = rhs(ConformalState(u3), f);
    SpectralField u4 = u + k3 * dt;
    check_finite(u4);
    const SpectralField k4 = rhs(ConformalState(u4), f);
    SpectralField next = u + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    check_finite(next);
    return ConformalState(next, s.t() + dt);
  }
  // Semi-implicit Euler: the frozen principal part (n+1) kappa Delta is implicit.
  const int n = s.n();
  const BasisTable& b = s.basis();
  const double kappa = std::pow(s.u_grid().minCoeff(), -2.0 / n);
  const Vec k = rhs(s, f).coeffs();
  Vec c = u.coeffs();
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double L = (n + 1) * kappa * b.eigenvalue(i);
    c[i] = (c[i] + dt * (k[i] + L * c[i])) / (1.0 + dt * L);
  }
  SpectralField next(u.basis_ptr(), c);
  check_finite(next);
  return ConformalState(next, s.t() + dt);
}

std::vector<double> default_monitor_ps(int n) {
  return {2.0, 3.0, static_cast<double>(n + 1), static_cast<double>(2 * n + 2)};
}

MonitorRecord monitor(const ConformalState& s, const SpectralField& f,
                      const std::vector<double>& ps) {
  MonitorRecord r;
  r.t = s.t();
  r.vol = s.vol();
  r.E = energy(s);
  r.E_f = normalized_energy(s, f);
  r.alpha = alpha(s, f);
  r.alpha_prime = alpha_prime(s, f);
  r.ps = ps;
  for (double p : ps) r.F.push_back(F_p(s, f, p));
  r.G2 = G_2(s, f);
  const Vec w = r.alpha * f.values() - s.R_grid();
  r.min_R_minus_af = (-w).minCoeff();
  r.sup_deficit = w.cwiseAbs().maxCoeff();
  r.min_u = s.u_grid().minCoeff();
  r.norm_P = center_of_mass(s).P.norm();
  return r;
}

namespace {

struct ConcentrationWatch {
  double rho0;
  std::vector<double> half_radii;
  CVec point;

  bool update(const ConformalState& s) {
    const BasisTable& b = s.basis();
    Eigen::Index at;
    s.u_grid().maxCoeff(&at);
    const CVec q = b.nodes().col(at);
    if (!half_radii.empty() && (q - point).norm() > rho0) half_radii.clear();
    point = q;
    half_radii.push_back(mass_radius(s, q, 0.5));
    const double frac = concentration_profile(s, q, {rho0})[0].mass_fraction;
    const std::size_t k = half_radii.size();
    if (frac < 0.5 || k < 5) return false;
    for (std::size_t i = k - 4; i < k; ++i)
      if (half_radii[i] > half_radii[i - 1]) return false;
    return half_radii[k - 1] < half_radii[k - 5];
  }
};

}  // namespace

FlowResult run(const FlowConfig& cfg) {
  const BasisTable& b = cfg.u0.basis();
  if (&cfg.f.basis() != &b) throw ArgumentError("run: f and u0 live on different bases");
  if (!(cfg.t_end > 0.0)) throw ArgumentError("run: t_end must be positive");
  if (!(cfg.dt_max > 0.0) || cfg.dt_init < 0.0) throw ArgumentError("run: invalid dt bounds");
  if (!(cfg.f.values().minCoeff() > 0.0)) throw ArgumentError("run: f must be positive on the grid");
  std::vector<double> ps = cfg.monitor_ps.empty() ? default_monitor_ps(b.n()) : cfg.monitor_ps;
  for (double p : ps)
    if (!(p >= 1.0)) throw ArgumentError("run: monitor exponents must be at least 1");

  FlowResult res;
  ConformalState s(cfg.u0, 0.0);
  ConcentrationWatch watch{round_cap_radius(b.n(), 0.05), {}, CVec()};

  auto record = [&](const ConformalState& st, double dt, std::size_t steps) {
    MonitorRecord r = monitor(st, cfg.f, ps);
    r.dt = dt;
    if (cfg.balance_every > 0 && steps % cfg.balance_every == 0) {
      try {
        r.min_v = balance(st.u()).v.values().minCoeff();
      } catch (const Error&) {
        r.min_v = std::numeric_limits<double>::quiet_NaN();
      }
    }
    if (r.sup_deficit <= cfg.converge_tol) res.classification = Classification::converged;
    else if (watch.update(st)) {
      res.classification = Classification::concentrating;
      res.concentration_point = watch.point;
    } else
      res.classification = Classification::running;
    r.flag = res.classification;
    res.records.push_back(r);
  };
  auto done = [&] {
    return (cfg.stop_on_converged && res.classification == Classification::converged) ||
           (cfg.stop_on_concentration && res.classification == Classification::concentrating);
  };

  res.trajectory.push_back(s);
  res.snapshot_steps.push_back(0);
  record(s, 0.0, 0);

  double dt_try = cfg.dt_init > 0.0 ? cfg.dt_init : cfg.safety * stable_dt(s);
  std::size_t steps = 0;
  while (!done() && s.t() < cfg.t_end * (1.0 - 1e-14) && steps < static_cast<std::size_t>(cfg.max_steps)) {
    const double dt = std::min({dt_try, cfg.dt_max, cfg.t_end - s.t()});
    std::optional<ConformalState> next;
    std::string why;
    const double bound = stable_dt(s);
    try {
      if (cfg.scheme == Scheme::rk4 && dt > bound) {
        std::ostringstream os;
        os << "dt above the RK4 stability bound " << bound;
        throw NumericalHealthError(os.str());
      }
      next = step(s, cfg.f, dt, cfg.scheme);
      const Vec& ug = next->u_grid();
      if (first_nonpositive(ug, cfg.positivity_floor) >= 0) {
        why = "positivity floor";
        next.reset();
      } else {
        const double change = (ug - s.u_grid()).cwiseAbs().maxCoeff() / s.u_grid().cwiseAbs().maxCoeff();
        if (!(change <= cfg.max_relative_change)) {
          std::ostringstream os;
          os << "relative change " << change;
          why = os.str();
          next.reset();
        } else {
          const double e0 = res.records.back().E_f, e1 = normalized_energy(*next, cfg.f);
          if (e1 - e0 > cfg.energy_slack * std::abs(e0)) {
            std::ostringstream os;
            os << "E_f increased by " << (e1 - e0) / std::abs(e0) << " (relative)";
            why = os.str();
            next.reset();
          }
        }
      }
    } catch (const PositivityError& e) {
      why = e.what();
    } catch (const NumericalHealthError& e) {
      why = e.what();
    }
    if (!next) {
      ++res.rejected_steps;
      res.rejections.push_back({s.t(), dt, why});
      dt_try = 0.5 * dt;
      if (dt_try < cfg.dt_min) {
        std::ostringstream os;
        os << "step size fell below " << cfg.dt_min << " at t=" << s.t() << " (" << why << ")";
        res.failure = os.str();
        res.classification = Classification::failed;
        if (!res.records.empty()) res.records.back().flag = Classification::failed;
        break;
      }
      continue;
    }
    s = *next;
    ++steps;
    record(s, dt, steps);
    if (cfg.snapshot_every > 0 && steps % cfg.snapshot_every == 0) {
      res.trajectory.push_back(s);
      res.snapshot_steps.push_back(steps);
    }
    dt_try = std::min(1.5 * dt, cfg.safety * stable_dt(s));
  }
  if (res.snapshot_steps.back() != steps) {
    res.trajectory.push_back(s);
    res.snapshot_steps.push_back(steps);
  }
  return res;
}

std::vector<DecayInequalitySample> decay_inequality(const std::vector<MonitorRecord>& records,
                                                    int n, double eps, double F2_below) {
  std::vector<DecayInequalitySample> out;
  for (std::size_t k = 1; k + 1 < records.size(); ++k) {
    const MonitorRecord& a = records[k - 1];
    const MonitorRecord& r = records[k];
    const MonitorRecord& c = records[k + 1];
    const double F2 = r.F_at(2.0);
    if (!(F2 < F2_below)) continue;
    const double h1 = r.t - a.t, h2 = c.t - r.t;
    if (!(h1 > 0.0 && h2 > 0.0)) continue;
    const double d = -h2 / (h1 * (h1 + h2)) * a.F_at(2.0) + (h2 - h1) / (h1 * h2) * F2 +
                     h1 / (h2 * (h1 + h2)) * c.F_at(2.0);
    const double core = n * F2 - 2.0 * r.G2;
    DecayInequalitySample smp{r.t, F2, r.G2, d, 0.0, 0.0};
    smp.margin_minus = (n + 1 - eps) * core + eps * F2 - d;
    smp.margin_plus = (n + 1 + eps) * core + eps * F2 - d;
    out.push_back(smp);
  }
  return out;
}

}  // namespace crflow
