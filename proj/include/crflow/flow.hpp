#pragma once

#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "crflow/conformal.hpp"
#include "crflow/mobius.hpp"

namespace crflow {

enum class Scheme { rk4, semi_implicit };
enum class Classification { running, converged, concentrating, failed };

std::string to_string(Scheme s);
std::string to_string(Classification c);

struct FlowConfig {
  SpectralField f;
  SpectralField u0;
  Scheme scheme = Scheme::rk4;
  double dt_init = 0.0;  // 0 picks the stability estimate
  double dt_max = 0.1;
  double safety = 0.8;
  double dt_min = 1e-10;
  double t_end = 10.0;
  std::vector<double> monitor_ps;  // empty: {2, 3, n+1, 2n+2}
  double positivity_floor = kPositivityFloor;
  double max_relative_change = 0.25;  // per step, in sup norm
  double energy_slack = 1e-9;         // a step raising E_f by more (relative) is rejected
  int snapshot_every = 10;
  int max_steps = 1'000'000;
  double converge_tol = 1e-6;  // on sup |R - alpha f|
  bool stop_on_converged = true;
  bool stop_on_concentration = true;
  int balance_every = 0;  // records min v every k steps when positive
};

struct MonitorRecord {
  double t = 0, dt = 0, vol = 0, E = 0, E_f = 0, alpha = 0, alpha_prime = 0;
  std::vector<double> ps, F;
  double G2 = 0;
  double min_R_minus_af = 0;
  double min_u = 0;
  double norm_P = 0;
  double min_v = std::numeric_limits<double>::quiet_NaN();
  double sup_deficit = 0;  // sup |R - alpha f|
  Classification flag = Classification::running;

  double F_at(double p) const;
};

struct GuardConstants {
  double alpha1, alpha2, alpha0, gamma;
  double E_lower, E_upper;
  double m, M;
};

// (n/2)(alpha f - R) u, analyzed onto the field basis.
SpectralField rhs(const ConformalState& s, const SpectralField& f);
// Pointwise alpha f - R at the nodes.
Vec deficit(const ConformalState& s, const SpectralField& f);

double F_p(const ConformalState& s, const SpectralField& f, double p);
double G_2(const ConformalState& s, const SpectralField& f);
double alpha_prime(const ConformalState& s, const SpectralField& f);
// Closed form of dE_f/dt.
double dissipation_rate(const ConformalState& s, const SpectralField& f);
// Relative error of a one-sided second-order difference of E_f against the closed form.
double dissipation_check(const ConformalState& s, const SpectralField& f, double dt);

GuardConstants guard_constants(const SpectralField& f, const SpectralField& u0);
// Empty when the record respects every guard.  Bounds on alpha and E get
// relative slack, the gamma floor absolute slack.
std::vector<std::string> guard_violations(const GuardConstants& g, const MonitorRecord& r,
                                          double relative_slack = 1e-8,
                                          double gamma_slack = 1e-6);

// Largest stable RK4 step for the frozen-coefficient linearization at s.
double stable_dt(const ConformalState& s);
// One step. Throws PositivityError or NumericalHealthError on a bad step.
ConformalState step(const ConformalState& s, const SpectralField& f, double dt,
                    Scheme scheme = Scheme::rk4);

MonitorRecord monitor(const ConformalState& s, const SpectralField& f,
                      const std::vector<double>& ps);
std::vector<double> default_monitor_ps(int n);

struct StepRejection {
  double t, dt;
  std::string reason;
};

struct FlowResult {
  std::vector<ConformalState> trajectory;
  std::vector<std::size_t> snapshot_steps;
  std::vector<MonitorRecord> records;
  Classification classification = Classification::running;
  std::string failure;
  int rejected_steps = 0;
  std::vector<StepRejection> rejections;
  std::optional<CVec> concentration_point;
};

FlowResult run(const FlowConfig& config);

// Near convergence with constant f, dF2/dt against (n+1 -/+ eps)(n F2 - 2 G2) + eps F2.
struct DecayInequalitySample {
  double t, F2, G2, dF2dt;
  double margin_minus;  // bound with (n+1-eps)
  double margin_plus;   // bound with (n+1+eps)
};
std::vector<DecayInequalitySample> decay_inequality(const std::vector<MonitorRecord>& records,
                                                    int n, double eps, double F2_below);

}  // namespace crflow
