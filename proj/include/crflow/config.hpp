#pragma once

#include <optional>
#include <string>
#include <vector>

#include "crflow/flow.hpp"

namespace crflow {

// c + sum amplitude * (Re|Im) x_j, or a north-pole bubble of dilation r.
struct FieldSpec {
  struct Term {
    int coordinate = 1;  // 1-based, as in x_1 .. x_{n+1}
    bool imaginary = false;
    double amplitude = 0.0;
  };
  double constant = 1.0;
  std::vector<Term> terms;
  std::optional<double> bubble_r;
  bool renormalize = false;  // scale to round volume
};

struct CheckSpec {
  bool sbc_gate = false;
  double volume_drift = 1e-6;       // relative
  double energy_slack = 1e-9;       // E_f increase, relative
  double guard_slack = 1e-6;
  double beta0_tol = 1e-8;
  double parseval_tol = 1e-5;
  bool balance_snapshots = false;
};

struct RunConfig {
  std::string preset;  // empty when none
  int n = 1;
  int N = 10;
  std::optional<std::string> fixture_hash;
  FieldSpec f;
  FieldSpec u0;

  Scheme scheme = Scheme::rk4;
  double dt_init = 0.0;
  double dt_max = 0.1;
  double safety = 0.8;
  double dt_min = 1e-10;
  double t_end = 10.0;
  int max_steps = 1'000'000;
  int snapshot_every = 10;
  double converge_tol = 1e-6;
  double positivity_floor = kPositivityFloor;
  double max_relative_change = 0.25;
  std::vector<double> monitor_ps;
  bool stop_on_converged = true;
  bool stop_on_concentration = true;
  int balance_every = 0;

  CheckSpec checks;
};

std::vector<std::string> preset_names();
// Defaults of a preset before any file overrides.
RunConfig preset_config(const std::string& name);

// Throws ConfigError listing every violation.
RunConfig parse_config(const std::string& path);
RunConfig parse_config_string(const std::string& text, const std::string& source = "<string>");

SpectralField build_field(const FieldSpec& spec, const BasisPtr& basis);
// Monitor exponents with {2, 3, n+1, 2n+2} always present.
std::vector<double> run_monitor_ps(const RunConfig& cfg);
FlowConfig make_flow_config(const RunConfig& cfg, const BasisPtr& basis);

// TOML text that parses back to the same configuration.
std::string to_toml(const RunConfig& cfg);

}  // namespace crflow
