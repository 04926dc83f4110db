#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "crflow/config.hpp"

namespace crflow {

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int usage = 1;  // bad command line or configuration
inline constexpr int numerical = 2;
inline constexpr int invariant = 3;
}  // namespace exit_code

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::filesystem::path& path);

// Digest of everything that defines the basis: header, index table,
// eigenvalues, nodes, weights and radial profiles.
std::string basis_fingerprint(const BasisTable& b);

// Binary fixture: header, eigenvalues, nodes, weights, basis-at-nodes, Vol,
// trailing SHA-256 of the preceding bytes.
void export_basis_fixture(const BasisTable& b, const std::filesystem::path& path);

struct FixtureReport {
  int n = 0, N = 0;
  std::size_t node_count = 0, size = 0;
  std::string fingerprint;
  double max_deviation = 0.0;  // against a freshly built table
  std::vector<std::string> problems;
  bool ok() const { return problems.empty(); }
};
FixtureReport validate_basis_fixture(const std::filesystem::path& path);

// Reads CRFLOW_THREADS; returns the cap applied, 0 when unset.
int apply_thread_limit();

std::vector<std::string> monitor_columns();
std::string format_monitor_row(const MonitorRecord& r, int n);

struct ExecuteResult {
  int exit_code = exit_code::ok;
  Classification classification = Classification::running;
  std::string failure;
  std::vector<std::string> violations;
  std::filesystem::path manifest;
};

// Runs the flow and writes monitors.csv, snapshots/NNNN.json, f.json,
// diagnostics.json and manifest.json under out_dir.
ExecuteResult execute(const RunConfig& cfg, const std::filesystem::path& out_dir,
                      std::ostream* log = nullptr, const std::string& config_source = "");

struct ReplayResult {
  ConformalState state;
  std::size_t row = 0;
  MonitorRecord recorded;
  MonitorRecord recomputed;
  double max_drift = 0.0;  // relative, over the recomputable columns
};

// Throws IntegrityError when any listed file fails its hash.
ReplayResult replay(const std::filesystem::path& manifest, std::size_t snapshot);

}  // namespace crflow
