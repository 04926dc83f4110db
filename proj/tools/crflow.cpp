#include <cstdio>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "crflow/runner.hpp"

using namespace crflow;

namespace {

int cmd_run(const std::string& config_path, const std::string& preset, const std::string& out) {
  RunConfig cfg;
  std::string source;
  if (!config_path.empty()) {
    cfg = parse_config(config_path);
    source = config_path;
  } else {
    cfg = parse_config_string("preset = \"" + preset + "\"\n", "--preset " + preset);
    source = "preset:" + preset;
  }
  const ExecuteResult r = execute(cfg, out, &std::cerr, source);
  std::cout << "manifest " << r.manifest.string() << '\n'
            << "classification " << to_string(r.classification) << '\n';
  return r.exit_code;
}

int cmd_replay(const std::string& manifest, std::size_t snapshot) {
  const ReplayResult r = replay(manifest, snapshot);
  std::printf("snapshot %zu  t=%.17g  row %zu  max relative drift %.3g\n", snapshot, r.state.t(),
              r.row, r.max_drift);
  if (r.max_drift > 1e-12) {
    std::fprintf(stderr, "replay drift exceeds 1e-12\n");
    return exit_code::invariant;
  }
  return exit_code::ok;
}

int cmd_validate(const std::string& path) {
  const FixtureReport rep = validate_basis_fixture(path);
  std::printf("n=%d N=%d nodes=%zu size=%zu\nfingerprint %s\nmax deviation %.3g\n", rep.n, rep.N,
              rep.node_count, rep.size, rep.fingerprint.c_str(), rep.max_deviation);
  for (const auto& p : rep.problems) std::fprintf(stderr, "problem: %s\n", p.c_str());
  std::puts(rep.ok() ? "fixture ok" : "fixture INVALID");
  return rep.ok() ? exit_code::ok : exit_code::invariant;
}

int cmd_export(int n, int N, const std::string& out) {
  const BasisPtr b = BasisTable::build(n, N);
  export_basis_fixture(*b, out);
  std::printf("%s\n", basis_fingerprint(*b).c_str());
  return exit_code::ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Webster scalar curvature flow and CR Yamabe flow on S^{2n+1}"};
  app.require_subcommand(1);

  std::string config_path, preset, out;
  auto* run = app.add_subcommand("run", "integrate a configured flow and write its artifacts");
  run->add_option("config", config_path, "TOML configuration")->check(CLI::ExistingFile);
  auto* preset_opt = run->add_option("--preset", preset, "run a named preset instead of a file");
  run->add_option("--out", out, "output directory")->required();
  preset_opt->excludes(run->get_option("config"));

  std::string manifest;
  std::size_t snapshot = 0;
  auto* rep = app.add_subcommand("replay", "recompute monitors of a stored snapshot");
  rep->add_option("manifest", manifest, "manifest.json of a run")->required();
  rep->add_option("--snapshot", snapshot, "snapshot index")->required();

  std::string fixture;
  auto* val = app.add_subcommand("validate-basis", "check a binary basis fixture");
  val->add_option("fixture", fixture)->required()->check(CLI::ExistingFile);

  int en = 1, eN = 10;
  std::string eout;
  auto* exp = app.add_subcommand("export-basis", "write a binary basis fixture");
  exp->add_option("--n", en, "sphere S^{2n+1}")->check(CLI::PositiveNumber);
  exp->add_option("--N", eN, "basis degree")->check(CLI::PositiveNumber);
  exp->add_option("--out", eout)->required();

  std::string show;
  auto* pre = app.add_subcommand("presets", "list presets, or print one as TOML");
  pre->add_option("name", show);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? exit_code::ok : exit_code::usage;
  }

  try {
    apply_thread_limit();
    if (*run) {
      if (config_path.empty() && preset.empty()) throw ConfigError("run: give a config file or --preset");
      return cmd_run(config_path, preset, out);
    }
    if (*rep) return cmd_replay(manifest, snapshot);
    if (*val) return cmd_validate(fixture);
    if (*exp) return cmd_export(en, eN, eout);
    if (*pre) {
      if (show.empty())
        for (const auto& p : preset_names()) std::cout << p << '\n';
      else
        std::cout << to_toml(preset_config(show));
      return exit_code::ok;
    }
  } catch (const ConfigError& e) {
    std::cerr << e.what() << '\n';
    return exit_code::usage;
  } catch (const ArgumentError& e) {
    std::cerr << e.what() << '\n';
    return exit_code::usage;
  } catch (const IntegrityError& e) {
    std::cerr << e.what() << '\n';
    return exit_code::invariant;
  } catch (const Error& e) {
    std::cerr << e.what() << '\n';
    return exit_code::numerical;
  }
  return exit_code::usage;
}
