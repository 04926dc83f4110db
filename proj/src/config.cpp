#include "crflow/config.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "crflow/diagnostics.hpp"

#define TOML_EXCEPTIONS 1
#include "tomlplusplus/toml.hpp"

namespace crflow {

std::vector<std::string> preset_names() {
  return {"yamabe-const", "prescribed-sbc", "concentration"};
}

RunConfig preset_config(const std::string& name) {
  RunConfig c;
  c.preset = name;
  if (name == "yamabe-const") {
    c.N = 10;
    c.f = {};
    c.u0.terms = {{1, false, 0.1}};
    c.u0.renormalize = true;
    c.t_end = 15.0;
  } else if (name == "prescribed-sbc") {
    // No solution exists for this f, so the state drifts toward max f and
    // slowly leaves the band; t_end stops while eigen residuals are < 1e-6.
    c.N = 12;
    c.f.terms = {{1, false, 0.1}};
    c.u0.renormalize = true;
    c.t_end = 5.0;
    c.checks.sbc_gate = true;
  } else if (name == "concentration") {
    // A bubble started under a tilted weight; the flow keeps it collapsing.
    c.N = 12;
    c.f.terms = {{2, false, 0.3}};
    c.u0.bubble_r = 2.0;
    c.t_end = 5.0;
    c.checks.sbc_gate = true;
  } else {
    std::ostringstream os;
    os << "unknown preset '" << name << "' (known:";
    for (const auto& p : preset_names()) os << ' ' << p;
    os << ')';
    throw ConfigError(os.str());
  }
  return c;
}

namespace {

class Reader {
 public:
  std::vector<std::string> errors;

  void unknown_keys(const toml::table& t, const std::string& where,
                    const std::set<std::string>& allowed) {
    for (const auto& [k, v] : t)
      if (!allowed.count(std::string(k.str())))
        errors.push_back(where + std::string(k.str()) + ": unknown key");
  }

  template <class F>
  void number(const toml::table& t, const std::string& where, const char* key, double& out,
              F valid, const char* requirement) {
    const toml::node* node = t.get(key);
    if (!node) return;
    if (!node->is_number()) {
      errors.push_back(where + key + ": expected a number");
      return;
    }
    const double v = node->value<double>().value();
    if (!valid(v)) {
      std::ostringstream os;
      os << where << key << ": " << v << " violates " << requirement;
      errors.push_back(os.str());
      return;
    }
    out = v;
  }

  template <class F>
  void integer(const toml::table& t, const std::string& where, const char* key, int& out,
               F valid, const char* requirement) {
    const toml::node* node = t.get(key);
    if (!node) return;
    if (!node->is_integer()) {
      errors.push_back(where + key + ": expected an integer");
      return;
    }
    const auto v = node->value<std::int64_t>().value();
    if (v < -(1ll << 31) || v > (1ll << 31) - 1 || !valid(static_cast<int>(v))) {
      std::ostringstream os;
      os << where << key << ": " << v << " violates " << requirement;
      errors.push_back(os.str());
      return;
    }
    out = static_cast<int>(v);
  }

  void boolean(const toml::table& t, const std::string& where, const char* key, bool& out) {
    const toml::node* node = t.get(key);
    if (!node) return;
    if (!node->is_boolean()) {
      errors.push_back(where + key + ": expected true or false");
      return;
    }
    out = node->value<bool>().value();
  }

  void string(const toml::table& t, const std::string& where, const char* key, std::string& out) {
    const toml::node* node = t.get(key);
    if (!node) return;
    if (!node->is_string()) {
      errors.push_back(where + key + ": expected a string");
      return;
    }
    out = node->value<std::string>().value();
  }

  const toml::table* table(const toml::table& t, const char* key) {
    const toml::node* node = t.get(key);
    if (!node) return nullptr;
    if (!node->is_table()) {
      errors.push_back(std::string(key) + ": expected a table");
      return nullptr;
    }
    return node->as_table();
  }

  void field(const toml::table& t, const std::string& name, FieldSpec& spec) {
    const std::string where = name + ".";
    unknown_keys(t, where, {"constant", "terms", "bubble_r", "renormalize"});
    number(t, where, "constant", spec.constant, [](double v) { return std::isfinite(v); },
           "finiteness");
    boolean(t, where, "renormalize", spec.renormalize);
    if (const toml::node* node = t.get("bubble_r")) {
      if (!node->is_number()) errors.push_back(where + "bubble_r: expected a number");
      else {
        const double r = node->value<double>().value();
        if (!(r > 0.0 && std::isfinite(r))) {
          std::ostringstream os;
          os << where << "bubble_r: " << r << " violates r > 0";
          errors.push_back(os.str());
        } else
          spec.bubble_r = r;
      }
    }
    if (const toml::node* node = t.get("terms")) {
      const toml::array* arr = node->as_array();
      if (!arr) {
        errors.push_back(where + "terms: expected an array of tables");
        return;
      }
      spec.terms.clear();
      for (std::size_t i = 0; i < arr->size(); ++i) {
        const std::string tw = where + "terms[" + std::to_string(i) + "].";
        const toml::table* term = (*arr)[i].as_table();
        if (!term) {
          errors.push_back(tw + ": expected a table");
          continue;
        }
        unknown_keys(*term, tw, {"coordinate", "part", "amplitude"});
        FieldSpec::Term tm;
        if (!term->get("coordinate")) errors.push_back(tw + "coordinate: missing");
        if (!term->get("amplitude")) errors.push_back(tw + "amplitude: missing");
        integer(*term, tw, "coordinate", tm.coordinate, [](int v) { return v >= 1; },
                "coordinate >= 1");
        number(*term, tw, "amplitude", tm.amplitude, [](double v) { return std::isfinite(v); },
               "finiteness");
        std::string part = "re";
        string(*term, tw, "part", part);
        if (part == "im") tm.imaginary = true;
        else if (part != "re") errors.push_back(tw + "part: '" + part + "' is not 're' or 'im'");
        spec.terms.push_back(tm);
      }
    }
  }
};

void check_field(const FieldSpec& spec, int n, const std::string& name,
                 std::vector<std::string>& errors) {
  for (std::size_t i = 0; i < spec.terms.size(); ++i)
    if (spec.terms[i].coordinate > n + 1) {
      std::ostringstream os;
      os << name << ".terms[" << i << "].coordinate: " << spec.terms[i].coordinate
         << " exceeds n+1 = " << n + 1;
      errors.push_back(os.str());
    }
  if (spec.bubble_r && !spec.terms.empty())
    errors.push_back(name + ": bubble_r cannot be combined with terms");
}

[[noreturn]] void fail(const std::string& source, const std::vector<std::string>& errors) {
  std::ostringstream os;
  os << source << ": " << errors.size() << " configuration error" << (errors.size() > 1 ? "s" : "");
  for (const auto& e : errors) os << "\n  " << e;
  throw ConfigError(os.str());
}

RunConfig parse_table(const toml::table& root, const std::string& source) {
  Reader rd;
  RunConfig cfg;
  rd.unknown_keys(root, "", {"preset", "basis", "f", "u0", "flow", "checks"});
  if (const toml::node* node = root.get("preset")) {
    if (!node->is_string()) rd.errors.push_back("preset: expected a string");
    else {
      try {
        cfg = preset_config(node->value<std::string>().value());
      } catch (const ConfigError& e) {
        rd.errors.push_back(std::string("preset: ") + e.what());
      }
    }
  }
  if (const toml::table* t = rd.table(root, "basis")) {
    rd.unknown_keys(*t, "basis.", {"n", "N", "fixture_hash"});
    rd.integer(*t, "basis.", "n", cfg.n, [](int v) { return v >= 1 && v <= 4; }, "1 <= n <= 4");
    rd.integer(*t, "basis.", "N", cfg.N, [](int v) { return v >= 1 && v <= 64; }, "1 <= N <= 64");
    std::string h;
    rd.string(*t, "basis.", "fixture_hash", h);
    if (!h.empty()) cfg.fixture_hash = h;
  }
  if (const toml::table* t = rd.table(root, "f")) rd.field(*t, "f", cfg.f);
  if (const toml::table* t = rd.table(root, "u0")) rd.field(*t, "u0", cfg.u0);
  if (const toml::table* t = rd.table(root, "flow")) {
    const std::string w = "flow.";
    rd.unknown_keys(*t, w,
                    {"scheme", "dt_init", "dt_max", "safety", "dt_min", "t_end", "max_steps",
                     "snapshot_every", "converge_tol", "positivity_floor", "max_relative_change",
                     "monitor_ps", "stop_on_converged", "stop_on_concentration", "balance_every"});
    std::string scheme = to_string(cfg.scheme);
    rd.string(*t, w, "scheme", scheme);
    if (scheme == "explicit-RK4" || scheme == "rk4") cfg.scheme = Scheme::rk4;
    else if (scheme == "semi-implicit") cfg.scheme = Scheme::semi_implicit;
    else rd.errors.push_back("flow.scheme: '" + scheme + "' is not 'explicit-RK4' or 'semi-implicit'");
    auto pos = [](double v) { return v > 0.0 && std::isfinite(v); };
    rd.number(*t, w, "dt_init", cfg.dt_init, [](double v) { return v >= 0.0 && std::isfinite(v); },
              "dt_init >= 0");
    rd.number(*t, w, "dt_max", cfg.dt_max, pos, "dt_max > 0");
    rd.number(*t, w, "safety", cfg.safety, [](double v) { return v > 0.0 && v <= 1.0; },
              "0 < safety <= 1");
    rd.number(*t, w, "dt_min", cfg.dt_min, pos, "dt_min > 0");
    rd.number(*t, w, "t_end", cfg.t_end, pos, "t_end > 0");
    rd.integer(*t, w, "max_steps", cfg.max_steps, [](int v) { return v > 0; }, "max_steps > 0");
    rd.integer(*t, w, "snapshot_every", cfg.snapshot_every, [](int v) { return v >= 0; },
               "snapshot_every >= 0");
    rd.number(*t, w, "converge_tol", cfg.converge_tol, pos, "converge_tol > 0");
    rd.number(*t, w, "positivity_floor", cfg.positivity_floor, pos, "positivity_floor > 0");
    rd.number(*t, w, "max_relative_change", cfg.max_relative_change, pos,
              "max_relative_change > 0");
    rd.boolean(*t, w, "stop_on_converged", cfg.stop_on_converged);
    rd.boolean(*t, w, "stop_on_concentration", cfg.stop_on_concentration);
    rd.integer(*t, w, "balance_every", cfg.balance_every, [](int v) { return v >= 0; },
               "balance_every >= 0");
    if (const toml::node* node = t->get("monitor_ps")) {
      const toml::array* arr = node->as_array();
      if (!arr) rd.errors.push_back("flow.monitor_ps: expected an array of numbers");
      else {
        cfg.monitor_ps.clear();
        for (std::size_t i = 0; i < arr->size(); ++i) {
          const auto v = (*arr)[i].value<double>();
          if (!v || !(*v >= 1.0)) {
            rd.errors.push_back("flow.monitor_ps[" + std::to_string(i) + "]: expected a number >= 1");
            continue;
          }
          cfg.monitor_ps.push_back(*v);
        }
      }
    }
    if (cfg.dt_init > 0.0 && cfg.dt_init < cfg.dt_min)
      rd.errors.push_back("flow.dt_init: smaller than flow.dt_min");
  }
  if (const toml::table* t = rd.table(root, "checks")) {
    const std::string w = "checks.";
    rd.unknown_keys(*t, w,
                    {"sbc_gate", "volume_drift", "energy_slack", "guard_slack", "beta0_tol",
                     "parseval_tol", "balance_snapshots"});
    auto nonneg = [](double v) { return v >= 0.0 && std::isfinite(v); };
    rd.boolean(*t, w, "sbc_gate", cfg.checks.sbc_gate);
    rd.number(*t, w, "volume_drift", cfg.checks.volume_drift, nonneg, "volume_drift >= 0");
    rd.number(*t, w, "energy_slack", cfg.checks.energy_slack, nonneg, "energy_slack >= 0");
    rd.number(*t, w, "guard_slack", cfg.checks.guard_slack, nonneg, "guard_slack >= 0");
    rd.number(*t, w, "beta0_tol", cfg.checks.beta0_tol, nonneg, "beta0_tol >= 0");
    rd.number(*t, w, "parseval_tol", cfg.checks.parseval_tol, nonneg, "parseval_tol >= 0");
    rd.boolean(*t, w, "balance_snapshots", cfg.checks.balance_snapshots);
  }
  check_field(cfg.f, cfg.n, "f", rd.errors);
  check_field(cfg.u0, cfg.n, "u0", rd.errors);
  if (cfg.f.bubble_r) rd.errors.push_back("f: bubble_r is only meaningful for u0");
  if (!rd.errors.empty()) fail(source, rd.errors);

  // Grid-level checks need the basis.
  std::vector<std::string> errors;
  BasisPtr basis;
  try {
    basis = BasisTable::build(cfg.n, cfg.N);
  } catch (const Error& e) {
    errors.push_back(std::string("basis: ") + e.what());
    fail(source, errors);
  }
  try {
    const SpectralField f = build_field(cfg.f, basis);
    const Vec fv = f.values();
    if (!(fv.minCoeff() > 0.0)) {
      std::ostringstream os;
      os << "f: not positive on the grid (min " << fv.minCoeff() << ")";
      errors.push_back(os.str());
    } else if (cfg.checks.sbc_gate) {
      const SbcResult sbc = sbc_check(f);
      if (!sbc.pass) {
        std::ostringstream os;
        os << "f: fails the simple bubble condition, max f / min f = " << sbc.ratio
           << " >= " << sbc.threshold;
        errors.push_back(os.str());
      }
    }
  } catch (const Error& e) {
    errors.push_back(std::string("f: ") + e.what());
  }
  try {
    const Vec uv = build_field(cfg.u0, basis).values();
    if (!(uv.minCoeff() > cfg.positivity_floor)) {
      std::ostringstream os;
      os << "u0: not positive on the grid (min " << uv.minCoeff() << ")";
      errors.push_back(os.str());
    }
  } catch (const Error& e) {
    errors.push_back(std::string("u0: ") + e.what());
  }
  if (!errors.empty()) fail(source, errors);
  return cfg;
}

toml::table field_table(const FieldSpec& s) {
  toml::table t;
  t.insert("constant", s.constant);
  toml::array terms;
  for (const auto& tm : s.terms)
    terms.push_back(toml::table{{"coordinate", tm.coordinate},
                                {"part", tm.imaginary ? "im" : "re"},
                                {"amplitude", tm.amplitude}});
  t.insert("terms", terms);
  if (s.bubble_r) t.insert("bubble_r", *s.bubble_r);
  t.insert("renormalize", s.renormalize);
  return t;
}

}  // namespace

RunConfig parse_config_string(const std::string& text, const std::string& source) {
  toml::table root;
  try {
    root = toml::parse(text, source);
  } catch (const toml::parse_error& e) {
    std::ostringstream os;
    os << source << ":" << e.source().begin.line << ":" << e.source().begin.column
       << ": TOML syntax error: " << e.description();
    throw ConfigError(os.str());
  }
  return parse_table(root, source);
}

RunConfig parse_config(const std::string& path) {
  toml::table root;
  try {
    root = toml::parse_file(path);
  } catch (const toml::parse_error& e) {
    std::ostringstream os;
    os << path << ":" << e.source().begin.line << ":" << e.source().begin.column
       << ": TOML syntax error: " << e.description();
    throw ConfigError(os.str());
  }
  return parse_table(root, path);
}

SpectralField build_field(const FieldSpec& spec, const BasisPtr& basis) {
  SpectralField out = SpectralField::constant(basis, spec.constant);
  if (spec.bubble_r) {
    MoebiusParams p = MoebiusParams::identity(basis->n());
    p.r = *spec.bubble_r;
    out = bubble(basis, p) * spec.constant;
  }
  for (const auto& tm : spec.terms) {
    if (tm.coordinate < 1 || tm.coordinate > basis->n() + 1)
      throw ConfigError("field term coordinate out of range");
    out = out + SpectralField::coordinate(basis, tm.coordinate - 1, tm.imaginary) * tm.amplitude;
  }
  if (spec.renormalize) out = renormalize_volume(out);
  return out;
}

std::vector<double> run_monitor_ps(const RunConfig& cfg) {
  std::vector<double> ps = default_monitor_ps(cfg.n);
  for (double p : cfg.monitor_ps)
    if (std::find(ps.begin(), ps.end(), p) == ps.end()) ps.push_back(p);
  return ps;
}

FlowConfig make_flow_config(const RunConfig& cfg, const BasisPtr& basis) {
  return FlowConfig{.f = build_field(cfg.f, basis),
                    .u0 = build_field(cfg.u0, basis),
                    .scheme = cfg.scheme,
                    .dt_init = cfg.dt_init,
                    .dt_max = cfg.dt_max,
                    .safety = cfg.safety,
                    .dt_min = cfg.dt_min,
                    .t_end = cfg.t_end,
                    .monitor_ps = run_monitor_ps(cfg),
                    .positivity_floor = cfg.positivity_floor,
                    .max_relative_change = cfg.max_relative_change,
                    .energy_slack = cfg.checks.energy_slack,
                    .snapshot_every = cfg.snapshot_every,
                    .max_steps = cfg.max_steps,
                    .converge_tol = cfg.converge_tol,
                    .stop_on_converged = cfg.stop_on_converged,
                    .stop_on_concentration = cfg.stop_on_concentration,
                    .balance_every = cfg.balance_every};
}

std::string to_toml(const RunConfig& cfg) {
  toml::table root;
  if (!cfg.preset.empty()) root.insert("preset", cfg.preset);
  toml::table basis{{"n", cfg.n}, {"N", cfg.N}};
  if (cfg.fixture_hash) basis.insert("fixture_hash", *cfg.fixture_hash);
  root.insert("basis", basis);
  root.insert("f", field_table(cfg.f));
  root.insert("u0", field_table(cfg.u0));
  toml::array ps;
  for (double p : cfg.monitor_ps) ps.push_back(p);
  root.insert("flow", toml::table{{"scheme", to_string(cfg.scheme)},
                                  {"dt_init", cfg.dt_init},
                                  {"dt_max", cfg.dt_max},
                                  {"safety", cfg.safety},
                                  {"dt_min", cfg.dt_min},
                                  {"t_end", cfg.t_end},
                                  {"max_steps", cfg.max_steps},
                                  {"snapshot_every", cfg.snapshot_every},
                                  {"converge_tol", cfg.converge_tol},
                                  {"positivity_floor", cfg.positivity_floor},
                                  {"max_relative_change", cfg.max_relative_change},
                                  {"monitor_ps", ps},
                                  {"stop_on_converged", cfg.stop_on_converged},
                                  {"stop_on_concentration", cfg.stop_on_concentration},
                                  {"balance_every", cfg.balance_every}});
  root.insert("checks", toml::table{{"sbc_gate", cfg.checks.sbc_gate},
                                    {"volume_drift", cfg.checks.volume_drift},
                                    {"energy_slack", cfg.checks.energy_slack},
                                    {"guard_slack", cfg.checks.guard_slack},
                                    {"beta0_tol", cfg.checks.beta0_tol},
                                    {"parseval_tol", cfg.checks.parseval_tol},
                                    {"balance_snapshots", cfg.checks.balance_snapshots}});
  std::ostringstream os;
  os << root << '\n';
  return os.str();
}

}  // namespace crflow
