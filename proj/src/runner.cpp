#include "crflow/runner.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include <Eigen/Core>

#include "crflow/diagnostics.hpp"
#include "json.hpp"

namespace crflow {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new()) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1)
      throw ResourceError("sha256: digest initialisation failed");
  }
  ~Sha256() { EVP_MD_CTX_free(ctx_); }
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(const void* data, std::size_t len) {
    if (len && EVP_DigestUpdate(ctx_, data, len) != 1) throw ResourceError("sha256: update failed");
  }
  template <class T>
  void pod(const T& v) {
    update(&v, sizeof(T));
  }
  void doubles(const double* p, std::size_t count) { update(p, count * sizeof(double)); }

  std::string hex() {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx_, md, &len) != 1) throw ResourceError("sha256: finalisation failed");
    std::ostringstream os;
    for (unsigned int i = 0; i < len; ++i)
      os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
    return os.str();
  }

 private:
  EVP_MD_CTX* ctx_;
};

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IntegrityError("cannot open " + p.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
  out.close();
  if (!out) throw ResourceError("cannot write " + p.string());
}

std::string iso_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

json coeffs_json(const SpectralField& u) {
  json a = json::array();
  for (Eigen::Index i = 0; i < u.coeffs().size(); ++i) a.push_back(u.coeffs()[i]);
  return a;
}

SpectralField coeffs_from_json(const json& a, const BasisPtr& basis, const std::string& what) {
  if (!a.is_array() || a.size() != basis->size())
    throw IntegrityError(what + ": coefficient count does not match the basis");
  Vec c(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) c[i] = a[i].get<double>();
  return SpectralField(basis, c);
}

json moebius_json(const NormalizingMap& m) {
  json z = json::array();
  for (Eigen::Index j = 0; j < m.params.p.z.size(); ++j)
    z.push_back({m.params.p.z[j].real(), m.params.p.z[j].imag()});
  json rot = json::array();
  for (Eigen::Index i = 0; i < m.rotation.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.rotation.cols(); ++j)
      row.push_back({m.rotation(i, j).real(), m.rotation(i, j).imag()});
    rot.push_back(row);
  }
  return {{"z", z}, {"tau", m.params.p.tau}, {"r", m.params.r}, {"rotation", rot}};
}

json record_json(const MonitorRecord& r) {
  json j = {{"t", r.t},         {"dt", r.dt},       {"vol", r.vol},
            {"E", r.E},         {"E_f", r.E_f},     {"alpha", r.alpha},
            {"alpha_prime", r.alpha_prime},         {"G2", r.G2},
            {"minRminusAf", r.min_R_minus_af},      {"minU", r.min_u},
            {"normP", r.norm_P}, {"sup_deficit", r.sup_deficit},
            {"flag", to_string(r.flag)}};
  json F = json::object();
  for (std::size_t i = 0; i < r.ps.size(); ++i) F[g17(r.ps[i])] = r.F[i];
  j["F"] = F;
  return j;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, ',')) out.push_back(cur);
  return out;
}

constexpr char kFixtureMagic[8] = {'C', 'R', 'F', 'L', 'O', 'W', 'B', 'F'};
constexpr std::uint32_t kFixtureVersion = 1;

}  // namespace

std::string sha256_hex(const std::string& bytes) {
  Sha256 h;
  h.update(bytes.data(), bytes.size());
  return h.hex();
}

std::string sha256_file(const fs::path& path) { return sha256_hex(read_file(path)); }

std::string basis_fingerprint(const BasisTable& b) {
  Sha256 h;
  const char tag[] = "crflow-basis/1";
  h.update(tag, sizeof tag);
  h.pod(static_cast<std::int32_t>(b.n()));
  h.pod(static_cast<std::int32_t>(b.degree()));
  h.pod(static_cast<std::uint64_t>(b.node_count()));
  h.pod(static_cast<std::uint64_t>(b.size()));
  h.pod(static_cast<std::uint64_t>(b.extended_size()));
  for (const BasisEntry& e : b.entries()) {
    h.pod(static_cast<std::int32_t>(e.index.p));
    h.pod(static_cast<std::int32_t>(e.index.q));
    h.pod(static_cast<std::int32_t>(e.index.m));
    h.pod(e.eigenvalue);
    h.pod(static_cast<std::int32_t>(e.charge));
    h.pod(static_cast<std::uint8_t>(e.trig));
    h.pod(static_cast<std::int32_t>(e.profile));
  }
  h.doubles(b.weights().data(), b.weights().size());
  const Eigen::MatrixXd re = b.nodes().real(), im = b.nodes().imag();
  h.doubles(re.data(), re.size());
  h.doubles(im.data(), im.size());
  h.doubles(b.profiles().data(), b.profiles().size());
  return h.hex();
}

void export_basis_fixture(const BasisTable& b, const fs::path& path) {
  std::ostringstream os(std::ios::binary);
  auto put = [&](const void* p, std::size_t len) { os.write(static_cast<const char*>(p), len); };
  put(kFixtureMagic, sizeof kFixtureMagic);
  put(&kFixtureVersion, sizeof kFixtureVersion);
  const std::int32_t n = b.n(), N = b.degree();
  const std::uint64_t nodes = b.node_count(), size = b.size();
  put(&n, sizeof n);
  put(&N, sizeof N);
  put(&nodes, sizeof nodes);
  put(&size, sizeof size);
  const std::string fp = basis_fingerprint(b);
  put(fp.data(), fp.size());
  const Vec eig = b.eigenvalues(b.degree());
  put(eig.data(), eig.size() * sizeof(double));
  const Eigen::MatrixXd re = b.nodes().real(), im = b.nodes().imag();
  put(re.data(), re.size() * sizeof(double));
  put(im.data(), im.size() * sizeof(double));
  put(b.weights().data(), b.weights().size() * sizeof(double));
  const Eigen::MatrixXd B = b.basis_at_nodes();
  put(B.data(), B.size() * sizeof(double));
  const double vol = b.volume();
  put(&vol, sizeof vol);
  std::string body = os.str();
  Sha256 h;
  h.update(body.data(), body.size());
  body += h.hex();
  write_file(path, body);
}

FixtureReport validate_basis_fixture(const fs::path& path) {
  FixtureReport rep;
  const std::string data = read_file(path);
  std::size_t pos = 0;
  auto take = [&](void* out, std::size_t len) {
    if (pos + len > data.size()) throw IntegrityError(path.string() + ": fixture is truncated");
    std::memcpy(out, data.data() + pos, len);
    pos += len;
  };
  if (data.size() < 64 + sizeof kFixtureMagic)
    throw IntegrityError(path.string() + ": fixture is truncated");
  const std::string body = data.substr(0, data.size() - 64);
  if (sha256_hex(body) != data.substr(data.size() - 64))
    rep.problems.push_back("content digest mismatch (file altered or truncated)");

  char magic[8];
  take(magic, sizeof magic);
  if (std::memcmp(magic, kFixtureMagic, sizeof magic) != 0)
    throw IntegrityError(path.string() + ": not a basis fixture");
  std::uint32_t version = 0;
  take(&version, sizeof version);
  if (version != kFixtureVersion) {
    rep.problems.push_back("unsupported fixture version " + std::to_string(version));
    return rep;
  }
  std::int32_t n = 0, N = 0;
  std::uint64_t nodes = 0, size = 0;
  take(&n, sizeof n);
  take(&N, sizeof N);
  take(&nodes, sizeof nodes);
  take(&size, sizeof size);
  rep.n = n;
  rep.N = N;
  rep.node_count = nodes;
  rep.size = size;
  rep.fingerprint.resize(64);
  take(rep.fingerprint.data(), 64);
  if (n < 1 || N < 1 || nodes == 0 || size == 0 || size > nodes) {
    rep.problems.push_back("implausible header");
    return rep;
  }
  const std::size_t expect = 8 + 4 + 4 + 4 + 8 + 8 + 64 +
                             8 * (size + 2 * (n + 1) * nodes + nodes + nodes * size + 1) + 64;
  if (data.size() != expect) {
    rep.problems.push_back("file length does not match the header");
    return rep;
  }
  Vec eig(size), w(nodes);
  Eigen::MatrixXd re(n + 1, nodes), im(n + 1, nodes), B(nodes, size);
  take(eig.data(), size * 8);
  take(re.data(), re.size() * 8);
  take(im.data(), im.size() * 8);
  take(w.data(), nodes * 8);
  take(B.data(), B.size() * 8);
  double vol = 0.0;
  take(&vol, 8);

  // Self-consistency of the stored data.
  const Eigen::MatrixXd G = B.transpose() * w.asDiagonal() * B;
  const double gram = (G - Eigen::MatrixXd::Identity(size, size)).cwiseAbs().maxCoeff();
  if (!(gram <= 1e-10)) rep.problems.push_back("Gram identity violated by " + g17(gram));
  if (std::abs(eig[0]) > 0.0) rep.problems.push_back("lambda(0,0) is not zero");
  for (std::size_t i = 1; i < std::min<std::size_t>(size, 2 * n + 3); ++i)
    if (std::abs(eig[i] - 0.5 * n) > 1e-10)
      rep.problems.push_back("degree-one eigenvalue " + std::to_string(i) + " is " + g17(eig[i]));
  if (std::abs(vol - round_volume(n)) > 1e-12 * round_volume(n))
    rep.problems.push_back("volume " + g17(vol) + " differs from (4 pi)^(n+1)");
  if (std::abs(w.sum() - vol) > 1e-10 * vol)
    rep.problems.push_back("weights sum to " + g17(w.sum()) + ", not the volume");

  // Agreement with a freshly built table.
  BasisPtr fresh;
  try {
    fresh = BasisTable::build(n, N);
  } catch (const Error& e) {
    rep.problems.push_back(std::string("cannot rebuild basis: ") + e.what());
    return rep;
  }
  if (fresh->node_count() != nodes || fresh->size() != size) {
    rep.problems.push_back("rebuilt basis has a different shape");
    return rep;
  }
  const std::string fp = basis_fingerprint(*fresh);
  if (fp != rep.fingerprint) rep.problems.push_back("fingerprint " + rep.fingerprint + " != rebuilt " + fp);
  double dev = (fresh->eigenvalues(N) - eig).cwiseAbs().maxCoeff();
  dev = std::max(dev, (fresh->nodes().real() - re).cwiseAbs().maxCoeff());
  dev = std::max(dev, (fresh->nodes().imag() - im).cwiseAbs().maxCoeff());
  dev = std::max(dev, (fresh->weights() - w).cwiseAbs().maxCoeff());
  dev = std::max(dev, (fresh->basis_at_nodes() - B).cwiseAbs().maxCoeff());
  rep.max_deviation = dev;
  if (!(dev <= 1e-12)) rep.problems.push_back("stored tables deviate from the rebuilt basis by " + g17(dev));
  return rep;
}

int apply_thread_limit() {
  const char* env = std::getenv("CRFLOW_THREADS");
  if (!env || !*env) return 0;
  char* end = nullptr;
  const long k = std::strtol(env, &end, 10);
  if (*end != '\0' || k < 1) throw ConfigError(std::string("CRFLOW_THREADS: '") + env + "' is not a positive integer");
  Eigen::setNbThreads(static_cast<int>(k));
  return static_cast<int>(k);
}

std::vector<std::string> monitor_columns() {
  return {"t",     "dt",  "vol",  "E",    "E_f",  "alpha",       "alpha_prime",
          "F2",    "F3",  "Fn1",  "F2n2", "G2",   "minRminusAf", "minU",
          "normP", "minV", "classification_flag"};
}

std::string format_monitor_row(const MonitorRecord& r, int n) {
  const double vals[] = {r.t,      r.dt,     r.vol,         r.E,
                         r.E_f,    r.alpha,  r.alpha_prime, r.F_at(2.0),
                         r.F_at(3.0), r.F_at(n + 1.0), r.F_at(2.0 * n + 2.0), r.G2,
                         r.min_R_minus_af, r.min_u, r.norm_P, r.min_v};
  std::string out;
  for (double v : vals) {
    out += g17(v);
    out += ',';
  }
  out += to_string(r.flag);
  return out;
}

namespace {

struct Artifacts {
  fs::path dir;
  std::vector<std::string> files;

  void write(const std::string& rel, const std::string& text) {
    write_file(dir / rel, text);
    files.push_back(rel);
  }
};

json spectral_block(const ConformalState& s, const SpectralField& f, int n, Eigenpairs* keep) {
  json j;
  j["t"] = s.t();
  try {
    const std::size_t lead = 2 * n + 4;
    Eigenpairs e = conformal_eigenpairs(s, s.basis().size(), lead);
    const SpectralDeficit d = spectral_deficit(s, f, e);
    json lam = json::array(), res = json::array(), betas = json::array();
    for (std::size_t i = 0; i < lead && i < static_cast<std::size_t>(e.values.size()); ++i) {
      lam.push_back(e.values[i]);
      res.push_back(e.residuals[i]);
      betas.push_back(d.betas[i]);
    }
    j["eigenvalues"] = lam;
    j["eigen_residuals"] = res;
    j["mass_condition"] = e.condition;
    j["beta0"] = d.betas[0];
    j["leading_betas"] = betas;
    j["F2"] = d.F2;
    j["G2"] = d.G2;
    j["parseval_F"] = d.parseval_F;
    j["parseval_G"] = d.parseval_G;
    if (keep) *keep = std::move(e);
  } catch (const Error& e) {
    j["spectral_error"] = e.what();
  }
  try {
    const Vec kw = kazdan_warner_residual(s, f);
    j["kazdan_warner"] = std::vector<double>(kw.data(), kw.data() + kw.size());
    j["kazdan_warner_norm"] = kw.norm();
  } catch (const Error& e) {
    j["kazdan_warner_error"] = e.what();
  }
  return j;
}

}  // namespace

ExecuteResult execute(const RunConfig& cfg, const fs::path& out_dir, std::ostream* log,
                      const std::string& config_source) {
  ExecuteResult res;
  Artifacts art{out_dir, {}};
  fs::create_directories(out_dir / "snapshots");
  json manifest;
  manifest["format"] = "crflow-manifest/1";
  manifest["config_source"] = config_source;
  manifest["config_toml"] = to_toml(cfg);
  manifest["start_time"] = iso_now();
  json diag = json::object();

  auto finish = [&]() {
    if (!diag.empty()) art.write("diagnostics.json", diag.dump(2) + "\n");
    manifest["end_time"] = iso_now();
    manifest["classification"] = to_string(res.classification);
    manifest["failure"] = res.failure.empty() ? json(nullptr) : json(res.failure);
    manifest["violations"] = res.violations;
    manifest["exit_code"] = res.exit_code;
    json inv = json::array();
    for (const auto& rel : art.files)
      inv.push_back({{"path", rel},
                     {"sha256", sha256_file(out_dir / rel)},
                     {"bytes", static_cast<std::uint64_t>(fs::file_size(out_dir / rel))}});
    manifest["files"] = inv;
    res.manifest = out_dir / "manifest.json";
    write_file(res.manifest, manifest.dump(2) + "\n");
    if (log) {
      *log << "classification " << to_string(res.classification) << ", exit " << res.exit_code << '\n';
      if (!res.failure.empty()) *log << "failure: " << res.failure << '\n';
      for (const auto& v : res.violations) *log << "invariant violated: " << v << '\n';
    }
    return res;
  };

  try {
    const BasisPtr basis = BasisTable::build(cfg.n, cfg.N);
    const std::string fp = basis_fingerprint(*basis);
    manifest["basis_fingerprint"] = fp;
    manifest["basis"] = {{"n", cfg.n}, {"N", cfg.N}, {"size", basis->size()},
                         {"nodes", basis->node_count()}};
    if (cfg.fixture_hash && *cfg.fixture_hash != fp) {
      res.exit_code = exit_code::numerical;
      res.classification = Classification::failed;
      res.failure = "basis fixture hash mismatch: config expects " + *cfg.fixture_hash +
                    ", built basis has " + fp;
      return finish();
    }
    const FlowConfig fc = make_flow_config(cfg, basis);
    const SpectralField& f = fc.f;
    art.write("f.json", json({{"coeffs", coeffs_json(f)}}).dump() + "\n");
    const SbcResult sbc = sbc_check(f);
    diag["sbc"] = {{"ratio", sbc.ratio}, {"threshold", sbc.threshold}, {"pass", sbc.pass}};
    if (cfg.checks.sbc_gate && !sbc.pass) {
      res.exit_code = exit_code::usage;
      res.failure = "f fails the simple bubble condition, ratio " + g17(sbc.ratio);
      return finish();
    }
    const GuardConstants g = guard_constants(f, fc.u0);
    diag["guard_constants"] = {{"alpha1", g.alpha1}, {"alpha2", g.alpha2}, {"alpha0", g.alpha0},
                               {"gamma", g.gamma},   {"E_lower", g.E_lower}, {"E_upper", g.E_upper},
                               {"m", g.m},           {"M", g.M}};
    if (log) *log << "running n=" << cfg.n << " N=" << cfg.N << " (" << basis->size()
                  << " modes, " << basis->node_count() << " nodes) to t=" << cfg.t_end << '\n';
    const FlowResult fr = run(fc);
    res.classification = fr.classification;
    res.failure = fr.failure;

    // Monitors and snapshots first, so a later diagnostic failure leaves them on disk.
    std::string csv;
    const auto cols = monitor_columns();
    for (std::size_t i = 0; i < cols.size(); ++i) csv += cols[i] + (i + 1 < cols.size() ? "," : "\n");
    for (const MonitorRecord& r : fr.records) csv += format_monitor_row(r, cfg.n) + "\n";
    art.write("monitors.csv", csv);
    for (std::size_t k = 0; k < fr.trajectory.size(); ++k) {
      const ConformalState& s = fr.trajectory[k];
      json snap = {{"format", "crflow-snapshot/1"},
                   {"index", k},
                   {"step", fr.snapshot_steps[k]},
                   {"row", fr.snapshot_steps[k]},
                   {"t", s.t()},
                   {"n", cfg.n},
                   {"N", cfg.N},
                   {"record", fr.snapshot_steps[k] < fr.records.size() ? record_json(fr.records[fr.snapshot_steps[k]]) : json(nullptr)},
                   {"coeffs", coeffs_json(s.u())}};
      if (cfg.checks.balance_snapshots) {
        try {
          const BalanceResult br = balance(s.u());
          snap["balance"] = moebius_json(br.map);
          snap["balance"]["residual"] = br.residual;
          snap["balance"]["min_v"] = br.v.values().minCoeff();
        } catch (const Error& e) {
          snap["balance"] = {{"error", e.what()}};
        }
      }
      char name[32];
      std::snprintf(name, sizeof name, "snapshots/%04zu.json", k);
      art.write(name, snap.dump() + "\n");
    }

    json rej = json::array();
    for (const StepRejection& r : fr.rejections) {
      rej.push_back({{"t", r.t}, {"dt", r.dt}, {"reason", r.reason}});
      if (log) *log << "step rejected at t=" << r.t << " dt=" << r.dt << ": " << r.reason << '\n';
    }
    diag["rejections"] = rej;
    diag["steps"] = fr.records.empty() ? 0 : fr.records.size() - 1;
    if (fr.concentration_point) {
      json p = json::array();
      for (Eigen::Index j = 0; j < fr.concentration_point->size(); ++j)
        p.push_back({(*fr.concentration_point)[j].real(), (*fr.concentration_point)[j].imag()});
      diag["concentration_point"] = p;
    }

    // Invariants.
    std::vector<std::string>& v = res.violations;
    const double vol0 = fr.records.front().vol;
    double drift = 0.0, rise = 0.0;
    for (std::size_t k = 0; k < fr.records.size(); ++k) {
      drift = std::max(drift, std::abs(fr.records[k].vol - vol0) / vol0);
      if (k > 0) {
        const double prev = fr.records[k - 1].E_f;
        rise = std::max(rise, (fr.records[k].E_f - prev) / std::abs(prev));
      }
    }
    diag["volume_drift"] = drift;
    diag["max_relative_E_f_increase"] = rise;
    if (drift > cfg.checks.volume_drift) v.push_back("relative volume drift " + g17(drift));
    if (rise > cfg.checks.energy_slack) v.push_back("E_f increased by " + g17(rise) + " (relative)");
    std::size_t guard_count = 0;
    for (const MonitorRecord& r : fr.records)
      for (auto& msg : guard_violations(g, r, 1e-8, cfg.checks.guard_slack))
        if (guard_count++ < 20) v.push_back("guard: " + msg);
    if (guard_count > 20) v.push_back(std::to_string(guard_count - 20) + " further guard violations");

    // Spectral diagnostics keyed by snapshot time, on at most nine snapshots.
    json blocks = json::object();
    const std::size_t count = fr.trajectory.size();
    const std::size_t stride = std::max<std::size_t>(1, (count + 7) / 8);
    for (std::size_t k = 0; k < count; k += stride)
      if (k + 1 != count) blocks[g17(fr.trajectory[k].t())] = spectral_block(fr.trajectory[k], f, cfg.n, nullptr);
    const ConformalState& last = fr.trajectory.back();
    json final_block = spectral_block(last, f, cfg.n, nullptr);
    blocks[g17(last.t())] = final_block;
    diag["snapshots"] = blocks;
    // A concentrating state leaves the band; its spectral report is recorded, not asserted.
    const bool assert_spectral = fr.classification != Classification::concentrating;
    diag["spectral_checks_asserted"] = assert_spectral;
    if (assert_spectral && final_block.contains("spectral_error"))
      v.push_back("final snapshot: " + final_block["spectral_error"].get<std::string>());
    if (assert_spectral && final_block.contains("beta0")) {
      double worst = 0.0;
      for (const auto& r : final_block["eigen_residuals"]) worst = std::max(worst, r.get<double>());
      if (worst > 1e-6) v.push_back("eigenpair residual " + g17(worst) + " at the final snapshot");
      const double b0 = std::abs(final_block["beta0"].get<double>());
      if (b0 > cfg.checks.beta0_tol) v.push_back("beta0 = " + g17(b0) + " at the final snapshot");
      for (const char* key : {"parseval_F", "parseval_G"}) {
        const double e = final_block[key].get<double>();
        if (e > cfg.checks.parseval_tol) v.push_back(std::string(key) + " = " + g17(e) + " at the final snapshot");
      }
    }

    // Rates and tail reports.
    std::vector<double> tt, yy;
    for (const MonitorRecord& r : fr.records)
      if (r.F_at(2.0) < 1e-3 && r.F_at(2.0) > 0.0) {
        tt.push_back(r.t);
        yy.push_back(r.F_at(2.0));
      }
    if (tt.size() >= 3 && tt.back() > tt.front()) {
      const DecayFit fit = decay_fit(tt, yy, cfg.n);
      diag["decay_fit_F2"] = {{"t0", fit.t0}, {"t1", fit.t1}, {"samples", fit.samples},
                              {"delta", fit.delta}, {"log_residual_rms", fit.residual},
                              {"predicted", fit.predicted}};
    }
    const bool constant_f = f.coeffs().tail(f.coeffs().size() - 1).cwiseAbs().maxCoeff() == 0.0;
    if (constant_f) {
      const auto di = decay_inequality(fr.records, cfg.n, 0.05, 1e-3);
      double mm = std::numeric_limits<double>::infinity(), mp = mm;
      for (const auto& d : di) {
        mm = std::min(mm, d.margin_minus / d.F2);
        mp = std::min(mp, d.margin_plus / d.F2);
      }
      diag["decay_inequality"] = {{"eps", 0.05}, {"samples", di.size()},
                                  {"min_margin_minus_over_F2", di.empty() ? json(nullptr) : json(mm)},
                                  {"min_margin_plus_over_F2", di.empty() ? json(nullptr) : json(mp)}};
    }
    const EigenvalueGuardReport eg = eigenvalue_lower_guard(fr.trajectory, 0.25 * cfg.n, 0.25);
    diag["eigenvalue_guard"] = {{"beta0", eg.beta0}, {"t", eg.t}, {"lambda1", eg.lambda1},
                                {"min_lambda1", eg.min_lambda1}, {"pass", eg.pass}};
    if (fr.classification == Classification::concentrating) {
      diag["site_count"] = site_count(fr.trajectory, SiteThreshold{});
      const double radius = round_cap_radius(cfg.n, 0.05);
      const auto prof = concentration_profile(last, *fr.concentration_point, {radius});
      diag["concentration"] = {{"radius", radius},
                               {"mass_fraction", prof[0].mass_fraction},
                               {"curvature_functional", prof[0].curvature_functional}};
    }

    if (fr.classification == Classification::failed) res.exit_code = exit_code::numerical;
    else if (!v.empty()) res.exit_code = exit_code::invariant;
  } catch (const ConfigError& e) {
    res.exit_code = exit_code::usage;
    res.failure = e.what();
  } catch (const Error& e) {
    res.exit_code = exit_code::numerical;
    res.classification = Classification::failed;
    res.failure = e.what();
  }
  return finish();
}

ReplayResult replay(const fs::path& manifest_path, std::size_t snapshot) {
  json m;
  try {
    m = json::parse(read_file(manifest_path));
  } catch (const json::exception& e) {
    throw IntegrityError(manifest_path.string() + ": unreadable manifest (" + e.what() + ")");
  }
  const fs::path dir = manifest_path.parent_path();
  std::vector<std::string> bad;
  std::map<std::string, bool> listed;
  for (const json& entry : m.at("files")) {
    const std::string rel = entry.at("path").get<std::string>();
    listed[rel] = true;
    if (!fs::exists(dir / rel)) bad.push_back(rel + ": missing");
    else if (sha256_file(dir / rel) != entry.at("sha256").get<std::string>())
      bad.push_back(rel + ": hash mismatch");
  }
  if (!bad.empty()) {
    std::string msg = "replay: artifacts fail their manifest hashes";
    for (const auto& b : bad) msg += "\n  " + b;
    throw IntegrityError(msg);
  }
  char name[32];
  std::snprintf(name, sizeof name, "snapshots/%04zu.json", snapshot);
  if (!listed.count(name)) throw ArgumentError(std::string("replay: no snapshot ") + name + " in the manifest");
  if (!listed.count("monitors.csv") || !listed.count("f.json"))
    throw IntegrityError("replay: manifest lacks monitors.csv or f.json");

  const RunConfig cfg = parse_config_string(m.at("config_toml").get<std::string>(), "manifest config");
  const BasisPtr basis = BasisTable::build(cfg.n, cfg.N);
  if (basis_fingerprint(*basis) != m.at("basis_fingerprint").get<std::string>())
    throw IntegrityError("replay: rebuilt basis does not match the recorded fingerprint");
  const SpectralField f = coeffs_from_json(json::parse(read_file(dir / "f.json")).at("coeffs"), basis, "f.json");
  const json snap = json::parse(read_file(dir / name));
  const SpectralField u = coeffs_from_json(snap.at("coeffs"), basis, name);
  ReplayResult out{ConformalState(u, snap.at("t").get<double>()), snap.at("row").get<std::size_t>(), {}, {}, 0.0};

  std::istringstream csv(read_file(dir / "monitors.csv"));
  std::string line;
  std::getline(csv, line);
  const auto cols = monitor_columns();
  if (split_csv(line) != cols) throw IntegrityError("replay: monitors.csv has unexpected columns");
  for (std::size_t i = 0; i <= out.row; ++i)
    if (!std::getline(csv, line)) throw IntegrityError("replay: monitors.csv is shorter than the snapshot row");
  const auto fields = split_csv(line);
  if (fields.size() != cols.size()) throw IntegrityError("replay: malformed monitors.csv row");
  std::vector<double> rec(cols.size() - 1);
  for (std::size_t i = 0; i + 1 < cols.size(); ++i) rec[i] = std::strtod(fields[i].c_str(), nullptr);

  out.recomputed = monitor(out.state, f, run_monitor_ps(cfg));
  out.recomputed.dt = rec[1];
  const int n = cfg.n;
  MonitorRecord& r = out.recorded;
  r.t = rec[0];
  r.dt = rec[1];
  r.vol = rec[2];
  r.E = rec[3];
  r.E_f = rec[4];
  r.alpha = rec[5];
  r.alpha_prime = rec[6];
  r.ps = {2.0, 3.0, n + 1.0, 2.0 * n + 2.0};
  r.F = {rec[7], rec[8], rec[9], rec[10]};
  r.G2 = rec[11];
  r.min_R_minus_af = rec[12];
  r.min_u = rec[13];
  r.norm_P = rec[14];
  r.min_v = rec[15];
  const MonitorRecord& c = out.recomputed;
  const double pairs[][2] = {{c.t, r.t},
                             {c.vol, r.vol},
                             {c.E, r.E},
                             {c.E_f, r.E_f},
                             {c.alpha, r.alpha},
                             {c.alpha_prime, r.alpha_prime},
                             {c.F_at(2.0), r.F[0]},
                             {c.F_at(3.0), r.F[1]},
                             {c.F_at(n + 1.0), r.F[2]},
                             {c.F_at(2.0 * n + 2.0), r.F[3]},
                             {c.G2, r.G2},
                             {c.min_R_minus_af, r.min_R_minus_af},
                             {c.min_u, r.min_u},
                             {c.norm_P, r.norm_P}};
  for (const auto& p : pairs) {
    const double scale = std::max(std::abs(p[0]), std::abs(p[1]));
    if (scale > 0.0) out.max_drift = std::max(out.max_drift, std::abs(p[0] - p[1]) / scale);
  }
  return out;
}

}  // namespace crflow
