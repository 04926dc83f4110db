#include "crflow/sphere.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <tuple>

namespace crflow {

namespace {

constexpr double kPi = std::numbers::pi;

void gauss_legendre01(int K, Vec& x, Vec& w) {
  x.resize(K);
  w.resize(K);
  for (int i = 0; i < K; ++i) {
    double t = std::cos(kPi * (i + 0.75) / (K + 0.5));
    double dp = 1.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = t;
      for (int j = 2; j <= K; ++j) {
        double p2 = ((2.0 * j - 1.0) * t * p1 - (j - 1.0) * p0) / j;
        p0 = p1;
        p1 = p2;
      }
      dp = K * (t * p1 - p0) / (t * t - 1.0);
      double dt = p1 / dp;
      t -= dt;
      if (std::abs(dt) < 1e-16) break;
    }
    // recompute derivative at the converged root
    double p0 = 1.0, p1 = t;
    for (int j = 2; j <= K; ++j) {
      double p2 = ((2.0 * j - 1.0) * t * p1 - (j - 1.0) * p0) / j;
      p0 = p1;
      p1 = p2;
    }
    dp = K * (t * p1 - p0) / (t * t - 1.0);
    x[K - 1 - i] = 0.5 * (t + 1.0);
    w[K - 1 - i] = 1.0 / ((1.0 - t * t) * dp * dp);
  }
}

double neumaier_sum(const double* v, const double* w, std::size_t len) {
  double sum = 0.0, comp = 0.0;
  for (std::size_t i = 0; i < len; ++i) {
    double term = w ? v[i] * w[i] : v[i];
    double t = sum + term;
    if (std::abs(sum) >= std::abs(term))
      comp += (sum - t) + term;
    else
      comp += (term - t) + sum;
    sum = t;
  }
  return sum + comp;
}

std::size_t binomial(int a, int b) {
  if (b < 0 || b > a) return 0;
  std::size_t r = 1;
  for (int i = 1; i <= b; ++i) r = r * (a - b + i) / i;
  return r;
}

}  // namespace

double round_curvature(int n) { return n * (n + 1) / 2.0; }

double round_volume(int n) { return std::pow(4.0 * kPi, n + 1); }

double yamabe_invariant(int n) {
  return round_curvature(n) * std::pow(round_volume(n), 1.0 / (n + 1));
}

double eigenvalue_law(int n, int p, int q) {
  return static_cast<double>(p) * q + 0.5 * n * (p + q);
}

std::shared_ptr<const BasisTable> BasisTable::build(int n, int N,
                                                    const BasisOptions& opts) {
  if (n < 1) throw ArgumentError("build_basis: n must be at least 1");
  if (N < 1) throw ArgumentError("build_basis: N must be at least 1");
  std::shared_ptr<BasisTable> t(new BasisTable());
  t->n_ = n;
  t->N_ = N;
  t->K_ = (2 * N + n + 1) / 2;
  t->M_ = 4 * N + 1;
  double nodes = std::pow(t->K_, n) * std::pow(t->M_, n + 1);
  if (nodes > static_cast<double>(opts.max_nodes)) {
    std::ostringstream os;
    os << "build_basis: degree " << N << " on S^" << 2 * n + 1 << " needs "
       << nodes << " quadrature nodes, budget is " << opts.max_nodes;
    throw ResourceError(os.str());
  }
  t->make_grid();
  t->make_entries();
  t->validate();
  return t;
}

void BasisTable::make_grid() {
  const int n = n_;
  Vec gw;
  gauss_legendre01(K_, gauss_x_, gw);
  gauss_bary_.resize(K_);
  for (int j = 0; j < K_; ++j) {
    double prod = 1.0;
    for (int k = 0; k < K_; ++k)
      if (k != j) prod *= (gauss_x_[j] - gauss_x_[k]);
    gauss_bary_[j] = 1.0 / prod;
  }
  gauss_bary_ /= gauss_bary_.cwiseAbs().maxCoeff();

  S_ = 1;
  for (int i = 0; i < n; ++i) S_ *= K_;
  T_ = 1;
  for (int i = 0; i <= n; ++i) T_ *= M_;

  double cV = std::pow(2.0, n + 1);
  for (int i = 2; i <= n; ++i) cV *= i;
  const double dxi = 2.0 * kPi / M_;
  const double torus_w = std::pow(dxi, n + 1);

  simplex_s_.resize(S_, n + 1);
  simplex_w_.resize(S_);
  std::vector<int> idx(n, 0);
  for (std::size_t s = 0; s < S_; ++s) {
    std::size_t r = s;
    for (int d = 0; d < n; ++d) {
      idx[d] = static_cast<int>(r % K_);
      r /= K_;
    }
    double rem = 1.0, w = 1.0;
    for (int d = 0; d < n; ++d) {
      double a = gauss_x_[idx[d]];
      simplex_s_(s, d) = a * rem;
      w *= gw[idx[d]] * std::pow(1.0 - a, n - 1 - d);
      rem *= (1.0 - a);
    }
    simplex_s_(s, n) = rem;
    simplex_w_[s] = cV * w * torus_w;
  }

  weights_.resize(S_ * T_);
  nodes_.resize(n + 1, S_ * T_);
  std::vector<int> j(n + 1, 0);
  for (std::size_t s = 0; s < S_; ++s) {
    for (std::size_t tt = 0; tt < T_; ++tt) {
      std::size_t r = tt;
      std::size_t node = s * T_ + tt;
      for (int d = 0; d <= n; ++d) {
        j[d] = static_cast<int>(r % M_);
        r /= M_;
        nodes_(d, node) =
            std::polar(std::sqrt(simplex_s_(s, d)), dxi * j[d]);
      }
      weights_[node] = simplex_w_[s];
    }
  }
}

std::size_t BasisTable::box_index(const std::vector<int>& k, int L) const {
  std::size_t idx = 0, stride = 1;
  for (int d = 0; d <= n_; ++d) {
    idx += static_cast<std::size_t>(k[d] + L) * stride;
    stride *= 2 * L + 1;
  }
  return idx;
}

void BasisTable::make_entries() {
  const int n = n_;
  const int Lx = 2 * N_;

  // charges in the closed upper half of Z^{n+1}
  std::vector<int> k(n + 1, -Lx);
  while (true) {
    int l1 = 0;
    int first = 0;
    for (int d = 0; d <= n; ++d) {
      l1 += std::abs(k[d]);
      if (first == 0 && k[d] != 0) first = k[d];
    }
    if (l1 <= Lx && first >= 0) charges_.push_back(k);
    int d = 0;
    while (d <= n && ++k[d] > Lx) {
      k[d] = -Lx;
      ++d;
    }
    if (d > n) break;
  }
  std::stable_sort(charges_.begin(), charges_.end(),
                   [](const std::vector<int>& a, const std::vector<int>& b) {
                     int la = 0, lb = 0;
                     for (int v : a) la += std::abs(v);
                     for (int v : b) lb += std::abs(v);
                     if (la != lb) return la < lb;
                     return std::lexicographical_compare(b.begin(), b.end(),
                                                         a.begin(), a.end());
                   });

  std::vector<Vec> prof, red;
  struct Raw {
    int p, q, charge, profile, level;
    Trig trig;
  };
  std::vector<Raw> raw;

  for (std::size_t c = 0; c < charges_.size(); ++c) {
    const auto& kc = charges_[c];
    int kplus = 0, kminus = 0;
    for (int v : kc) (v > 0 ? kplus : kminus) += std::abs(v);
    const int l1 = kplus + kminus;
    const bool zero = (l1 == 0);

    Vec omega(S_);
    Vec rk(S_);
    for (std::size_t s = 0; s < S_; ++s) {
      double wr = 1.0, r = 1.0;
      for (int d = 0; d <= n; ++d) {
        wr *= std::pow(simplex_s_(s, d), std::abs(kc[d]));
        r *= std::pow(simplex_s_(s, d), 0.5 * std::abs(kc[d]));
      }
      omega[s] = static_cast<double>(T_) * simplex_w_[s] * wr;
      rk[s] = r;
    }
    auto dot = [&](const Vec& a, const Vec& b) {
      return (omega.array() * a.array() * b.array()).sum();
    };

    std::vector<Vec> accepted;
    std::vector<Vec> previous;
    for (int d = 0; 2 * d + l1 <= Lx; ++d) {
      std::vector<Vec> candidates;
      if (d == 0) {
        candidates.push_back(Vec::Ones(S_));
      } else {
        for (const Vec& q : previous)
          for (int j = 0; j <= n; ++j)
            candidates.push_back(q.cwiseProduct(simplex_s_.col(j)));
      }
      const std::size_t expect = binomial(d + n - 1, n - 1);
      std::vector<Vec> level;
      double min_keep = 1e300, max_drop = 0.0;
      for (Vec v : candidates) {
        double n0 = std::sqrt(dot(v, v));
        for (int pass = 0; pass < 2; ++pass) {
          for (const Vec& a : accepted) v -= dot(a, v) * a;
          for (const Vec& a : level) v -= dot(a, v) * a;
        }
        double n1 = std::sqrt(dot(v, v));
        double ratio = n1 / n0;
        if (ratio > 1e-7 && level.size() < expect) {
          level.push_back(v / n1);
          min_keep = std::min(min_keep, ratio);
        } else {
          max_drop = std::max(max_drop, ratio);
        }
      }
      if (level.size() != expect || (max_drop > 0 && min_keep < 1e3 * max_drop)) {
        std::ostringstream os;
        os << "build_basis: rank detection failed for charge " << c
           << " at level " << d << " (kept " << level.size() << " of "
           << expect << ")";
        throw ConstructionError(os.str());
      }
      const int p = d + kplus, q = d + kminus;
      for (const Vec& g : level) {
        double scale = zero ? 1.0 : std::sqrt(2.0);
        int id = static_cast<int>(prof.size());
        red.push_back(scale * g);
        prof.push_back(scale * g.cwiseProduct(rk));
        if (zero) {
          raw.push_back({p, q, static_cast<int>(c), id, d, Trig::constant});
        } else {
          raw.push_back({p, q, static_cast<int>(c), id, d, Trig::cosine});
          raw.push_back({q, p, static_cast<int>(c), id, d, Trig::sine});
        }
      }
      for (const Vec& g : level) accepted.push_back(g);
      previous = std::move(level);
    }
  }

  std::stable_sort(raw.begin(), raw.end(), [](const Raw& a, const Raw& b) {
    return std::make_tuple(a.p + a.q, -a.p, a.charge, a.trig, a.profile) <
           std::make_tuple(b.p + b.q, -b.p, b.charge, b.trig, b.profile);
  });

  profiles_.resize(S_, prof.size());
  reduced_.resize(S_, red.size());
  for (std::size_t i = 0; i < prof.size(); ++i) {
    profiles_.col(i) = prof[i];
    reduced_.col(i) = red[i];
  }

  std::vector<std::vector<int>> counter;
  entries_.reserve(raw.size());
  count_upto_.assign(Lx + 1, 0);
  for (const Raw& r : raw) {
    if (static_cast<int>(counter.size()) <= r.p) counter.resize(r.p + 1);
    auto& row = counter[r.p];
    if (static_cast<int>(row.size()) <= r.q) row.resize(r.q + 1, 0);
    BasisEntry e;
    e.index = {r.p, r.q, row[r.q]++};
    e.eigenvalue = eigenvalue_law(n, r.p, r.q);
    e.charge = r.charge;
    e.trig = r.trig;
    e.profile = r.profile;
    entries_.push_back(e);
    for (int L = r.p + r.q; L <= Lx; ++L) ++count_upto_[L];
  }
}

void BasisTable::validate() const {
  const std::size_t nb = size();
  Eigen::MatrixXd G = weighted_gram(Vec::Ones(node_count()));
  double dev = (G - Eigen::MatrixXd::Identity(nb, nb)).cwiseAbs().maxCoeff();
  if (!(dev <= 1e-10)) {
    std::ostringstream os;
    os << "build_basis: Gram identity violated, max deviation " << dev;
    throw ConstructionError(os.str());
  }
  if (entries_[0].eigenvalue != 0.0)
    throw ConstructionError("build_basis: lambda(0,0) is not zero");
  std::size_t first = 0;
  for (std::size_t i = 1; i < nb && entries_[i].index.p + entries_[i].index.q == 1;
       ++i) {
    if (std::abs(entries_[i].eigenvalue - 0.5 * n_) > 1e-15)
      throw ConstructionError("build_basis: lambda(1,0) differs from n/2");
    ++first;
  }
  if (first != static_cast<std::size_t>(2 * n_ + 2))
    throw ConstructionError("build_basis: first eigenspace has wrong dimension");
}

std::size_t BasisTable::count_upto(int L) const {
  if (L < 0) return 0;
  if (L > 2 * N_) throw ArgumentError("band degree exceeds twice the basis degree");
  return count_upto_[L];
}

std::vector<BasisIndex> BasisTable::indices() const {
  std::vector<BasisIndex> out;
  for (std::size_t i = 0; i < size(); ++i) out.push_back(entries_[i].index);
  return out;
}

Vec BasisTable::eigenvalues(int L) const {
  std::size_t c = count_upto(L);
  Vec v(c);
  for (std::size_t i = 0; i < c; ++i) v[i] = entries_[i].eigenvalue;
  return v;
}

std::size_t BasisTable::dimension(int p, int q) const {
  std::size_t c = 0;
  for (const auto& e : entries_)
    if (e.index.p == p && e.index.q == q) ++c;
  return c;
}

double BasisTable::volume() const {
  return neumaier_sum(weights_.data(), nullptr, weights_.size());
}

std::optional<CoordinateIndex> BasisTable::coordinate(int j, bool imaginary) const {
  if (j < 0 || j > n_) return std::nullopt;
  for (std::size_t i = 0; i < size(); ++i) {
    const auto& e = entries_[i];
    if (e.index.p + e.index.q != 1) continue;
    const auto& k = charges_[e.charge];
    bool match = true;
    for (int d = 0; d <= n_; ++d) match = match && (k[d] == (d == j ? 1 : 0));
    if (!match) continue;
    if ((e.trig == Trig::sine) != imaginary) continue;
    return CoordinateIndex{i, 1.0 / reduced_(0, e.profile)};
  }
  return std::nullopt;
}

void BasisTable::torus_inverse(cplx* box, int L, double* out) const {
  const int n = n_;
  const int B = 2 * L + 1;
  std::vector<cplx> table(static_cast<std::size_t>(M_) * B);
  for (int j = 0; j < M_; ++j)
    for (int k = 0; k < B; ++k)
      table[j * B + k] = std::polar(1.0, 2.0 * kPi * ((k - L) * j % M_) / M_);

  std::vector<int> dims(n + 1, B);
  std::vector<cplx> cur(box, box + static_cast<std::size_t>(std::pow(B, n + 1)));
  std::vector<cplx> nxt;
  for (int a = 0; a <= n; ++a) {
    std::size_t inner = 1, outer = 1;
    for (int d = 0; d < a; ++d) inner *= dims[d];
    for (int d = a + 1; d <= n; ++d) outer *= dims[d];
    nxt.assign(inner * M_ * outer, cplx(0.0, 0.0));
    for (std::size_t o = 0; o < outer; ++o) {
      const cplx* src = cur.data() + o * inner * B;
      cplx* dst = nxt.data() + o * inner * M_;
      for (int k = 0; k < B; ++k) {
        const cplx* sk = src + k * inner;
        bool empty = true;
        for (std::size_t i = 0; i < inner && empty; ++i)
          empty = (sk[i] == cplx(0.0, 0.0));
        if (empty) continue;
        for (int j = 0; j < M_; ++j) {
          const cplx e = table[j * B + k];
          cplx* dj = dst + j * inner;
          for (std::size_t i = 0; i < inner; ++i) dj[i] += e * sk[i];
        }
      }
    }
    dims[a] = M_;
    cur.swap(nxt);
  }
  for (std::size_t i = 0; i < T_; ++i) out[i] = cur[i].real();
}

void BasisTable::torus_forward(const double* values, int L, cplx* out) const {
  const int n = n_;
  const int B = 2 * L + 1;
  std::vector<cplx> table(static_cast<std::size_t>(M_) * B);
  for (int j = 0; j < M_; ++j)
    for (int k = 0; k < B; ++k)
      table[j * B + k] = std::polar(1.0, -2.0 * kPi * ((k - L) * j % M_) / M_);

  std::vector<int> dims(n + 1, M_);
  std::vector<cplx> cur(values, values + T_);
  std::vector<cplx> nxt;
  for (int a = 0; a <= n; ++a) {
    std::size_t inner = 1, outer = 1;
    for (int d = 0; d < a; ++d) inner *= dims[d];
    for (int d = a + 1; d <= n; ++d) outer *= dims[d];
    nxt.assign(inner * B * outer, cplx(0.0, 0.0));
    for (std::size_t o = 0; o < outer; ++o) {
      const cplx* src = cur.data() + o * inner * M_;
      cplx* dst = nxt.data() + o * inner * B;
      for (int k = 0; k < B; ++k) {
        cplx* dk = dst + k * inner;
        for (int j = 0; j < M_; ++j) {
          const cplx e = table[j * B + k];
          const cplx* sj = src + j * inner;
          for (std::size_t i = 0; i < inner; ++i) dk[i] += e * sj[i];
        }
      }
    }
    dims[a] = B;
    cur.swap(nxt);
  }
  std::copy(cur.begin(), cur.end(), out);
}

Vec BasisTable::synthesize(const Vec& coeffs, int L) const {
  const std::size_t count = count_upto(L);
  if (static_cast<std::size_t>(coeffs.size()) != count)
    throw ArgumentError("synthesize: coefficient length does not match band");
  const std::size_t box = static_cast<std::size_t>(std::pow(2 * L + 1, n_ + 1));
  std::vector<std::size_t> where(count);
  for (std::size_t e = 0; e < count; ++e)
    where[e] = box_index(charges_[entries_[e].charge], L);
  Vec out(node_count());
  std::vector<cplx> F(box);
  for (std::size_t s = 0; s < S_; ++s) {
    std::fill(F.begin(), F.end(), cplx(0.0, 0.0));
    for (std::size_t e = 0; e < count; ++e) {
      const double c = coeffs[e];
      if (c == 0.0) continue;
      const double a = c * profiles_(s, entries_[e].profile);
      if (entries_[e].trig == Trig::sine)
        F[where[e]] += cplx(0.0, -a);
      else
        F[where[e]] += a;
    }
    torus_inverse(F.data(), L, out.data() + s * T_);
  }
  return out;
}

Vec BasisTable::analyze(const Vec& values, int L) const {
  if (static_cast<std::size_t>(values.size()) != node_count())
    throw ArgumentError("analyze: value vector length does not match node count");
  const std::size_t count = count_upto(L);
  const std::size_t box = static_cast<std::size_t>(std::pow(2 * L + 1, n_ + 1));
  std::vector<std::size_t> where(count);
  for (std::size_t e = 0; e < count; ++e)
    where[e] = box_index(charges_[entries_[e].charge], L);
  Vec out = Vec::Zero(count);
  std::vector<cplx> B(box);
  for (std::size_t s = 0; s < S_; ++s) {
    torus_forward(values.data() + s * T_, L, B.data());
    const double w = simplex_w_[s];
    for (std::size_t e = 0; e < count; ++e) {
      const cplx b = B[where[e]];
      const double term = entries_[e].trig == Trig::sine ? -b.imag() : b.real();
      out[e] += w * profiles_(s, entries_[e].profile) * term;
    }
  }
  return out;
}

Eigen::MatrixXd BasisTable::weighted_gram(const Vec& rho) const {
  if (static_cast<std::size_t>(rho.size()) != node_count())
    throw ArgumentError("weighted_gram: weight vector length does not match node count");
  const int L = 2 * N_;
  const std::size_t nb = size();
  const std::size_t box = static_cast<std::size_t>(std::pow(2 * L + 1, n_ + 1));
  std::vector<std::size_t> minus(nb * nb), plus(nb * nb);
  std::vector<int> k(n_ + 1);
  for (std::size_t i = 0; i < nb; ++i) {
    const auto& ki = charges_[entries_[i].charge];
    for (std::size_t j = i; j < nb; ++j) {
      const auto& kj = charges_[entries_[j].charge];
      for (int d = 0; d <= n_; ++d) k[d] = ki[d] - kj[d];
      minus[i * nb + j] = box_index(k, L);
      for (int d = 0; d <= n_; ++d) k[d] = ki[d] + kj[d];
      plus[i * nb + j] = box_index(k, L);
    }
  }
  Eigen::MatrixXd G = Eigen::MatrixXd::Zero(nb, nb);
  std::vector<cplx> B(box);
  for (std::size_t s = 0; s < S_; ++s) {
    torus_forward(rho.data() + s * T_, L, B.data());
    const double w = simplex_w_[s];
    for (std::size_t i = 0; i < nb; ++i) {
      const bool si = entries_[i].trig == Trig::sine;
      const double pi = w * profiles_(s, entries_[i].profile);
      for (std::size_t j = i; j < nb; ++j) {
        const bool sj = entries_[j].trig == Trig::sine;
        const cplx bm = B[minus[i * nb + j]];
        const cplx bp = B[plus[i * nb + j]];
        double term;
        if (!si && !sj)
          term = 0.5 * (bm.real() + bp.real());
        else if (si && sj)
          term = 0.5 * (bm.real() - bp.real());
        else if (!si && sj)
          term = 0.5 * (-bp.imag() + bm.imag());
        else
          term = 0.5 * (-bp.imag() - bm.imag());
        G(i, j) += pi * profiles_(s, entries_[j].profile) * term;
      }
    }
  }
  G.triangularView<Eigen::StrictlyLower>() = G.transpose();
  return G;
}

Eigen::MatrixXd BasisTable::basis_at_nodes() const {
  const std::size_t nb = size();
  Eigen::MatrixXd B(node_count(), nb);
  const double dxi = 2.0 * kPi / M_;
  Vec trig(T_);
  for (std::size_t e = 0; e < nb; ++e) {
    const auto& k = charges_[entries_[e].charge];
    for (std::size_t tt = 0; tt < T_; ++tt) {
      std::size_t r = tt;
      long phase = 0;
      for (int d = 0; d <= n_; ++d) {
        phase += static_cast<long>(k[d]) * static_cast<long>(r % M_);
        r /= M_;
      }
      phase %= M_;
      double ang = dxi * phase;
      trig[tt] = entries_[e].trig == Trig::sine ? std::sin(ang)
                 : entries_[e].trig == Trig::cosine ? std::cos(ang)
                                                    : 1.0;
    }
    for (std::size_t s = 0; s < S_; ++s)
      B.col(e).segment(s * T_, T_) = profiles_(s, entries_[e].profile) * trig;
  }
  return B;
}

void BasisTable::interpolation_weights(const double* s, std::vector<double>& lw) const {
  lw.assign(static_cast<std::size_t>(n_) * K_, 0.0);
  double rem = 1.0;
  for (int d = 0; d < n_; ++d) {
    double a = rem > 1e-300 ? s[d] / rem : 0.0;
    a = std::clamp(a, 0.0, 1.0);
    rem = std::max(rem - s[d], 0.0);
    double* l = lw.data() + d * K_;
    int hit = -1;
    for (int j = 0; j < K_; ++j)
      if (a == gauss_x_[j]) hit = j;
    if (hit >= 0) {
      l[hit] = 1.0;
      continue;
    }
    double total = 0.0;
    for (int j = 0; j < K_; ++j) {
      l[j] = gauss_bary_[j] / (a - gauss_x_[j]);
      total += l[j];
    }
    for (int j = 0; j < K_; ++j) l[j] /= total;
  }
}

double BasisTable::evaluate(std::size_t i, const CVec& x) const {
  Vec c = Vec::Zero(size());
  c[i] = 1.0;
  return FieldEvaluator(*this, c)(x);
}

FieldEvaluator::FieldEvaluator(const BasisTable& basis, const Vec& coeffs)
    : basis_(&basis) {
  const std::size_t nb = basis.size();
  if (static_cast<std::size_t>(coeffs.size()) != nb)
    throw ArgumentError("FieldEvaluator: coefficient length mismatch");
  std::vector<int> slot(basis.charges_.size(), -1);
  for (std::size_t e = 0; e < nb; ++e) {
    int c = basis.entries_[e].charge;
    if (slot[c] < 0) {
      slot[c] = static_cast<int>(charge_ids_.size());
      charge_ids_.push_back(c);
    }
  }
  amplitude_ = Eigen::MatrixXcd::Zero(basis.S_, charge_ids_.size());
  for (std::size_t e = 0; e < nb; ++e) {
    const auto& en = basis.entries_[e];
    const cplx factor = en.trig == Trig::sine ? cplx(0.0, -coeffs[e]) : cplx(coeffs[e], 0.0);
    if (coeffs[e] == 0.0) continue;
    amplitude_.col(slot[en.charge]) += factor * basis.reduced_.col(en.profile);
  }
}

double FieldEvaluator::operator()(const CVec& x) const {
  const BasisTable& b = *basis_;
  const int n = b.n_;
  const int K = b.K_;
  std::vector<double> s(n + 1);
  for (int d = 0; d <= n; ++d) s[d] = std::norm(x[d]);
  std::vector<double> lw;
  b.interpolation_weights(s.data(), lw);
  Vec w(b.S_);
  for (std::size_t si = 0; si < b.S_; ++si) {
    std::size_t r = si;
    double prod = 1.0;
    for (int d = 0; d < n; ++d) {
      prod *= lw[d * K + r % K];
      r /= K;
    }
    w[si] = prod;
  }
  Eigen::VectorXcd amp = amplitude_.transpose() * w.cast<cplx>();
  double value = 0.0;
  for (std::size_t c = 0; c < charge_ids_.size(); ++c) {
    const auto& k = b.charges_[charge_ids_[c]];
    cplx mono(1.0, 0.0);
    for (int d = 0; d <= n; ++d) {
      const cplx xd = k[d] >= 0 ? x[d] : std::conj(x[d]);
      for (int e = 0; e < std::abs(k[d]); ++e) mono *= xd;
    }
    value += (amp[c] * mono).real();
  }
  return value;
}

SpectralField::SpectralField(BasisPtr basis, Vec coeffs)
    : basis_(std::move(basis)), coeffs_(std::move(coeffs)) {
  if (!basis_) throw ArgumentError("SpectralField: null basis");
  if (static_cast<std::size_t>(coeffs_.size()) != basis_->size())
    throw ArgumentError("SpectralField: coefficient length does not match basis");
}

SpectralField SpectralField::zero(BasisPtr basis) {
  const std::size_t nb = basis->size();
  return SpectralField(std::move(basis), Vec::Zero(nb));
}

SpectralField SpectralField::constant(BasisPtr basis, double value) {
  Vec c = Vec::Zero(basis->size());
  c[0] = value / basis->profiles()(0, basis->entries()[0].profile);
  return SpectralField(std::move(basis), std::move(c));
}

SpectralField SpectralField::coordinate(BasisPtr basis, int j, bool imaginary) {
  auto ci = basis->coordinate(j, imaginary);
  if (!ci) throw ArgumentError("SpectralField::coordinate: index out of range");
  Vec c = Vec::Zero(basis->size());
  c[ci->index] = ci->scale;
  return SpectralField(std::move(basis), std::move(c));
}

SpectralField SpectralField::with_grid() const {
  SpectralField f = *this;
  if (!f.grid_) f.grid_ = std::make_shared<const Vec>(basis_->synthesize(coeffs_, basis_->degree()));
  return f;
}

Vec SpectralField::values() const {
  if (grid_) return *grid_;
  return basis_->synthesize(coeffs_, basis_->degree());
}

SpectralField SpectralField::operator+(const SpectralField& o) const {
  if (basis_ != o.basis_) throw ArgumentError("SpectralField: basis mismatch");
  return SpectralField(basis_, coeffs_ + o.coeffs_);
}

SpectralField SpectralField::operator-(const SpectralField& o) const {
  if (basis_ != o.basis_) throw ArgumentError("SpectralField: basis mismatch");
  return SpectralField(basis_, coeffs_ - o.coeffs_);
}

SpectralField SpectralField::operator*(double c) const {
  return SpectralField(basis_, coeffs_ * c);
}

Vec synthesize(const SpectralField& f) { return f.values(); }

SpectralField analyze(const Vec& values, const BasisPtr& basis) {
  return SpectralField(basis, basis->analyze(values, basis->degree()));
}

SpectralField apply_sublaplacian(const SpectralField& f) {
  Vec c = f.coeffs();
  for (Eigen::Index i = 0; i < c.size(); ++i) c[i] *= -f.basis().eigenvalue(i);
  return SpectralField(f.basis_ptr(), std::move(c));
}

Vec levi_product(const SpectralField& a, const SpectralField& b) {
  if (a.basis_ptr() != b.basis_ptr())
    throw ArgumentError("levi_product: fields live on different bases");
  const BasisTable& B = a.basis();
  const int L = 2 * B.degree();
  const Vec va = a.values(), vb = b.values();
  Vec prod = B.analyze(va.cwiseProduct(vb), L);
  for (Eigen::Index i = 0; i < prod.size(); ++i) prod[i] *= -B.eigenvalue(i);
  const Vec lab = B.synthesize(prod, L);
  const Vec la = apply_sublaplacian(a).values();
  const Vec lb = apply_sublaplacian(b).values();
  return 0.5 * (lab - va.cwiseProduct(lb) - vb.cwiseProduct(la));
}

double integrate(const BasisTable& basis, const Vec& values) {
  if (static_cast<std::size_t>(values.size()) != basis.node_count())
    throw ArgumentError("integrate: value vector length does not match node count");
  return neumaier_sum(values.data(), basis.weights().data(), basis.node_count());
}

double dirichlet_energy(const SpectralField& f) {
  double sum = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i)
    sum += f.basis().eigenvalue(i) * f.coeffs()[i] * f.coeffs()[i];
  return sum;
}

double band_loss(const Vec& values, const BasisTable& basis) {
  const Vec c = basis.analyze(values, basis.degree());
  const Vec back = basis.synthesize(c, basis.degree());
  const Vec diff = values - back;
  const double total = integrate(basis, values.cwiseAbs2());
  if (total == 0.0) return 0.0;
  return integrate(basis, diff.cwiseAbs2()) / total;
}

}  // namespace crflow
