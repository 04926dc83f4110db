// Independent reference computations used by the tests.  Nothing here calls
// into the library's transforms; everything is derived from ambient formulas.
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

namespace oracle {

using cplx = std::complex<double>;
using CVec = Eigen::VectorXcd;
using SphereFn = std::function<double(const CVec&)>;

inline CVec random_sphere_point(int n, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  CVec x(n + 1);
  for (int j = 0; j <= n; ++j) x[j] = cplx(g(rng), g(rng));
  return x / x.norm();
}

// theta0 = 2 sum (x dy - y dx) evaluated on a tangent vector at x.
inline double theta(const CVec& x, const CVec& v) {
  return 2.0 * x.dot(v).imag();
}

// d theta0 = 4 sum dx ^ dy.
inline double dtheta(const CVec& v, const CVec& w) {
  return 4.0 * v.dot(w).imag();
}

// (theta ^ dtheta^n)(v_0, ..., v_{2n}) by full antisymmetrisation.
inline double contact_volume_form(const CVec& x, const std::vector<CVec>& v) {
  const int k = static_cast<int>(v.size());
  const int n = (k - 1) / 2;
  std::vector<int> perm(k);
  std::iota(perm.begin(), perm.end(), 0);
  double total = 0.0;
  do {
    int inv = 0;
    for (int i = 0; i < k; ++i)
      for (int j = i + 1; j < k; ++j)
        if (perm[i] > perm[j]) ++inv;
    double term = theta(x, v[perm[0]]);
    for (int i = 0; i < n; ++i) term *= dtheta(v[perm[1 + 2 * i]], v[perm[2 + 2 * i]]);
    total += (inv % 2 ? -term : term);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return total / std::pow(2.0, n);
}

inline double adaptive_simpson(const std::function<double(double)>& f, double a,
                               double b, double tol, int depth = 40) {
  std::function<double(double, double, double, double, double, double, int)> rec =
      [&](double lo, double hi, double flo, double fmid, double fhi, double whole,
          int d) -> double {
    double mid = 0.5 * (lo + hi);
    double lm = 0.5 * (lo + mid), rm = 0.5 * (mid + hi);
    double flm = f(lm), frm = f(rm);
    double left = (mid - lo) / 6.0 * (flo + 4.0 * flm + fmid);
    double right = (hi - mid) / 6.0 * (fmid + 4.0 * frm + fhi);
    if (d <= 0 || std::abs(left + right - whole) <= 15.0 * tol)
      return left + right + (left + right - whole) / 15.0;
    return rec(lo, mid, flo, flm, fmid, left, d - 1) +
           rec(mid, hi, fmid, frm, fhi, right, d - 1);
  };
  double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
  return rec(a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), depth);
}

// Volume of S^{2n+1} under theta0 ^ (d theta0)^n, n in {1, 2}, by pulling the
// form back through Hopf angles and integrating the polar angles adaptively.
inline double contact_volume(int n) {
  const double two_pi = 2.0 * M_PI;
  const double xi[3] = {0.3, 1.1, 2.0};
  auto phase = [&](int j) { return std::polar(1.0, xi[j]); };
  const cplx I(0.0, 1.0);
  if (n == 1) {
    auto density = [&](double eta) {
      CVec x(2), de(2), d1(2), d2(2);
      x << std::cos(eta) * phase(0), std::sin(eta) * phase(1);
      de << -std::sin(eta) * phase(0), std::cos(eta) * phase(1);
      d1 << I * x[0], 0.0;
      d2 << 0.0, I * x[1];
      return std::abs(contact_volume_form(x, {de, d1, d2}));
    };
    return two_pi * two_pi * adaptive_simpson(density, 0.0, M_PI / 2, 1e-14);
  }
  auto outer = [&](double e1) {
    auto inner = [&](double e2) {
      CVec x(3), a(3), b(3), d1(3), d2(3), d3(3);
      x << std::cos(e1) * phase(0), std::sin(e1) * std::cos(e2) * phase(1),
          std::sin(e1) * std::sin(e2) * phase(2);
      a << -std::sin(e1) * phase(0), std::cos(e1) * std::cos(e2) * phase(1),
          std::cos(e1) * std::sin(e2) * phase(2);
      b << 0.0, -std::sin(e1) * std::sin(e2) * phase(1),
          std::sin(e1) * std::cos(e2) * phase(2);
      d1 << I * x[0], 0.0, 0.0;
      d2 << 0.0, I * x[1], 0.0;
      d3 << 0.0, 0.0, I * x[2];
      return std::abs(contact_volume_form(x, {a, b, d1, d2, d3}));
    };
    return adaptive_simpson(inner, 0.0, M_PI / 2, 1e-13);
  };
  return std::pow(two_pi, 3) * adaptive_simpson(outer, 0.0, M_PI / 2, 1e-12);
}

// Orthonormal real frame of the horizontal space at x (complex orthogonal
// complement of x, closed under multiplication by i), Euclidean unit length.
inline std::vector<CVec> horizontal_frame(const CVec& x) {
  const int m = static_cast<int>(x.size());
  std::vector<CVec> cbasis;
  for (int j = 0; j < m && static_cast<int>(cbasis.size()) < m - 1; ++j) {
    CVec e = CVec::Zero(m);
    e[j] = 1.0;
    e -= x.dot(e) * x;
    for (const CVec& b : cbasis) e -= b.dot(e) * b;
    double nn = e.norm();
    if (nn > 0.3) cbasis.push_back(e / nn);
  }
  std::vector<CVec> out;
  for (const CVec& b : cbasis) {
    out.push_back(b);
    out.push_back(cplx(0.0, 1.0) * b);
  }
  return out;
}

// Sum over the horizontal frame of second derivatives along great circles,
// Richardson-extrapolated.  The sub-Laplacian of theta0 is one quarter of it.
inline double horizontal_laplacian(const SphereFn& f, const CVec& x, double h = 2e-3) {
  double total = 0.0;
  const double f0 = f(x);
  for (const CVec& v : horizontal_frame(x)) {
    auto second = [&](double hh) {
      CVec xp = std::cos(hh) * x + std::sin(hh) * v;
      CVec xm = std::cos(hh) * x - std::sin(hh) * v;
      return (f(xp) - 2.0 * f0 + f(xm)) / (hh * hh);
    };
    total += (4.0 * second(0.5 * h) - second(h)) / 3.0;
  }
  return total;
}

inline double sublaplacian(const SphereFn& f, const CVec& x) {
  return 0.25 * horizontal_laplacian(f, x);
}

// Real or imaginary part of z_0^p conj(z_1)^q, harmonic of bidegree (p, q).
inline SphereFn harmonic_monomial(int p, int q, bool imaginary) {
  return [=](const CVec& x) {
    cplx v = std::pow(x[0], p) * std::pow(std::conj(x[1]), q);
    return imaginary ? v.imag() : v.real();
  };
}

// dim H_{p,q}(S^{2n+1})
inline long harmonic_dimension(int n, int p, int q) {
  auto fact = [](int k) {
    double r = 1;
    for (int i = 2; i <= k; ++i) r *= i;
    return r;
  };
  return std::lround((p + q + n) * fact(p + n - 1) * fact(q + n - 1) /
                     (fact(n) * fact(p) * fact(n - 1) * fact(q)));
}

}  // namespace oracle
