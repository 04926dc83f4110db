#pragma once

#include <Eigen/Dense>

#include <complex>
#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include "crflow/errors.hpp"

namespace crflow {

using cplx = std::complex<double>;
using Vec = Eigen::VectorXd;
using CVec = Eigen::VectorXcd;

// Webster curvature n(n+1)/2 of the standard contact form.
double round_curvature(int n);
// Volume of S^{2n+1} in theta0 = i(dbar - d)|z|^2, which is (4 pi)^{n+1}.
double round_volume(int n);
// R0 * Vol^{1/(n+1)}.
double yamabe_invariant(int n);
// pq + (n/2)(p+q)
double eigenvalue_law(int n, int p, int q);

struct BasisIndex {
  int p = 0;
  int q = 0;
  int m = 0;
  friend bool operator==(const BasisIndex&, const BasisIndex&) = default;
};

// Real basis functions are phi = P(s) * trig(k . xi) with s_j = |x_j|^2,
// xi_j = arg x_j and k the Fourier charge of the complex harmonic behind it.
enum class Trig : std::uint8_t { constant, cosine, sine };

struct BasisEntry {
  BasisIndex index;
  double eigenvalue = 0.0;
  int charge = 0;
  Trig trig = Trig::constant;
  int profile = 0;
};

struct CoordinateIndex {
  std::size_t index;
  double scale;  // coordinate = scale * phi_index
};

struct BasisOptions {
  std::size_t max_nodes = 4'000'000;
};

class FieldEvaluator;

// Orthonormal real basis of bigraded harmonics on S^{2n+1} up to degree N,
// together with a tensor quadrature (simplex Gauss rule in s, uniform grid in
// xi) that is exact for polynomials of degree 4N.  Entries are also built up
// to degree 2N so that products of two fields can be analysed without loss.
class BasisTable {
 public:
  static std::shared_ptr<const BasisTable> build(int n, int N,
                                                 const BasisOptions& opts = {});

  int n() const { return n_; }
  int degree() const { return N_; }

  std::size_t size() const { return count_upto_[N_]; }
  std::size_t extended_size() const { return entries_.size(); }
  std::size_t count_upto(int L) const;

  const std::vector<BasisEntry>& entries() const { return entries_; }
  std::vector<BasisIndex> indices() const;
  double eigenvalue(std::size_t i) const { return entries_[i].eigenvalue; }
  Vec eigenvalues(int L) const;
  std::size_t dimension(int p, int q) const;

  std::size_t node_count() const { return S_ * T_; }
  std::size_t simplex_count() const { return S_; }
  std::size_t torus_count() const { return T_; }
  int torus_points() const { return M_; }
  int gauss_points() const { return K_; }
  const Vec& weights() const { return weights_; }
  // (n+1) x node_count ambient coordinates.
  const Eigen::MatrixXcd& nodes() const { return nodes_; }
  double volume() const;

  const std::vector<std::vector<int>>& charges() const { return charges_; }
  // Profile values at simplex nodes, S x (number of profiles).
  const Eigen::MatrixXd& profiles() const { return profiles_; }

  std::optional<CoordinateIndex> coordinate(int j, bool imaginary) const;

  Vec synthesize(const Vec& coeffs, int L) const;
  Vec analyze(const Vec& values, int L) const;
  // Quadrature Gram matrix B^T diag(w rho) B over the degree-N entries.
  Eigen::MatrixXd weighted_gram(const Vec& rho) const;
  // node_count x size(), values of the degree-N entries at the nodes.
  Eigen::MatrixXd basis_at_nodes() const;
  double evaluate(std::size_t i, const CVec& x) const;

 private:
  friend class FieldEvaluator;
  BasisTable() = default;

  void make_grid();
  void make_entries();
  void validate() const;
  void torus_forward(const double* values, int L, cplx* out) const;
  void torus_inverse(cplx* box, int L, double* out) const;
  std::size_t box_index(const std::vector<int>& k, int L) const;
  // Barycentric weights of the collapsed-coordinate Gauss nodes at s.
  void interpolation_weights(const double* s, std::vector<double>& lw) const;

  int n_ = 0;
  int N_ = 0;
  int K_ = 0;
  int M_ = 0;
  std::size_t S_ = 0;
  std::size_t T_ = 0;

  Vec gauss_x_;
  Vec gauss_bary_;
  Eigen::MatrixXd simplex_s_;  // S x (n+1)
  Vec simplex_w_;              // node weight, equal across the torus
  Vec weights_;
  Eigen::MatrixXcd nodes_;

  std::vector<std::vector<int>> charges_;
  std::vector<BasisEntry> entries_;
  std::vector<std::size_t> count_upto_;
  Eigen::MatrixXd profiles_;
  Eigen::MatrixXd reduced_;  // profiles divided by prod r_j^{|k_j|}
};

using BasisPtr = std::shared_ptr<const BasisTable>;

class SpectralField {
 public:
  SpectralField(BasisPtr basis, Vec coeffs);

  static SpectralField zero(BasisPtr basis);
  static SpectralField constant(BasisPtr basis, double value);
  // Re x_j or Im x_j, j in [0, n].
  static SpectralField coordinate(BasisPtr basis, int j, bool imaginary);

  const BasisTable& basis() const { return *basis_; }
  const BasisPtr& basis_ptr() const { return basis_; }
  const Vec& coeffs() const { return coeffs_; }
  std::size_t size() const { return static_cast<std::size_t>(coeffs_.size()); }

  bool has_grid() const { return grid_ != nullptr; }
  SpectralField with_grid() const;
  Vec values() const;

  SpectralField operator+(const SpectralField& o) const;
  SpectralField operator-(const SpectralField& o) const;
  SpectralField operator*(double c) const;

 private:
  BasisPtr basis_;
  Vec coeffs_;
  std::shared_ptr<const Vec> grid_;
};

Vec synthesize(const SpectralField& f);
SpectralField analyze(const Vec& values, const BasisPtr& basis);
SpectralField apply_sublaplacian(const SpectralField& f);
Vec levi_product(const SpectralField& a, const SpectralField& b);
double integrate(const BasisTable& basis, const Vec& values);
// sum_i lambda_i c_i^2 = int |grad u|^2 dV
double dirichlet_energy(const SpectralField& f);
// Energy fraction of values lost when projected onto the degree-N band.
double band_loss(const Vec& values, const BasisTable& basis);

// Point evaluation of a band-limited field anywhere on the sphere.
class FieldEvaluator {
 public:
  FieldEvaluator(const BasisTable& basis, const Vec& coeffs);
  explicit FieldEvaluator(const SpectralField& f)
      : FieldEvaluator(f.basis(), f.coeffs()) {}
  double operator()(const CVec& x) const;

 private:
  const BasisTable* basis_;
  std::vector<int> charge_ids_;
  Eigen::MatrixXcd amplitude_;  // S x charges
};

}  // namespace crflow
