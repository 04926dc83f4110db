#pragma once

#include <map>
#include <random>

#include "crflow/mobius.hpp"

namespace fixture {

using namespace crflow;

inline BasisPtr basis(int n, int N) {
  static std::map<std::pair<int, int>, BasisPtr> cache;
  auto& b = cache[{n, N}];
  if (!b) b = BasisTable::build(n, N);
  return b;
}

// 1 plus a smooth random perturbation whose grid minimum stays above min_value.
inline SpectralField random_positive(const BasisPtr& b, std::mt19937_64& rng,
                                     double amplitude = 0.3, double min_value = 0.3) {
  std::normal_distribution<double> g(0.0, 1.0);
  Vec c = Vec::Zero(b->size());
  for (std::size_t i = 1; i < b->size(); ++i) c[i] = g(rng) / (1.0 + b->eigenvalue(i));
  SpectralField one = SpectralField::constant(b, 1.0);
  SpectralField pert(b, c);
  const double sup = pert.values().cwiseAbs().maxCoeff();
  SpectralField u = one + pert * (amplitude / sup);
  while (u.values().minCoeff() < min_value) u = one + (u - one) * 0.5;
  return u;
}

// Balanced normalization of 1 + (degree <= max_degree perturbation of sup amplitude).
// Low degree keeps the pullback inside the band.
inline SpectralField random_balanced(const BasisPtr& b, std::mt19937_64& rng, int max_degree,
                                     double amplitude) {
  std::normal_distribution<double> g(0.0, 1.0);
  Vec c = Vec::Zero(b->size());
  for (std::size_t i = 1; i < b->count_upto(max_degree); ++i) c[i] = g(rng) / (1.0 + b->eigenvalue(i));
  SpectralField pert(b, c);
  const double sup = pert.values().cwiseAbs().maxCoeff();
  return balance(SpectralField::constant(b, 1.0) + pert * (amplitude / sup)).v;
}

}  // namespace fixture
