#pragma once

#include <random>

#include "resa/tensor.hpp"

namespace resa {

using Rng = std::mt19937_64;

template <typename Scalar>
void fill_uniform(Tensor<Scalar>& t, Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  for (Scalar& v : t.values()) v = static_cast<Scalar>(dist(rng));
}

template <typename Scalar>
Tensor<Scalar> random_uniform(const Dims& dims, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<Scalar> t(dims);
  fill_uniform(t, rng, lo, hi);
  return t;
}

}  // namespace resa
