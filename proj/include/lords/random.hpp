#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

#include "lords/matrix.hpp"

namespace lords {

using Rng = std::mt19937_64;

inline DenseMatrix gaussian_matrix(std::size_t rows, std::size_t cols, Rng& rng, double stddev = 1.0) {
  std::normal_distribution<double> dist(0.0, stddev);
  DenseMatrix m(rows, cols);
  for (double& x : m.data()) x = dist(rng);
  return m;
}

inline DenseMatrix uniform_matrix(std::size_t rows, std::size_t cols, Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  DenseMatrix m(rows, cols);
  for (double& x : m.data()) x = dist(rng);
  return m;
}

}  // namespace lords
