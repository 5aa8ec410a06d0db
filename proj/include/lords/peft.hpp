#pragma once

// Multiplicative adaptation on frozen codes. Tuning the scale factors
// (B, A) -> (B', A') changes the weights by dW = Q (.) (B'A' - BA); the
// update is absorbed into dequantization, so a merged artifact has the
// same layout and cost as the base one.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "lords/blockwise.hpp"
#include "lords/codebook.hpp"
#include "lords/error.hpp"
#include "lords/matrix.hpp"

namespace lords {

inline constexpr double kDefaultRankTolerance = 1e-6;

inline void require_matching_factors(const FactorPair& base, const FactorPair& tuned) {
  base.validate();
  tuned.validate();
  if (base.rank() != tuned.rank() || base.rows() != tuned.rows() || base.cols() != tuned.cols()) {
    throw Error(ErrorCode::kShapeMismatch, "tuned factors " + shape_string(tuned.b) + " / " + shape_string(tuned.a) +
                                               " do not match base " + shape_string(base.b) + " / " +
                                               shape_string(base.a));
  }
}

inline DenseMatrix peft_delta(std::span<const CodeIndex> codes, const Codebook& cb, const FactorPair& base,
                              const FactorPair& tuned) {
  require_matching_factors(base, tuned);
  const DenseMatrix q = level_matrix(codes, cb, base.rows(), base.cols());
  return hadamard(q, subtract(tuned.product(), base.product()));
}

inline DenseMatrix merged_dequantize(std::span<const CodeIndex> codes, const Codebook& cb, const FactorPair& tuned) {
  tuned.validate();
  return hadamard(level_matrix(codes, cb, tuned.rows(), tuned.cols()), tuned.product());
}

/// Base artifact with its factors replaced by tuned ones; codes untouched.
inline QuantizedTensor merge_tuned(const QuantizedTensor& base, FactorPair tuned) {
  const auto* factors = std::get_if<FactorPair>(&base.scales);
  if (factors == nullptr) throw Error(ErrorCode::kBadRepr, "multiplicative merge needs a factored artifact");
  require_matching_factors(*factors, tuned);
  QuantizedTensor out{base.rows, base.cols, base.codebook, base.codes, std::move(tuned)};
  out.validate();
  return out;
}

/// Number of singular values above rel_tol * sigma_max; 0 for a zero matrix.
inline std::size_t effective_rank(const DenseMatrix& delta, double rel_tol = kDefaultRankTolerance) {
  if (!(rel_tol > 0.0 && rel_tol < 1.0)) throw Error(ErrorCode::kInvalidArgument, "rel_tol must lie in (0, 1)");
  const auto sigma = singular_values(delta);
  if (sigma.empty() || sigma.front() == 0.0) return 0;
  std::size_t count = 0;
  for (double s : sigma)
    if (s > rel_tol * sigma.front()) ++count;
  return count;
}

/// Effective rank of an additive low-rank update B_lora * A_lora, the
/// comparison point for multiplicative updates.
inline std::size_t additive_delta_rank_reference(const DenseMatrix& b_lora, const DenseMatrix& a_lora,
                                                 double rel_tol = kDefaultRankTolerance) {
  return effective_rank(matmul(b_lora, a_lora), rel_tol);
}

}  // namespace lords
