#pragma once

// Baseline block-wise quantization, the scale-matrix expansion, and the
// rank budgets that put low-rank scale factors on equal footing with it.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "lords/codebook.hpp"
#include "lords/error.hpp"
#include "lords/matrix.hpp"

namespace lords {

/// One absmax scale per contiguous run of block_size elements in a row.
/// scales has shape rows x (cols / block_size).
struct BlockScales {
  DenseMatrix scales;
  std::size_t block_size;

  std::size_t rows() const noexcept { return scales.rows(); }
  std::size_t cols() const noexcept { return scales.cols() * block_size; }
};

/// Low-rank scale factorization S = b * a with b: n x r and a: r x m.
struct FactorPair {
  DenseMatrix b;
  DenseMatrix a;

  std::size_t rank() const noexcept { return b.cols(); }
  std::size_t rows() const noexcept { return b.rows(); }
  std::size_t cols() const noexcept { return a.cols(); }

  void validate() const {
    if (b.cols() != a.rows()) {
      throw Error(ErrorCode::kShapeMismatch, "factor pair inner dims " + shape_string(b) + " / " + shape_string(a));
    }
  }

  DenseMatrix product() const {
    validate();
    return matmul(b, a);
  }

  friend bool operator==(const FactorPair&, const FactorPair&) = default;
};

using ScaleRepr = std::variant<BlockScales, FactorPair>;

/// Level indices plus the scale representation needed to dequantize them.
/// Codes are kept unpacked in memory and packed only on disk.
struct QuantizedTensor {
  std::size_t rows;
  std::size_t cols;
  CodebookId codebook;
  std::vector<CodeIndex> codes;
  ScaleRepr scales;

  bool factored() const noexcept { return std::holds_alternative<FactorPair>(scales); }

  std::size_t rank() const { return factored() ? std::get<FactorPair>(scales).rank() : 0; }

  std::size_t block_size() const { return factored() ? 0 : std::get<BlockScales>(scales).block_size; }

  void validate() const;
  DenseMatrix scale_matrix() const;
};

inline void require_block_divides(std::size_t cols, std::size_t block_size) {
  if (block_size < 1 || cols % block_size != 0) {
    throw Error(ErrorCode::kNotDivisible,
                "block size " + std::to_string(block_size) + " does not divide " + std::to_string(cols) + " columns");
  }
}

inline BlockScales compute_block_scales(const DenseMatrix& w, std::size_t block_size) {
  require_block_divides(w.cols(), block_size);
  const std::size_t blocks = w.cols() / block_size;
  BlockScales out{DenseMatrix(w.rows(), blocks), block_size};
  for (std::size_t i = 0; i < w.rows(); ++i) {
    for (std::size_t blk = 0; blk < blocks; ++blk) {
      double absmax = 0.0;
      for (std::size_t j = blk * block_size; j < (blk + 1) * block_size; ++j) absmax = std::max(absmax, std::abs(w(i, j)));
      out.scales(i, blk) = absmax;
    }
  }
  return out;
}

/// S = s kron 1_{1 x B}: each block scale repeated across its block.
inline DenseMatrix expand_scales(const BlockScales& s) {
  DenseMatrix out(s.rows(), s.cols());
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) = s.scales(i, j / s.block_size);
  return out;
}

/// Per-element scaled argmin against S. A zero scale maps to the zero level
/// so all-zero blocks dequantize to exact zeros.
inline std::vector<CodeIndex> quantize_against_scale(const DenseMatrix& w, const DenseMatrix& s, const Codebook& cb) {
  require_same_shape(w, s, "quantize against scale");
  const CodeIndex zero = cb.zero_index();
  std::vector<CodeIndex> codes(w.size());
  auto wd = w.data();
  auto sd = s.data();
  for (std::size_t k = 0; k < codes.size(); ++k) {
    codes[k] = sd[k] == 0.0 ? zero : nearest_scaled_level(wd[k], sd[k], cb).index;
  }
  return codes;
}

inline DenseMatrix level_matrix(std::span<const CodeIndex> codes, const Codebook& cb, std::size_t rows,
                                std::size_t cols) {
  if (codes.size() != rows * cols) {
    throw Error(ErrorCode::kShapeMismatch, std::to_string(codes.size()) + " codes for " + std::to_string(rows) + "x" +
                                               std::to_string(cols));
  }
  DenseMatrix q(rows, cols);
  auto qd = q.data();
  for (std::size_t k = 0; k < codes.size(); ++k) {
    if (codes[k] >= cb.size()) {
      throw Error(ErrorCode::kBadCodebook, "code " + std::to_string(codes[k]) + " outside " +
                                               std::string(codebook_name(cb.id)) + " level table");
    }
    qd[k] = cb.levels[codes[k]];
  }
  return q;
}

inline void QuantizedTensor::validate() const {
  if (codes.size() != rows * cols) throw Error(ErrorCode::kShapeMismatch, "code count does not match shape");
  const std::size_t levels = build_codebook(codebook).size();
  for (CodeIndex c : codes)
    if (c >= levels) throw Error(ErrorCode::kBadCodebook, "code index out of range");
  if (const auto* f = std::get_if<FactorPair>(&scales)) {
    f->validate();
    if (f->rank() < 1 || f->rows() != rows || f->cols() != cols) {
      throw Error(ErrorCode::kShapeMismatch, "factor pair " + shape_string(f->b) + " / " + shape_string(f->a) +
                                                 " does not fit " + std::to_string(rows) + "x" + std::to_string(cols));
    }
  } else {
    const auto& bs = std::get<BlockScales>(scales);
    if (bs.rows() != rows || bs.cols() != cols) throw Error(ErrorCode::kShapeMismatch, "block scales do not fit shape");
  }
}

inline DenseMatrix QuantizedTensor::scale_matrix() const {
  if (const auto* f = std::get_if<FactorPair>(&scales)) return f->product();
  return expand_scales(std::get<BlockScales>(scales));
}

inline QuantizedTensor blockwise_quantize(const DenseMatrix& w, std::size_t block_size, const Codebook& cb) {
  BlockScales scales = compute_block_scales(w, block_size);
  auto codes = quantize_against_scale(w, expand_scales(scales), cb);
  return {w.rows(), w.cols(), cb.id, std::move(codes), std::move(scales)};
}

/// W_hat = levels[codes] (.) S, with S expanded from block scales or b * a.
inline DenseMatrix dequantize(const QuantizedTensor& q) {
  q.validate();
  return hadamard(level_matrix(q.codes, build_codebook(q.codebook), q.rows, q.cols), q.scale_matrix());
}

/// Rank whose factor parameter count r(n+m) fits inside the block-wise
/// budget nm/B: floor(nm / (B(n+m))).
inline std::size_t equivalent_rank(std::size_t n, std::size_t m, std::size_t block_size) {
  if (n < 1 || m < 1 || block_size < 1) throw Error(ErrorCode::kInvalidArgument, "shape and block size must be >= 1");
  const std::size_t r = (n * m) / (block_size * (n + m));
  if (r < 1) {
    throw Error(ErrorCode::kInvalidRank, "shape " + std::to_string(n) + "x" + std::to_string(m) +
                                             " too small for block size " + std::to_string(block_size));
  }
  return r;
}

/// Equivalent rank plus the rank of an additive adapter, so that factor
/// parameters match block scales plus adapter parameters.
inline std::size_t aligned_rank(std::size_t n, std::size_t m, std::size_t block_size, std::size_t adapter_rank) {
  return equivalent_rank(n, m, block_size) + adapter_rank;
}

inline std::size_t block_float_params(std::size_t n, std::size_t m, std::size_t block_size) {
  return n * m / block_size;
}

inline std::size_t factor_float_params(std::size_t n, std::size_t m, std::size_t rank) { return rank * (n + m); }

enum class MixedPrecision { k3Bit, k2_5Bit, k2_25Bit, k2Bit };

inline MixedPrecision parse_mixed_precision(std::string_view bits) {
  if (bits == "3") return MixedPrecision::k3Bit;
  if (bits == "2.5") return MixedPrecision::k2_5Bit;
  if (bits == "2.25") return MixedPrecision::k2_25Bit;
  if (bits == "2") return MixedPrecision::k2Bit;
  throw Error(ErrorCode::kInvalidArgument, "mixed precision bits must be one of 3, 2.5, 2.25, 2");
}

/// First floor(p * L) layers NF4 with p = 1/2, 1/4, 1/8 or 0; the rest NF2.
inline std::vector<CodebookId> mixed_precision_plan(std::size_t num_layers, MixedPrecision config) {
  if (num_layers < 1) throw Error(ErrorCode::kInvalidArgument, "layer count must be >= 1");
  std::size_t high = 0;
  switch (config) {
    case MixedPrecision::k3Bit: high = num_layers / 2; break;
    case MixedPrecision::k2_5Bit: high = num_layers / 4; break;
    case MixedPrecision::k2_25Bit: high = num_layers / 8; break;
    case MixedPrecision::k2Bit: high = 0; break;
  }
  std::vector<CodebookId> plan(num_layers, CodebookId::kNF2);
  for (std::size_t i = 0; i < high; ++i) plan[i] = CodebookId::kNF4;
  return plan;
}

}  // namespace lords
