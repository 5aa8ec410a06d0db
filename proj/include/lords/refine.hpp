#pragma once

// Low-rank decomposed scaling for post-training quantization.
//
// The scale matrix S is held as a rank-r product B * A. It is initialized
// from block-wise absmax statistics by truncated SVD, then refined by
// alternating two steps:
//   1. quantization: with B, A fixed, pick each code by scaled argmin;
//   2. adaptation:   with codes fixed, take one AdamW step on B and A
//                    against L = ||W - (BA) (.) Q||_F^2.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "lords/adamw.hpp"
#include "lords/blockwise.hpp"
#include "lords/codebook.hpp"
#include "lords/error.hpp"
#include "lords/matrix.hpp"

namespace lords {

struct RefineConfig {
  std::size_t rank = 1;
  std::size_t steps = 500;
  double learning_rate = 0.05;
  CodebookId codebook = CodebookId::kNF4;
  /// Block size of the absmax statistics used for initialization; 0 picks
  /// init_block_size(cols, rank).
  std::size_t init_block_size = 0;
  AdamWHyper adamw{};
};

struct RefineReport {
  /// ||W - (BA) (.) Q||_F after initialization (index 0) and after every
  /// adaptation step; length steps + 1.
  std::vector<double> frob_trace;
  /// The same error right after each quantization step, before the
  /// adaptation step of that iteration; length steps.
  std::vector<double> requantized_trace;
  double final_frob = 0.0;
  double initial_nuclear = 0.0;
  double final_nuclear = 0.0;
  double seconds = 0.0;
};

struct RefineResult {
  FactorPair factors;
  std::vector<CodeIndex> codes;
  RefineReport report;
};

struct FactorGradients {
  DenseMatrix b;
  DenseMatrix a;
};

/// Largest divisor of cols that is at most cols / rank, so the block
/// statistics have at least `rank` blocks per row. Equals cols / rank
/// whenever rank divides cols.
inline std::size_t init_block_size(std::size_t cols, std::size_t rank) {
  if (rank < 1 || rank > cols) throw Error(ErrorCode::kInvalidRank, "rank must lie in [1, cols]");
  for (std::size_t d = cols / rank; d >= 1; --d)
    if (cols % d == 0) return d;
  return 1;
}

/// B = U_r sqrt(Sigma_r), A = sqrt(Sigma_r) V_r^T.
inline FactorPair init_from_svd(const DenseMatrix& s, std::size_t rank) {
  const SvdResult t = truncated_svd(s, rank);
  FactorPair f{DenseMatrix(s.rows(), rank), DenseMatrix(rank, s.cols())};
  for (std::size_t k = 0; k < rank; ++k) {
    const double root = std::sqrt(t.sigma[k]);
    for (std::size_t i = 0; i < s.rows(); ++i) f.b(i, k) = t.u(i, k) * root;
    for (std::size_t j = 0; j < s.cols(); ++j) f.a(k, j) = root * t.vt(k, j);
  }
  return f;
}

/// Same factors as init_from_svd(expand_scales(s), rank), computed from the
/// small n x (m/B) scale matrix. expand(C) = (sqrt(B) C)(E / sqrt(B)) where
/// E / sqrt(B) has orthonormal rows, so only sqrt(B) C needs an SVD. Jacobi
/// on the expanded, rank-deficient matrix converges very slowly.
inline FactorPair init_from_block_scales(const BlockScales& s, std::size_t rank) {
  const std::size_t groups = s.scales.cols();
  if (rank > std::min(s.scales.rows(), groups)) return init_from_svd(expand_scales(s), rank);
  const double root_block = std::sqrt(static_cast<double>(s.block_size));
  const SvdResult t = truncated_svd(scaled(s.scales, root_block), rank);
  FactorPair f{DenseMatrix(s.scales.rows(), rank), DenseMatrix(rank, groups * s.block_size)};
  for (std::size_t k = 0; k < rank; ++k) {
    const double root = std::sqrt(t.sigma[k]);
    for (std::size_t i = 0; i < s.scales.rows(); ++i) f.b(i, k) = t.u(i, k) * root;
    for (std::size_t g = 0; g < groups; ++g)
      for (std::size_t j = 0; j < s.block_size; ++j) f.a(k, g * s.block_size + j) = root * t.vt(k, g) / root_block;
  }
  return f;
}

inline std::vector<CodeIndex> quantization_step(const DenseMatrix& w, const FactorPair& f, const Codebook& cb) {
  return quantize_against_scale(w, f.product(), cb);
}

/// Gradients of L = ||W - (BA) (.) Q||_F^2 with Q frozen:
/// dL/dS = -2 R (.) Q, dL/dB = dL/dS A^T, dL/dA = B^T dL/dS.
inline FactorGradients adaptation_gradients(const DenseMatrix& w, const FactorPair& f,
                                            std::span<const CodeIndex> codes, const Codebook& cb) {
  const DenseMatrix q = level_matrix(codes, cb, w.rows(), w.cols());
  const DenseMatrix s = f.product();
  require_same_shape(w, s, "adaptation gradients");
  DenseMatrix grad_s(w.rows(), w.cols());
  auto gd = grad_s.data();
  auto wd = w.data();
  auto sd = s.data();
  auto qd = q.data();
  for (std::size_t k = 0; k < gd.size(); ++k) gd[k] = -2.0 * (wd[k] - sd[k] * qd[k]) * qd[k];
  return {matmul(grad_s, transpose(f.a)), matmul(transpose(f.b), grad_s)};
}

inline DenseMatrix scaled_reconstruction(const DenseMatrix& s, std::span<const CodeIndex> codes, const Codebook& cb) {
  return hadamard(level_matrix(codes, cb, s.rows(), s.cols()), s);
}

inline RefineResult refine(const DenseMatrix& w, const RefineConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  if (!(cfg.learning_rate > 0.0)) throw Error(ErrorCode::kInvalidArgument, "learning rate must be positive");
  if (cfg.rank < 1 || cfg.rank > std::min(w.rows(), w.cols())) {
    throw Error(ErrorCode::kInvalidRank, "rank " + std::to_string(cfg.rank) + " invalid for " + shape_string(w));
  }
  const Codebook cb = build_codebook(cfg.codebook);
  const std::size_t block = cfg.init_block_size == 0 ? init_block_size(w.cols(), cfg.rank) : cfg.init_block_size;

  RefineResult out{init_from_block_scales(compute_block_scales(w, block), cfg.rank), {}, {}};
  FactorPair& f = out.factors;
  RefineReport& report = out.report;

  DenseMatrix s = f.product();
  out.codes = quantize_against_scale(w, s, cb);
  {
    const DenseMatrix residual = subtract(w, scaled_reconstruction(s, out.codes, cb));
    report.frob_trace.push_back(frobenius_norm(residual));
    report.initial_nuclear = nuclear_norm(residual);
  }

  AdamWState opt{cfg.adamw, 0, {}, {}};
  report.frob_trace.reserve(cfg.steps + 1);
  report.requantized_trace.reserve(cfg.steps);
  for (std::size_t t = 0; t < cfg.steps; ++t) {
    out.codes = quantize_against_scale(w, s, cb);
    report.requantized_trace.push_back(frobenius_norm(subtract(w, scaled_reconstruction(s, out.codes, cb))));

    FactorGradients g = adaptation_gradients(w, f, out.codes, cb);
    DenseMatrix* params[] = {&f.b, &f.a};
    const DenseMatrix* grads[] = {&g.b, &g.a};
    adamw_step(opt, params, grads, cfg.learning_rate);

    s = f.product();
    report.frob_trace.push_back(frobenius_norm(subtract(w, scaled_reconstruction(s, out.codes, cb))));
    if (!std::isfinite(report.frob_trace.back())) {
      throw Error(ErrorCode::kDivergence, "refinement error became non-finite at step " + std::to_string(t + 1));
    }
  }

  // Re-synchronize codes with the final factors so the artifact is self-consistent.
  out.codes = quantize_against_scale(w, s, cb);
  const DenseMatrix residual = subtract(w, scaled_reconstruction(s, out.codes, cb));
  report.final_frob = frobenius_norm(residual);
  report.final_nuclear = nuclear_norm(residual);
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

inline QuantizedTensor to_quantized(const DenseMatrix& w, const RefineResult& r, CodebookId codebook) {
  return {w.rows(), w.cols(), codebook, r.codes, r.factors};
}

/// CSV with columns iter,frob_error followed by one footer row
/// `nuclear,<before>,<after>`.
inline void write_report_csv(const RefineReport& report, std::ostream& os) {
  const auto old_precision = os.precision(17);
  os << "iter,frob_error\n";
  for (std::size_t i = 0; i < report.frob_trace.size(); ++i) os << i << ',' << report.frob_trace[i] << '\n';
  os << "nuclear," << report.initial_nuclear << ',' << report.final_nuclear << '\n';
  os.precision(old_precision);
}

}  // namespace lords
