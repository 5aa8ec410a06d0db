#pragma once

// Fake quantization with straight-through gradients for jointly training
// weights and low-rank scale factors.
//
// Forward:  Q = Round(W / S), W_hat = Q (.) S, with S = BA.
// Backward: dL/dW ~= dL/dW_hat                 (rounding treated as identity)
//           dL/dS ~= dL/dW_hat (.) (Q - W / S)
// and dL/dB, dL/dA follow from S = BA by the chain rule.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "lords/blockwise.hpp"
#include "lords/codebook.hpp"
#include "lords/error.hpp"
#include "lords/matrix.hpp"
#include "lords/random.hpp"
#include "lords/refine.hpp"

namespace lords {

/// Smallest scale magnitude used when dividing by S.
inline constexpr double kScaleClamp = 1e-6;

/// Sign-preserving magnitude clamp; exact zeros go to +kScaleClamp.
inline double clamp_scale(double s) {
  if (std::abs(s) >= kScaleClamp) return s;
  return s < 0.0 ? -kScaleClamp : kScaleClamp;
}

struct FakeQuantCache {
  DenseMatrix q;      // level values
  DenseMatrix s;      // clamped scale matrix
  DenseMatrix ratio;  // W / S
};

struct FakeQuantResult {
  DenseMatrix w_hat;
  FakeQuantCache cache;
};

/// Ratio-rounding fake quantization against an explicit scale matrix.
inline FakeQuantResult fake_quant_with_scale(const DenseMatrix& w, const DenseMatrix& scale, const Codebook& cb) {
  require_same_shape(w, scale, "fake quant");
  FakeQuantResult out{DenseMatrix(w.rows(), w.cols()),
                      {DenseMatrix(w.rows(), w.cols()), DenseMatrix(w.rows(), w.cols()), DenseMatrix(w.rows(), w.cols())}};
  auto wd = w.data();
  auto sd = scale.data();
  auto hat = out.w_hat.data();
  auto qd = out.cache.q.data();
  auto cs = out.cache.s.data();
  auto ud = out.cache.ratio.data();
  for (std::size_t k = 0; k < wd.size(); ++k) {
    cs[k] = clamp_scale(sd[k]);
    ud[k] = wd[k] / cs[k];
    qd[k] = nearest_level(ud[k], cb).level;
    hat[k] = qd[k] * cs[k];
  }
  return out;
}

inline FakeQuantResult fake_quant_forward(const DenseMatrix& w, const FactorPair& f, const Codebook& cb) {
  return fake_quant_with_scale(w, f.product(), cb);
}

struct SteGradients {
  DenseMatrix w;
  DenseMatrix s;
  DenseMatrix b;
  DenseMatrix a;
};

inline SteGradients fake_quant_backward(const DenseMatrix& upstream, const FakeQuantCache& cache, const FactorPair& f) {
  require_same_shape(upstream, cache.q, "fake quant backward");
  DenseMatrix grad_s(upstream.rows(), upstream.cols());
  auto gd = grad_s.data();
  auto up = upstream.data();
  auto qd = cache.q.data();
  auto ud = cache.ratio.data();
  for (std::size_t k = 0; k < gd.size(); ++k) gd[k] = up[k] * (qd[k] - ud[k]);
  DenseMatrix grad_b = matmul(grad_s, transpose(f.a));
  DenseMatrix grad_a = matmul(transpose(f.b), grad_s);
  return {upstream, std::move(grad_s), std::move(grad_b), std::move(grad_a)};
}

/// Minimum distance, in ratio space, to a rounding boundary before the
/// local derivative check refuses an instance.
inline constexpr double kBoundaryMargin = 1e-4;

/// Checks by central differences that dW_hat/dS equals Q element-wise, the
/// exact local derivative of Round(W / S) (.) S away from rounding
/// boundaries. The straight-through dL/dS differs from this by -W / S.
inline bool local_dequant_derivative_check(const DenseMatrix& w, const FactorPair& f, const Codebook& cb) {
  const FakeQuantResult base = fake_quant_forward(w, f, cb);
  auto ud = base.cache.ratio.data();
  for (std::size_t k = 0; k < ud.size(); ++k) {
    for (std::size_t i = 1; i < cb.size(); ++i) {
      const double mid = 0.5 * (cb.levels[i - 1] + cb.levels[i]);
      if (std::abs(ud[k] - mid) < kBoundaryMargin) {
        throw Error(ErrorCode::kBoundaryProximity,
                    "element " + std::to_string(k) + " ratio " + std::to_string(ud[k]) + " is near a rounding boundary");
      }
    }
  }
  auto wd = w.data();
  auto sd = base.cache.s.data();
  auto qd = base.cache.q.data();
  for (std::size_t k = 0; k < wd.size(); ++k) {
    const double h = 1e-8 * std::abs(sd[k]);
    const double up = nearest_level(wd[k] / (sd[k] + h), cb).level * (sd[k] + h);
    const double down = nearest_level(wd[k] / (sd[k] - h), cb).level * (sd[k] - h);
    if (std::abs((up - down) / (2.0 * h) - qd[k]) > 1e-5) return false;
  }
  return true;
}

/// Linear regression data: rows of x are inputs (N x m), rows of y targets (N x n).
struct RegressionData {
  DenseMatrix x;
  DenseMatrix y;
};

struct QatLayer {
  DenseMatrix w;
  FactorPair factors;
};

struct QatConfig {
  double learning_rate = 0.002;
  std::size_t steps = 500;
  bool train_scales = true;
  CodebookId codebook = CodebookId::kINT4S;
};

struct QatResult {
  std::vector<double> loss;  // loss before each update, length steps
  QatLayer layer;
};

/// Plain SGD on mean squared error of y = W_hat x through fake quantization.
inline QatResult toy_qat_train(const RegressionData& data, QatLayer layer, const QatConfig& cfg) {
  if (data.x.rows() != data.y.rows()) throw Error(ErrorCode::kShapeMismatch, "x and y sample counts differ");
  if (data.x.cols() != layer.w.cols() || data.y.cols() != layer.w.rows()) {
    throw Error(ErrorCode::kShapeMismatch, "layer " + shape_string(layer.w) + " does not fit data");
  }
  if (!(cfg.learning_rate >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "learning rate must be >= 0");
  const Codebook cb = build_codebook(cfg.codebook);
  const double norm = 1.0 / static_cast<double>(data.y.size());

  QatResult out{{}, std::move(layer)};
  out.loss.reserve(cfg.steps);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const FakeQuantResult fq = fake_quant_forward(out.layer.w, out.layer.factors, cb);
    const DenseMatrix err = subtract(matmul(data.x, transpose(fq.w_hat)), data.y);
    double loss = 0.0;
    for (double e : err.data()) loss += e * e;
    loss *= norm;
    if (!std::isfinite(loss)) throw Error(ErrorCode::kDivergence, "QAT loss is not finite at step " + std::to_string(step));
    out.loss.push_back(loss);

    const DenseMatrix upstream = scaled(matmul(transpose(err), data.x), 2.0 * norm);
    const SteGradients g = fake_quant_backward(upstream, fq.cache, out.layer.factors);
    for (std::size_t k = 0; k < g.w.size(); ++k) out.layer.w.data()[k] -= cfg.learning_rate * g.w.data()[k];
    if (cfg.train_scales) {
      for (std::size_t k = 0; k < g.b.size(); ++k) out.layer.factors.b.data()[k] -= cfg.learning_rate * g.b.data()[k];
      for (std::size_t k = 0; k < g.a.size(); ++k) out.layer.factors.a.data()[k] -= cfg.learning_rate * g.a.data()[k];
    }
  }
  return out;
}

struct ToyQatProblem {
  RegressionData data;
  QatLayer layer;
};

/// Teacher W* ~ N(0, 1); the student starts at W* with scale factors from
/// the truncated SVD of its absmax block statistics.
inline ToyQatProblem make_toy_qat_problem(std::uint64_t seed, std::size_t rows = 16, std::size_t cols = 64,
                                          std::size_t rank = 1, std::size_t samples = 256) {
  Rng rng(seed);
  DenseMatrix teacher = gaussian_matrix(rows, cols, rng);
  DenseMatrix x = gaussian_matrix(samples, cols, rng);
  DenseMatrix y = matmul(x, transpose(teacher));
  FactorPair f = init_from_block_scales(compute_block_scales(teacher, init_block_size(cols, rank)), rank);
  return {{std::move(x), std::move(y)}, {std::move(teacher), std::move(f)}};
}

/// Teacher lies exactly on the student's quantization grid; the student
/// weights start from a perturbation of it.
inline ToyQatProblem make_representable_qat_problem(std::uint64_t seed, CodebookId codebook = CodebookId::kINT4S,
                                                    std::size_t rows = 16, std::size_t cols = 64, std::size_t rank = 1,
                                                    std::size_t samples = 256, double noise = 0.1) {
  ToyQatProblem p = make_toy_qat_problem(seed, rows, cols, rank, samples);
  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  const Codebook cb = build_codebook(codebook);
  const DenseMatrix s = p.layer.factors.product();
  std::uniform_int_distribution<std::size_t> pick(0, cb.size() - 1);
  DenseMatrix teacher(rows, cols);
  for (std::size_t k = 0; k < teacher.size(); ++k) teacher.data()[k] = clamp_scale(s.data()[k]) * cb.levels[pick(rng)];
  p.data.y = matmul(p.data.x, transpose(teacher));
  p.layer.w = add(teacher, gaussian_matrix(rows, cols, rng, noise));
  return p;
}

}  // namespace lords
