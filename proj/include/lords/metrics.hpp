#pragma once

#include <algorithm>
#include <cstddef>
#include <iomanip>
#include <span>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "lords/blockwise.hpp"
#include "lords/codebook.hpp"
#include "lords/error.hpp"
#include "lords/matrix.hpp"
#include "lords/refine.hpp"

namespace lords {

inline double frob_error(const DenseMatrix& w, const DenseMatrix& w_hat) {
  require_same_shape(w, w_hat, "frob_error");
  return frobenius_norm(subtract(w, w_hat));
}

inline double quant_error_nuclear(const DenseMatrix& w, const DenseMatrix& w_hat) {
  require_same_shape(w, w_hat, "quant_error_nuclear");
  return nuclear_norm(subtract(w, w_hat));
}

inline double reduction_ratio_from_residuals(double method_nuclear, double baseline_nuclear) {
  if (baseline_nuclear == 0.0) throw Error(ErrorCode::kUndefinedRatio, "baseline residual is zero");
  return 1.0 - method_nuclear / baseline_nuclear;
}

/// 1 - ||W - W_method||_* / ||W - W_nf4||_*; positive when the method beats the baseline.
inline double reduction_ratio(const DenseMatrix& w, const DenseMatrix& w_hat_method, const DenseMatrix& w_hat_nf4) {
  return reduction_ratio_from_residuals(quant_error_nuclear(w, w_hat_method), quant_error_nuclear(w, w_hat_nf4));
}

struct BlockwiseMethod {
  CodebookId codebook = CodebookId::kNF4;
  std::size_t block_size = 128;
};

/// rank == 0 selects equivalent_rank(rows, cols, block_size).
struct LordsMethod {
  CodebookId codebook = CodebookId::kNF4;
  std::size_t block_size = 128;
  std::size_t rank = 0;
  std::size_t steps = 500;
  double learning_rate = 0.05;
};

using MethodConfig = std::variant<BlockwiseMethod, LordsMethod>;

struct ReportRow {
  std::string matrix;
  std::string method;
  std::size_t block_size = 0;  // 0 for factored scales
  std::size_t rank = 0;        // 0 for block scales
  double float_params = 0.0;   // scale parameters only
  double frob = 0.0;
  double nuclear = 0.0;
  double ratio = 0.0;
};

struct ComparisonReport {
  std::vector<ReportRow> rows;

  std::string to_csv() const {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "matrix,method,block_size,rank,float_params,frob_error,nuclear_residual,reduction_ratio\n";
    for (const auto& r : rows) {
      os << r.matrix << ',' << r.method << ',' << r.block_size << ',' << r.rank << ',' << r.float_params << ','
         << r.frob << ',' << r.nuclear << ',' << r.ratio << '\n';
    }
    return os.str();
  }

  std::string to_markdown() const {
    const std::vector<std::string> header = {"matrix", "method", "block_size", "rank",
                                             "float_params", "frob_error", "nuclear_residual", "reduction_ratio"};
    std::vector<std::vector<std::string>> cells;
    for (const auto& r : rows) {
      auto num = [](double v) {
        std::ostringstream os;
        os << std::setprecision(6) << v;
        return os.str();
      };
      cells.push_back({r.matrix, r.method, std::to_string(r.block_size), std::to_string(r.rank), num(r.float_params),
                       num(r.frob), num(r.nuclear), num(r.ratio)});
    }
    std::vector<std::size_t> width(header.size());
    for (std::size_t c = 0; c < header.size(); ++c) {
      width[c] = header[c].size();
      for (const auto& row : cells) width[c] = std::max(width[c], row[c].size());
    }
    std::ostringstream os;
    auto emit = [&](const std::vector<std::string>& row) {
      os << '|';
      for (std::size_t c = 0; c < row.size(); ++c) os << ' ' << std::setw(static_cast<int>(width[c])) << std::left << row[c] << " |";
      os << '\n';
    };
    emit(header);
    os << '|';
    for (std::size_t c = 0; c < header.size(); ++c) os << std::string(width[c] + 2, '-') << '|';
    os << '\n';
    for (const auto& row : cells) emit(row);
    return os.str();
  }
};

/// Row for an already-quantized artifact against a precomputed baseline residual.
inline ReportRow evaluate_artifact(const std::string& matrix, const std::string& method, const DenseMatrix& w,
                                   const QuantizedTensor& q, double baseline_nuclear) {
  const DenseMatrix w_hat = dequantize(q);
  ReportRow row{matrix, method, q.block_size(), q.rank(), 0.0, frob_error(w, w_hat), quant_error_nuclear(w, w_hat), 0.0};
  row.float_params = q.factored() ? static_cast<double>(factor_float_params(q.rows, q.cols, q.rank()))
                                  : static_cast<double>(block_float_params(q.rows, q.cols, q.block_size()));
  row.ratio = reduction_ratio_from_residuals(row.nuclear, baseline_nuclear);
  return row;
}

inline std::string method_label(const MethodConfig& config) {
  if (const auto* b = std::get_if<BlockwiseMethod>(&config)) {
    return "blockwise-" + std::string(codebook_name(b->codebook));
  }
  return "lords-" + std::string(codebook_name(std::get<LordsMethod>(config).codebook));
}

inline QuantizedTensor run_method(const DenseMatrix& w, const MethodConfig& config) {
  if (const auto* b = std::get_if<BlockwiseMethod>(&config)) {
    return blockwise_quantize(w, b->block_size, build_codebook(b->codebook));
  }
  const auto& l = std::get<LordsMethod>(config);
  RefineConfig cfg;
  cfg.codebook = l.codebook;
  cfg.rank = l.rank != 0 ? l.rank : equivalent_rank(w.rows(), w.cols(), l.block_size);
  cfg.steps = l.steps;
  cfg.learning_rate = l.learning_rate;
  return to_quantized(w, refine(w, cfg), l.codebook);
}

/// Per-matrix rows for every method, each scored against NF4 block-wise
/// quantization at baseline_block_size. With several matrices, one
/// unweighted-mean row per method follows, labelled "mean".
inline ComparisonReport comparison_report(std::span<const DenseMatrix> weights, std::span<const MethodConfig> configs,
                                          std::size_t baseline_block_size = 128) {
  if (weights.empty() || configs.empty()) throw Error(ErrorCode::kInvalidArgument, "report needs matrices and methods");
  ComparisonReport report;
  const Codebook nf4 = build_codebook(CodebookId::kNF4);
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const DenseMatrix& w = weights[i];
    const double baseline = quant_error_nuclear(w, dequantize(blockwise_quantize(w, baseline_block_size, nf4)));
    for (const auto& config : configs) {
      report.rows.push_back(evaluate_artifact(std::to_string(i), method_label(config), w, run_method(w, config), baseline));
    }
  }
  if (weights.size() > 1) {
    const std::size_t per = configs.size();
    const double count = static_cast<double>(weights.size());
    for (std::size_t c = 0; c < per; ++c) {
      ReportRow mean{"mean", report.rows[c].method, report.rows[c].block_size, report.rows[c].rank, 0, 0, 0, 0};
      for (std::size_t i = 0; i < weights.size(); ++i) {
        const ReportRow& r = report.rows[i * per + c];
        mean.float_params += r.float_params / count;
        mean.frob += r.frob / count;
        mean.nuclear += r.nuclear / count;
        mean.ratio += r.ratio / count;
      }
      report.rows.push_back(mean);
    }
  }
  return report;
}

}  // namespace lords
