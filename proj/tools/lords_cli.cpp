// lords: command-line front end for block-wise and low-rank-scaled
// quantization. Results go to stdout as CSV or single values; diagnostics
// go to stderr as one line.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lords/lords.hpp"

namespace {

enum ExitCode : int {
  kOk = 0,
  kUsage = 2,
  kBadInput = 3,
  kIoFailure = 4,
  kFormat = 5,
  kNumeric = 6,
  kInternal = 7,
};

int exit_code_for(lords::ErrorCode code) {
  using lords::ErrorCode;
  switch (code) {
    case ErrorCode::kShapeMismatch:
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kNotDivisible:
    case ErrorCode::kInvalidRank:
    case ErrorCode::kBadRepr:
      return kBadInput;
    case ErrorCode::kIo:
      return kIoFailure;
    case ErrorCode::kBadMagic:
    case ErrorCode::kBadVersion:
    case ErrorCode::kTruncated:
    case ErrorCode::kUnsupportedDtype:
    case ErrorCode::kBadCodebook:
    case ErrorCode::kTrailingBytes:
    case ErrorCode::kNonFinite:
      return kFormat;
    case ErrorCode::kNoConvergence:
    case ErrorCode::kDivergence:
    case ErrorCode::kUndefinedRatio:
    case ErrorCode::kBoundaryProximity:
      return kNumeric;
  }
  return kInternal;
}

std::size_t parse_rank(const std::string& text, std::size_t rows, std::size_t cols, std::size_t block_size) {
  if (text == "auto") return lords::equivalent_rank(rows, cols, block_size);
  std::size_t used = 0;
  unsigned long long value = 0;
  try {
    value = std::stoull(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != text.size() || value == 0) {
    throw lords::Error(lords::ErrorCode::kInvalidRank, "--rank must be 'auto' or a positive integer, got '" + text + "'");
  }
  return static_cast<std::size_t>(value);
}

lords::FactorPair read_tuned(const std::string& b_path, const std::string& a_path) {
  return {lords::read_tensor(b_path), lords::read_tensor(a_path)};
}

const lords::FactorPair& base_factors(const lords::QuantizedTensor& q) {
  const auto* f = std::get_if<lords::FactorPair>(&q.scales);
  if (f == nullptr) throw lords::Error(lords::ErrorCode::kBadRepr, "base artifact must hold a factor pair");
  return *f;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Block-wise and low-rank decomposed scaling quantization"};
  app.require_subcommand(1);

  std::string in_path, out_path, report_path, codebook = "nf4", rank_text = "auto", format = "csv";
  std::size_t block_size = 128, steps = 500, rows = 0, cols = 0, adapter_rank = 0, layers = 0;
  double lr = 0.05, rel_tol = lords::kDefaultRankTolerance;
  std::uint64_t seed = 0;
  std::string bits, weights_path, base_path, tuned_b, tuned_a;
  std::vector<std::string> artifacts;

  auto* quantize = app.add_subcommand("quantize", "Block-wise absmax quantization");
  quantize->add_option("--in", in_path, "Input tensor (.lrt)")->required();
  quantize->add_option("--codebook", codebook, "nf4 | nf2 | int4s")->check(CLI::IsMember({"nf4", "nf2", "int4s"}));
  quantize->add_option("--block-size", block_size, "Elements per block");
  quantize->add_option("--out", out_path, "Output artifact (.lrq)")->required();

  auto* refine = app.add_subcommand("refine", "SVD-initialized low-rank scales with alternating refinement");
  refine->add_option("--in", in_path, "Input tensor (.lrt)")->required();
  refine->add_option("--codebook", codebook, "nf4 | nf2 | int4s")->check(CLI::IsMember({"nf4", "nf2", "int4s"}));
  refine->add_option("--rank", rank_text, "'auto' (budget-matched to --block-size) or an integer");
  refine->add_option("--block-size", block_size, "Block size whose scale budget 'auto' matches");
  refine->add_option("--steps", steps, "Refinement iterations");
  refine->add_option("--lr", lr, "AdamW learning rate");
  refine->add_option("--out", out_path, "Output artifact (.lrq)")->required();
  refine->add_option("--report", report_path, "Per-iteration error trace (.csv)");

  auto* dequant = app.add_subcommand("dequantize", "Reconstruct a dense tensor from an artifact");
  dequant->add_option("--in", in_path, "Input artifact (.lrq)")->required();
  dequant->add_option("--out", out_path, "Output tensor (.lrt)")->required();

  auto* error_report = app.add_subcommand("error-report", "Compare artifacts against an NF4 block-wise baseline");
  error_report->add_option("--weights", weights_path, "Original tensor (.lrt)")->required();
  error_report->add_option("--artifacts", artifacts, "Artifacts (.lrq)")->required();
  error_report->add_option("--format", format, "csv | md")->check(CLI::IsMember({"csv", "md"}));
  error_report->add_option("--block-size", block_size, "Block size of the NF4 baseline");

  auto* rank_plan = app.add_subcommand("rank-plan", "Budget-matched rank for a shape and block size");
  rank_plan->add_option("--rows", rows)->required();
  rank_plan->add_option("--cols", cols)->required();
  rank_plan->add_option("--block-size", block_size)->required();
  rank_plan->add_option("--adapter-rank", adapter_rank, "Adapter rank added for parameter alignment");

  auto* mixed_plan = app.add_subcommand("mixed-plan", "Per-layer NF4/NF2 assignment");
  mixed_plan->add_option("--layers", layers)->required();
  mixed_plan->add_option("--bits", bits, "3 | 2.5 | 2.25 | 2")->required();

  auto* qat_demo = app.add_subcommand("qat-demo", "Toy fake-quantized regression: joint vs weights-only training");
  qat_demo->add_option("--seed", seed);
  qat_demo->add_option("--steps", steps);
  lords::QatConfig qat_defaults;
  double qat_lr = qat_defaults.learning_rate;
  qat_demo->add_option("--lr", qat_lr);
  qat_demo->add_option("--out", out_path, "Loss trace (.csv)")->required();

  auto* peft_merge = app.add_subcommand("peft-merge", "Replace an artifact's scale factors with tuned ones");
  peft_merge->add_option("--base", base_path)->required();
  peft_merge->add_option("--tuned-b", tuned_b)->required();
  peft_merge->add_option("--tuned-a", tuned_a)->required();
  peft_merge->add_option("--out", out_path)->required();

  auto* delta_rank = app.add_subcommand("delta-rank", "Singular spectrum of the multiplicative weight update");
  delta_rank->add_option("--base", base_path)->required();
  delta_rank->add_option("--tuned-b", tuned_b)->required();
  delta_rank->add_option("--tuned-a", tuned_a)->required();
  delta_rank->add_option("--out", out_path, "Spectrum (.csv)")->required();
  delta_rank->add_option("--rel-tol", rel_tol, "Relative threshold for the effective rank");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }

  std::cout << std::setprecision(17);
  try {
    if (quantize->parsed()) {
      const auto w = lords::read_tensor(in_path);
      lords::write_packed(lords::blockwise_quantize(w, block_size, lords::build_codebook(lords::parse_codebook(codebook))),
                          out_path);
    } else if (refine->parsed()) {
      const auto w = lords::read_tensor(in_path);
      lords::RefineConfig cfg;
      cfg.codebook = lords::parse_codebook(codebook);
      cfg.rank = parse_rank(rank_text, w.rows(), w.cols(), block_size);
      cfg.steps = steps;
      cfg.learning_rate = lr;
      const auto result = lords::refine(w, cfg);
      lords::write_packed(lords::to_quantized(w, result, cfg.codebook), out_path);
      if (!report_path.empty()) {
        std::ofstream os(report_path);
        if (!os) throw lords::Error(lords::ErrorCode::kIo, "cannot open " + report_path);
        lords::write_report_csv(result.report, os);
      }
      std::cout << "rank,initial_frob,final_frob,initial_nuclear,final_nuclear\n"
                << cfg.rank << ',' << result.report.frob_trace.front() << ',' << result.report.final_frob << ','
                << result.report.initial_nuclear << ',' << result.report.final_nuclear << '\n';
    } else if (dequant->parsed()) {
      lords::write_tensor(lords::dequantize(lords::read_packed(in_path)), out_path);
    } else if (error_report->parsed()) {
      const auto w = lords::read_tensor(weights_path);
      const auto nf4 = lords::build_codebook(lords::CodebookId::kNF4);
      const double baseline =
          lords::quant_error_nuclear(w, lords::dequantize(lords::blockwise_quantize(w, block_size, nf4)));
      lords::ComparisonReport report;
      for (const auto& path : artifacts) {
        const auto q = lords::read_packed(path);
        if (q.rows != w.rows() || q.cols != w.cols()) {
          throw lords::Error(lords::ErrorCode::kShapeMismatch, path + " does not match the weights shape");
        }
        const std::string method = std::string(q.factored() ? "lords-" : "blockwise-") +
                                   std::string(lords::codebook_name(q.codebook));
        report.rows.push_back(lords::evaluate_artifact(std::filesystem::path(path).filename().string(), method, w, q,
                                                       baseline));
      }
      std::cout << (format == "md" ? report.to_markdown() : report.to_csv());
    } else if (rank_plan->parsed()) {
      std::cout << lords::aligned_rank(rows, cols, block_size, adapter_rank) << '\n';
    } else if (mixed_plan->parsed()) {
      const auto plan = lords::mixed_precision_plan(layers, lords::parse_mixed_precision(bits));
      std::cout << "layer,codebook\n";
      for (std::size_t i = 0; i < plan.size(); ++i) std::cout << i << ',' << lords::codebook_name(plan[i]) << '\n';
    } else if (qat_demo->parsed()) {
      const auto problem = lords::make_toy_qat_problem(seed);
      lords::QatConfig cfg;
      cfg.steps = steps;
      cfg.learning_rate = qat_lr;
      const auto joint = lords::toy_qat_train(problem.data, problem.layer, cfg);
      cfg.train_scales = false;
      const auto weights_only = lords::toy_qat_train(problem.data, problem.layer, cfg);
      std::ofstream os(out_path);
      if (!os) throw lords::Error(lords::ErrorCode::kIo, "cannot open " + out_path);
      os << std::setprecision(17) << "step,loss_joint,loss_weights_only\n";
      for (std::size_t i = 0; i < joint.loss.size(); ++i) {
        os << i << ',' << joint.loss[i] << ',' << weights_only.loss[i] << '\n';
      }
      if (!os) throw lords::Error(lords::ErrorCode::kIo, "write failed for " + out_path);
      if (!joint.loss.empty()) {
        std::cout << "final_joint,final_weights_only\n"
                  << joint.loss.back() << ',' << weights_only.loss.back() << '\n';
      }
    } else if (peft_merge->parsed()) {
      const auto base = lords::read_packed(base_path);
      lords::write_packed(lords::merge_tuned(base, read_tuned(tuned_b, tuned_a)), out_path);
    } else if (delta_rank->parsed()) {
      const auto base = lords::read_packed(base_path);
      const auto tuned = read_tuned(tuned_b, tuned_a);
      const auto cb = lords::build_codebook(base.codebook);
      const auto delta = lords::peft_delta(base.codes, cb, base_factors(base), tuned);
      const auto sigma = lords::singular_values(delta);
      std::ofstream os(out_path);
      if (!os) throw lords::Error(lords::ErrorCode::kIo, "cannot open " + out_path);
      os << std::setprecision(17) << "index,sigma\n";
      for (std::size_t i = 0; i < sigma.size(); ++i) os << i << ',' << sigma[i] << '\n';
      if (!os) throw lords::Error(lords::ErrorCode::kIo, "write failed for " + out_path);
      std::cout << lords::effective_rank(delta, rel_tol) << '\n';
    }
  } catch (const lords::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInternal;
  }
  return kOk;
}
