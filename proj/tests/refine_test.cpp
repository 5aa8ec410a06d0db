#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "lords/random.hpp"
#include "lords/refine.hpp"
#include "oracles.hpp"

using namespace lords;

namespace {

double tail_norm(const DenseMatrix& m, std::size_t from) {
  const auto sigma = singular_values(m);
  double sum = 0.0;
  for (std::size_t i = from; i < sigma.size(); ++i) sum += sigma[i] * sigma[i];
  return std::sqrt(sum);
}

}  // namespace

TEST(InitBlockSizeTest, DivisorRule) {
  EXPECT_EQ(init_block_size(64, 2), 32u);
  EXPECT_EQ(init_block_size(128, 2), 64u);
  EXPECT_EQ(init_block_size(12, 5), 2u);
  EXPECT_EQ(init_block_size(7, 7), 1u);
  EXPECT_THROW(init_block_size(8, 0), Error);
  EXPECT_THROW(init_block_size(8, 9), Error);
}

TEST(InitFromSvdTest, ConstantScaleRankOne) {
  const auto s = DenseMatrix::filled(5, 8, 0.75);
  const auto f = init_from_svd(s, 1);
  EXPECT_LT(oracle::max_abs_diff(f.product(), s), 1e-10);
}

TEST(InitFromSvdTest, RecoversExpandedBlockScales) {
  Rng rng(4);
  for (std::size_t block : {8u, 16u, 32u}) {
    const auto s = expand_scales({uniform_matrix(32, 64 / block, rng, 0.1, 3.0), block});
    const auto f = init_from_svd(s, 64 / block);
    EXPECT_LE(frobenius_norm(subtract(f.product(), s)), 1e-8 * frobenius_norm(s));
  }
}

TEST(InitFromSvdTest, CompressedRouteMatchesExpandedSvd) {
  Rng rng(5);
  for (std::size_t rank : {1u, 2u, 4u}) {
    const BlockScales scales{uniform_matrix(24, 8, rng, 0.1, 3.0), 4};
    const auto fast = init_from_block_scales(scales, rank);
    const auto slow = init_from_svd(expand_scales(scales), rank);
    EXPECT_LT(oracle::max_abs_diff(fast.product(), slow.product()), 1e-10);
    EXPECT_LT(oracle::max_abs_diff(fast.b, slow.b), 1e-8);
  }
  // More rank than groups falls back to the expanded matrix.
  const BlockScales narrow{uniform_matrix(6, 2, rng, 0.1, 3.0), 4};
  EXPECT_EQ(init_from_block_scales(narrow, 3).b.cols(), 3u);
}

TEST(InitFromSvdTest, TruncationLeavesTailNorm) {
  Rng rng(6);
  const auto s = uniform_matrix(20, 24, rng, 0.0, 1.0);
  const auto f = init_from_svd(s, 3);
  EXPECT_EQ(f.b.cols(), 3u);
  EXPECT_NEAR(frobenius_norm(subtract(s, f.product())), tail_norm(s, 3), 1e-9);
}

TEST(QuantizationStepTest, ReducesToBaselineWithBlockScales) {
  Rng rng(7);
  const auto w = gaussian_matrix(16, 32, rng);
  const auto cb = build_codebook(CodebookId::kNF4);
  const auto scales = compute_block_scales(w, 8);
  FactorPair f{expand_scales(scales), DenseMatrix::identity(32)};
  EXPECT_EQ(quantization_step(w, f, cb), blockwise_quantize(w, 8, cb).codes);
}

TEST(QuantizationStepTest, RepresentableWeightsGiveZeroResidual) {
  Rng rng(8);
  const auto cb = build_codebook(CodebookId::kNF4);
  FactorPair f{uniform_matrix(6, 2, rng, 0.5, 1.0), uniform_matrix(2, 10, rng, 0.5, 1.0)};
  const auto s = f.product();
  std::uniform_int_distribution<int> pick(0, 15);
  std::vector<CodeIndex> truth(60);
  for (auto& c : truth) c = static_cast<CodeIndex>(pick(rng));
  const auto w = scaled_reconstruction(s, truth, cb);
  const auto codes = quantization_step(w, f, cb);
  EXPECT_EQ(codes, truth);
  EXPECT_EQ(frobenius_norm(subtract(w, scaled_reconstruction(s, codes, cb))), 0.0);
}

TEST(QuantizationStepTest, MatchesElementLoopOracle) {
  Rng rng(9);
  const auto w = gaussian_matrix(32, 64, rng);
  const FactorPair f{gaussian_matrix(32, 3, rng), gaussian_matrix(3, 64, rng)};
  const auto s = f.product();
  const auto cb = build_codebook(CodebookId::kNF4);
  const auto codes = quantization_step(w, f, cb);
  for (std::size_t i = 0; i < 32; ++i)
    for (std::size_t j = 0; j < 64; ++j)
      ASSERT_EQ(codes[i * 64 + j], oracle::loop_scaled_argmin(w(i, j), s(i, j), cb.levels));
}

TEST(AdaptationGradientsTest, ZeroResidualGivesZeroGradients) {
  const auto cb = build_codebook(CodebookId::kINT4S);
  const FactorPair f{DenseMatrix{{1.0}, {2.0}}, DenseMatrix{{0.5, 1.0}}};
  const std::vector<CodeIndex> codes{14, 7, 0, 10};
  const auto w = scaled_reconstruction(f.product(), codes, cb);
  const auto g = adaptation_gradients(w, f, codes, cb);
  EXPECT_EQ(g.b, DenseMatrix(2, 1));
  EXPECT_EQ(g.a, DenseMatrix(1, 2));
}

TEST(AdaptationGradientsTest, ScalarHandDerivation) {
  const auto cb = build_codebook(CodebookId::kINT4S);
  const FactorPair f{DenseMatrix{{2.0}}, DenseMatrix{{1.0}}};
  const std::vector<CodeIndex> one{14};
  const auto g = adaptation_gradients(DenseMatrix{{3.0}}, f, one, cb);
  EXPECT_EQ(g.b(0, 0), -2.0);
  EXPECT_EQ(g.a(0, 0), -4.0);
}

TEST(AdaptationGradientsTest, MatchesCentralFiniteDifferences) {
  Rng rng(16);
  const auto cb = build_codebook(CodebookId::kNF4);
  const auto w = gaussian_matrix(16, 16, rng);
  FactorPair f{gaussian_matrix(16, 3, rng, 0.5), gaussian_matrix(3, 16, rng, 0.5)};
  const auto codes = quantization_step(w, f, cb);
  const auto q = level_matrix(codes, cb, 16, 16);
  const auto g = adaptation_gradients(w, f, codes, cb);
  const double h = 1e-6;
  auto check = [&](DenseMatrix& param, const DenseMatrix& grad) {
    for (std::size_t k = 0; k < param.size(); ++k) {
      const double saved = param.data()[k];
      param.data()[k] = saved + h;
      const double up = oracle::loop_objective(w, f.b, f.a, q);
      param.data()[k] = saved - h;
      const double down = oracle::loop_objective(w, f.b, f.a, q);
      param.data()[k] = saved;
      const double fd = (up - down) / (2 * h);
      EXPECT_NEAR(grad.data()[k], fd, 1e-5 * std::max(1.0, std::abs(fd)));
    }
  };
  check(f.b, g.b);
  check(f.a, g.a);
}

TEST(AdamWTest, FirstStepMovesByLearningRate) {
  DenseMatrix theta{{1.0}};
  const DenseMatrix g{{1.0}};
  AdamWState state{};
  DenseMatrix* p[] = {&theta};
  const DenseMatrix* gr[] = {&g};
  adamw_step(state, p, gr, 0.1);
  EXPECT_NEAR(theta(0, 0), 0.9, 1e-8);
  EXPECT_EQ(state.step, 1u);
}

TEST(AdamWTest, ZeroGradientLeavesParamsUnchanged) {
  DenseMatrix theta{{1.5, -2.0}};
  const DenseMatrix g(1, 2);
  AdamWState state{};
  DenseMatrix* p[] = {&theta};
  const DenseMatrix* gr[] = {&g};
  for (int i = 0; i < 5; ++i) adamw_step(state, p, gr, 0.1);
  EXPECT_EQ(theta, (DenseMatrix{{1.5, -2.0}}));
}

TEST(AdamWTest, QuadraticMatchesScalarReference) {
  DenseMatrix theta{{1.0}};
  AdamWState state{};
  double ref = 1.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 100; ++t) {
    const DenseMatrix g{{2.0 * theta(0, 0)}};
    DenseMatrix* p[] = {&theta};
    const DenseMatrix* gr[] = {&g};
    adamw_step(state, p, gr, 0.1);

    const double gs = 2.0 * ref;
    m = 0.9 * m + 0.1 * gs;
    v = 0.999 * v + 0.001 * gs * gs;
    ref -= 0.1 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
  }
  EXPECT_NEAR(theta(0, 0), ref, 1e-12);
  EXPECT_LT(std::abs(theta(0, 0)), 0.2);
}

TEST(AdamWTest, WeightDecayIsDecoupled) {
  DenseMatrix theta{{2.0}};
  const DenseMatrix g(1, 1);
  AdamWState state{{0.9, 0.999, 1e-8, 0.5}, 0, {}, {}};
  DenseMatrix* p[] = {&theta};
  const DenseMatrix* gr[] = {&g};
  adamw_step(state, p, gr, 0.1);
  EXPECT_DOUBLE_EQ(theta(0, 0), 2.0 * (1 - 0.1 * 0.5));
}

TEST(RefineTest, ZeroStepsAtFullBlockRankEqualsBaseline) {
  Rng rng(10);
  const auto w = gaussian_matrix(32, 64, rng);
  const auto cb = build_codebook(CodebookId::kNF4);
  RefineConfig cfg;
  cfg.rank = 4;
  cfg.steps = 0;
  const auto r = refine(w, cfg);
  const auto base = blockwise_quantize(w, 16, cb);
  EXPECT_EQ(r.codes, base.codes);
  EXPECT_LE(oracle::max_abs_diff(dequantize(to_quantized(w, r, cb.id)), dequantize(base)), 1e-12);
  EXPECT_EQ(r.report.frob_trace.size(), 1u);
  EXPECT_TRUE(r.report.requantized_trace.empty());
}

TEST(RefineTest, DefaultsImproveOnInitAndBaseline) {
  Rng rng(64);
  const auto w = gaussian_matrix(64, 64, rng);
  RefineConfig cfg;
  cfg.rank = equivalent_rank(64, 64, 16);
  ASSERT_EQ(cfg.rank, 2u);
  const auto r = refine(w, cfg);
  ASSERT_EQ(r.report.frob_trace.size(), 501u);
  ASSERT_EQ(r.report.requantized_trace.size(), 500u);
  EXPECT_LE(r.report.final_frob, r.report.frob_trace.front());
  const auto base = dequantize(blockwise_quantize(w, 16, build_codebook(CodebookId::kNF4)));
  EXPECT_LE(r.report.final_frob, frobenius_norm(subtract(w, base)));
}

TEST(RefineTest, QuantizationStepNeverIncreasesError) {
  Rng rng(12);
  const auto w = gaussian_matrix(32, 32, rng);
  RefineConfig cfg;
  cfg.rank = 2;
  cfg.steps = 100;
  const auto r = refine(w, cfg);
  for (std::size_t t = 0; t < cfg.steps; ++t) EXPECT_LE(r.report.requantized_trace[t], r.report.frob_trace[t] + 1e-9);
}

// The fixed point holds only when the init reproduces S bit for bit; any
// round-off left in the residual is rescaled to step size lr by AdamW. Both
// inputs below have SVDs that are exact in floating point.
TEST(RefineTest, RepresentableWeightsStayExact) {
  const auto cb = build_codebook(CodebookId::kNF4);
  std::vector<DenseMatrix> inputs;
  DenseMatrix row(1, 16);
  for (std::size_t j = 0; j < 16; ++j) row(0, j) = 4.0 * cb.levels[(j * 5) % 16];
  row(0, 3) = -4.0;
  inputs.push_back(row);
  inputs.push_back(DenseMatrix{{4, 0, 0, 0}, {0, -16, 0, 0}, {0, 0, 1, 0}, {0, 0, 0, 0.25}});
  for (const auto& w : inputs) {
    RefineConfig cfg;
    cfg.rank = w.rows();
    cfg.steps = 50;
    const auto r = refine(w, cfg);
    for (double e : r.report.frob_trace) EXPECT_EQ(e, 0.0);
    EXPECT_EQ(r.report.final_frob, 0.0);
  }
}

TEST(RefineTest, GenericRepresentableWeightsStartNearZero) {
  Rng rng(13);
  const auto cb = build_codebook(CodebookId::kNF4);
  const auto col = uniform_matrix(8, 1, rng, 0.5, 2.0);
  DenseMatrix w(8, 16);
  std::uniform_int_distribution<int> pick(0, 14);
  for (std::size_t i = 0; i < 8; ++i) {
    for (std::size_t j = 0; j < 16; ++j) w(i, j) = col(i, 0) * cb.levels[pick(rng)];
    w(i, 0) = col(i, 0);
  }
  RefineConfig cfg;
  cfg.rank = 1;
  cfg.steps = 0;
  EXPECT_LT(refine(w, cfg).report.frob_trace.front(), 1e-12);
}

TEST(RefineTest, IsDeterministic) {
  Rng rng(14);
  const auto w = gaussian_matrix(24, 48, rng);
  RefineConfig cfg;
  cfg.rank = 3;
  cfg.steps = 40;
  const auto a = refine(w, cfg);
  const auto b = refine(w, cfg);
  EXPECT_EQ(a.factors, b.factors);
  EXPECT_EQ(a.codes, b.codes);
  EXPECT_EQ(a.report.frob_trace, b.report.frob_trace);
}

TEST(RefineTest, RejectsBadConfig) {
  const DenseMatrix w(4, 8);
  RefineConfig cfg;
  cfg.rank = 5;
  EXPECT_THROW(refine(w, cfg), Error);
  cfg.rank = 1;
  cfg.learning_rate = 0.0;
  EXPECT_THROW(refine(w, cfg), Error);
}

TEST(RefineTest, ReportCsvLayout) {
  RefineReport report;
  report.frob_trace = {2.0, 1.5};
  report.initial_nuclear = 3.0;
  report.final_nuclear = 2.5;
  std::ostringstream os;
  write_report_csv(report, os);
  EXPECT_EQ(os.str(), "iter,frob_error\n0,2\n1,1.5\nnuclear,3,2.5\n");
}
