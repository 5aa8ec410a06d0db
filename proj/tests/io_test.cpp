#include <gtest/gtest.h>

#include <filesystem>
#include <limits>

#include "lords/io.hpp"
#include "lords/random.hpp"
#include "lords/refine.hpp"

using namespace lords;

namespace {

ErrorCode code_of(const auto& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an error";
  return ErrorCode::kInvalidArgument;
}

class TempDir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = std::filesystem::temp_directory_path() /
           ("lords_io_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    std::filesystem::create_directories(dir_);
  }
  void TearDown() override { std::filesystem::remove_all(dir_); }
  std::filesystem::path dir_;
};

}  // namespace

TEST(TensorFormatTest, KnownByteLayout) {
  const auto bytes = encode_tensor(DenseMatrix{{1, 2}, {3, 4}});
  ASSERT_EQ(bytes.size(), kTensorHeaderSize + 16);
  const std::vector<std::uint8_t> header{'L', 'R', 'T', '1', 1, 0, 0, 0, 0, 2, 2, 0, 0, 0, 0, 0, 0, 0,
                                         2,   0,   0,   0,   0, 0, 0, 0};
  EXPECT_EQ(std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + 26), header);
  const std::vector<std::uint8_t> one{0x00, 0x00, 0x80, 0x3F};
  EXPECT_EQ(std::vector<std::uint8_t>(bytes.begin() + 26, bytes.begin() + 30), one);
}

TEST(TensorFormatTest, RoundTripIsBitExactForF32Values) {
  Rng rng(1);
  const auto m = round_to_f32(gaussian_matrix(7, 13, rng));
  EXPECT_EQ(decode_tensor(encode_tensor(m)), m);
  const auto bytes = encode_tensor(m);
  EXPECT_EQ(encode_tensor(decode_tensor(bytes)), bytes);
}

TEST(TensorFormatTest, RoundsToNearestEven) {
  // 1 + 2^-24 sits exactly between two floats; ties go to the even mantissa.
  const double tie = 1.0 + std::ldexp(1.0, -24);
  const auto back = decode_tensor(encode_tensor(DenseMatrix{{tie, 1.0 + 3 * std::ldexp(1.0, -24)}}));
  EXPECT_EQ(back(0, 0), 1.0);
  EXPECT_EQ(back(0, 1), 1.0 + std::ldexp(1.0, -22));
}

TEST(TensorFormatTest, DistinctErrorsForMalformedFiles) {
  const auto good = encode_tensor(DenseMatrix{{1, 2}, {3, 4}});
  auto truncated = good;
  truncated.pop_back();
  EXPECT_EQ(code_of([&] { decode_tensor(truncated); }), ErrorCode::kTruncated);
  auto magic = good;
  magic[0] = 'X';
  EXPECT_EQ(code_of([&] { decode_tensor(magic); }), ErrorCode::kBadMagic);
  auto version = good;
  version[4] = 2;
  EXPECT_EQ(code_of([&] { decode_tensor(version); }), ErrorCode::kBadVersion);
  auto dtype = good;
  dtype[8] = 1;
  EXPECT_EQ(code_of([&] { decode_tensor(dtype); }), ErrorCode::kUnsupportedDtype);
  auto trailing = good;
  trailing.push_back(0);
  EXPECT_EQ(code_of([&] { decode_tensor(trailing); }), ErrorCode::kTrailingBytes);
  auto huge = good;
  huge[17] = 0x40;  // rows * cols * 4 far beyond the payload
  EXPECT_EQ(code_of([&] { decode_tensor(huge); }), ErrorCode::kTruncated);
  auto nan = good;
  nan[26] = 0x00, nan[27] = 0x00, nan[28] = 0xC0, nan[29] = 0x7F;
  EXPECT_EQ(code_of([&] { decode_tensor(nan); }), ErrorCode::kNonFinite);
}

TEST(PackedFormatTest, BlockScalesRoundTrip) {
  Rng rng(2);
  const auto w = gaussian_matrix(6, 16, rng);
  for (auto id : {CodebookId::kNF4, CodebookId::kNF2, CodebookId::kINT4S}) {
    auto q = blockwise_quantize(w, 4, build_codebook(id));
    std::get<BlockScales>(q.scales).scales = round_to_f32(std::get<BlockScales>(q.scales).scales);
    const auto back = decode_packed(encode_packed(q));
    EXPECT_EQ(back.codes, q.codes);
    EXPECT_EQ(back.codebook, id);
    EXPECT_EQ(std::get<BlockScales>(back.scales).scales, std::get<BlockScales>(q.scales).scales);
    EXPECT_EQ(dequantize(back), dequantize(q));
  }
}

TEST(PackedFormatTest, FactorPairRoundTripAndLength) {
  Rng rng(3);
  const auto w = gaussian_matrix(5, 9, rng);
  RefineConfig cfg;
  cfg.rank = 2;
  cfg.steps = 10;
  cfg.init_block_size = 3;
  const auto r = refine(w, cfg);
  QuantizedTensor q = to_quantized(w, r, CodebookId::kNF4);
  auto& f = std::get<FactorPair>(q.scales);
  f.b = round_to_f32(f.b);
  f.a = round_to_f32(f.a);
  const auto bytes = encode_packed(q);
  EXPECT_EQ(bytes.size(), 26u + 4 + 4 * (5 * 2 + 2 * 9) + (45 * 4 + 7) / 8);
  const auto back = decode_packed(bytes);
  EXPECT_EQ(back.codes, q.codes);
  EXPECT_EQ(std::get<FactorPair>(back.scales), f);
  EXPECT_EQ(dequantize(back), dequantize(q));
}

TEST(PackedFormatTest, MalformedFilesAreRejected) {
  Rng rng(4);
  const auto q = blockwise_quantize(gaussian_matrix(4, 8, rng), 4, build_codebook(CodebookId::kNF4));
  const auto good = encode_packed(q);
  auto codebook = good;
  codebook[8] = 9;
  EXPECT_EQ(code_of([&] { decode_packed(codebook); }), ErrorCode::kBadCodebook);
  auto repr = good;
  repr[9] = 5;
  EXPECT_EQ(code_of([&] { decode_packed(repr); }), ErrorCode::kBadRepr);
  auto block = good;
  block[26] = 3;
  EXPECT_EQ(code_of([&] { decode_packed(block); }), ErrorCode::kNotDivisible);
  auto truncated = good;
  truncated.resize(good.size() - 1);
  EXPECT_EQ(code_of([&] { decode_packed(truncated); }), ErrorCode::kTruncated);
  auto trailing = good;
  trailing.push_back(0);
  EXPECT_EQ(code_of([&] { decode_packed(trailing); }), ErrorCode::kTrailingBytes);
  // NF2 codes index only 4 levels, so a 4-bit stream read as NF2 changes the
  // payload length and is caught as trailing data.
  auto nf2 = good;
  nf2[8] = 1;
  EXPECT_EQ(code_of([&] { decode_packed(nf2); }), ErrorCode::kTrailingBytes);
}

TEST_F(TempDir, FilesRoundTripAndWritesAreAtomic) {
  Rng rng(5);
  const auto m = round_to_f32(gaussian_matrix(3, 8, rng));
  write_tensor(m, dir_ / "w.lrt");
  EXPECT_EQ(read_tensor(dir_ / "w.lrt"), m);
  EXPECT_FALSE(std::filesystem::exists(dir_ / "w.lrt.tmp"));

  const auto q = blockwise_quantize(m, 4, build_codebook(CodebookId::kINT4S));
  write_packed(q, dir_ / "q.lrq");
  write_packed(q, dir_ / "q2.lrq");
  EXPECT_EQ(read_file(dir_ / "q.lrq"), read_file(dir_ / "q2.lrq"));
  EXPECT_EQ(read_packed(dir_ / "q.lrq").codes, q.codes);

  EXPECT_EQ(code_of([&] { read_tensor(dir_ / "missing.lrt"); }), ErrorCode::kIo);
  EXPECT_EQ(code_of([&] { write_tensor(m, dir_ / "no_such_dir" / "w.lrt"); }), ErrorCode::kIo);
}

TEST_F(TempDir, RefinedArtifactIsByteIdenticalAcrossRuns) {
  Rng rng(6);
  const auto w = round_to_f32(gaussian_matrix(16, 32, rng));
  RefineConfig cfg;
  cfg.rank = 2;
  cfg.steps = 50;
  write_packed(to_quantized(w, refine(w, cfg), CodebookId::kNF4), dir_ / "a.lrq");
  write_packed(to_quantized(w, refine(w, cfg), CodebookId::kNF4), dir_ / "b.lrq");
  EXPECT_EQ(read_file(dir_ / "a.lrq"), read_file(dir_ / "b.lrq"));
}
