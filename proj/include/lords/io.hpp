#pragma once

// On-disk formats. Everything is little-endian; real values are stored as
// IEEE-754 binary32, rounded to nearest-even from the 64-bit working values.
//
// Tensor file (.lrt):
//   "LRT1" | u32 version=1 | u8 dtype=0 (f32) | u8 ndim=2 | u64 rows | u64 cols
//   | rows*cols f32, row-major
//
// Packed quantized file (.lrq):
//   "LRQ1" | u32 version=1 | u8 codebook (0 NF4, 1 NF2, 2 INT4S)
//   | u8 repr (0 block scales, 1 factor pair) | u64 rows | u64 cols
//   | repr 0: u32 block_size | rows*(cols/block_size) f32 scales
//   | repr 1: u32 rank | rows*rank f32 B | rank*cols f32 A
//   | ceil(rows*cols*bits/8) bytes of packed codes

#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lords/blockwise.hpp"
#include "lords/codebook.hpp"
#include "lords/error.hpp"
#include "lords/matrix.hpp"

namespace lords {

inline constexpr std::string_view kTensorMagic = "LRT1";
inline constexpr std::string_view kPackedMagic = "LRQ1";
inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr std::size_t kTensorHeaderSize = 26;

namespace detail {

class ByteWriter {
 public:
  void bytes(std::string_view s) { out_.insert(out_.end(), s.begin(), s.end()); }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(double v) { u32(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
  void matrix(const DenseMatrix& m) {
    for (double x : m.data()) f32(x);
  }
  void raw(std::span<const std::uint8_t> data) { out_.insert(out_.end(), data.begin(), data.end()); }

  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

  void expect_magic(std::string_view magic) {
    need(magic.size());
    if (std::memcmp(data_.data() + pos_, magic.data(), magic.size()) != 0) {
      throw Error(ErrorCode::kBadMagic, "expected '" + std::string(magic) + "'");
    }
    pos_ += magic.size();
  }
  std::uint8_t u8() {
    need(1);
    return data_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[pos_++]) << (8 * i);
    return v;
  }
  DenseMatrix matrix(std::uint64_t rows, std::uint64_t cols) {
    if (rows == 0 || cols == 0) throw Error(ErrorCode::kShapeMismatch, "zero dimension in file");
    if (rows > remaining() / 4 || cols > (remaining() / 4) / rows) {
      throw Error(ErrorCode::kTruncated, "payload for " + std::to_string(rows) + "x" + std::to_string(cols) +
                                             " needs more than the " + std::to_string(remaining()) +
                                             " remaining bytes");
    }
    std::vector<double> values(rows * cols);
    for (double& v : values) v = static_cast<double>(std::bit_cast<float>(u32()));
    return DenseMatrix(rows, cols, std::move(values));
  }
  std::span<const std::uint8_t> raw(std::size_t n) {
    need(n);
    auto out = data_.subspan(pos_, n);
    pos_ += n;
    return out;
  }
  std::size_t remaining() const noexcept { return data_.size() - pos_; }
  void expect_end() const {
    if (remaining() != 0) throw Error(ErrorCode::kTrailingBytes, std::to_string(remaining()) + " unexpected bytes");
  }

 private:
  void need(std::size_t n) const {
    if (remaining() < n) {
      throw Error(ErrorCode::kTruncated, "needed " + std::to_string(n) + " bytes at offset " + std::to_string(pos_) +
                                             ", have " + std::to_string(remaining()));
    }
  }

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

inline void check_version(std::uint32_t version) {
  if (version != kFormatVersion) throw Error(ErrorCode::kBadVersion, "version " + std::to_string(version));
}

inline std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v > 0xffffffffu) throw Error(ErrorCode::kInvalidArgument, std::string(what) + " does not fit in u32");
  return static_cast<std::uint32_t>(v);
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_tensor(const DenseMatrix& m) {
  detail::ByteWriter w;
  w.bytes(kTensorMagic);
  w.u32(kFormatVersion);
  w.u8(0);
  w.u8(2);
  w.u64(m.rows());
  w.u64(m.cols());
  w.matrix(m);
  return w.take();
}

inline DenseMatrix decode_tensor(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  r.expect_magic(kTensorMagic);
  detail::check_version(r.u32());
  const std::uint8_t dtype = r.u8();
  if (dtype != 0) throw Error(ErrorCode::kUnsupportedDtype, "dtype " + std::to_string(dtype));
  const std::uint8_t ndim = r.u8();
  if (ndim != 2) throw Error(ErrorCode::kUnsupportedDtype, "ndim " + std::to_string(ndim) + " (only 2 supported)");
  const std::uint64_t rows = r.u64();
  const std::uint64_t cols = r.u64();
  DenseMatrix m = r.matrix(rows, cols);
  r.expect_end();
  return m;
}

inline std::vector<std::uint8_t> encode_packed(const QuantizedTensor& q) {
  q.validate();
  detail::ByteWriter w;
  w.bytes(kPackedMagic);
  w.u32(kFormatVersion);
  w.u8(static_cast<std::uint8_t>(q.codebook));
  w.u8(q.factored() ? 1 : 0);
  w.u64(q.rows);
  w.u64(q.cols);
  if (const auto* f = std::get_if<FactorPair>(&q.scales)) {
    w.u32(detail::checked_u32(f->rank(), "rank"));
    w.matrix(f->b);
    w.matrix(f->a);
  } else {
    const auto& bs = std::get<BlockScales>(q.scales);
    w.u32(detail::checked_u32(bs.block_size, "block size"));
    w.matrix(bs.scales);
  }
  w.raw(pack_codes(q.codes, codebook_bits(q.codebook)));
  return w.take();
}

inline QuantizedTensor decode_packed(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  r.expect_magic(kPackedMagic);
  detail::check_version(r.u32());
  const CodebookId codebook = codebook_from_tag(r.u8());
  const std::uint8_t repr = r.u8();
  if (repr > 1) throw Error(ErrorCode::kBadRepr, "repr tag " + std::to_string(repr));
  const std::uint64_t rows = r.u64();
  const std::uint64_t cols = r.u64();
  if (rows == 0 || cols == 0) throw Error(ErrorCode::kShapeMismatch, "zero dimension in file");

  ScaleRepr scales = [&]() -> ScaleRepr {
    const std::uint32_t param = r.u32();
    if (repr == 1) {
      if (param == 0) throw Error(ErrorCode::kInvalidRank, "rank 0 in file");
      DenseMatrix b = r.matrix(rows, param);
      DenseMatrix a = r.matrix(param, cols);
      return FactorPair{std::move(b), std::move(a)};
    }
    if (param == 0 || cols % param != 0) {
      throw Error(ErrorCode::kNotDivisible, "block size " + std::to_string(param) + " in file");
    }
    return BlockScales{r.matrix(rows, cols / param), param};
  }();

  const int bits = codebook_bits(codebook);
  if (cols > std::numeric_limits<std::size_t>::max() / rows ||
      rows * cols > r.remaining() * (8 / static_cast<std::size_t>(bits))) {
    throw Error(ErrorCode::kTruncated, "code payload too short for " + std::to_string(rows) + "x" + std::to_string(cols));
  }
  const std::size_t count = rows * cols;
  auto codes = unpack_codes(r.raw(packed_size(count, bits)), count, bits);
  r.expect_end();
  QuantizedTensor q{rows, cols, codebook, std::move(codes), std::move(scales)};
  q.validate();
  return q;
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw Error(ErrorCode::kIo, "read failed for " + path.string());
  return data;
}

/// Writes to a sibling temporary file and renames it over the target.
inline void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> data) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIo, "cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    out.flush();
    if (!out) throw Error(ErrorCode::kIo, "write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw Error(ErrorCode::kIo, "cannot rename into " + path.string());
  }
}

inline DenseMatrix read_tensor(const std::filesystem::path& path) { return decode_tensor(read_file(path)); }

inline void write_tensor(const DenseMatrix& m, const std::filesystem::path& path) {
  write_file_atomic(path, encode_tensor(m));
}

inline QuantizedTensor read_packed(const std::filesystem::path& path) { return decode_packed(read_file(path)); }

inline void write_packed(const QuantizedTensor& q, const std::filesystem::path& path) {
  write_file_atomic(path, encode_packed(q));
}

/// Values as they will read back from disk: every entry rounded to binary32.
inline DenseMatrix round_to_f32(const DenseMatrix& m) {
  DenseMatrix out = m;
  for (double& x : out.data()) x = static_cast<double>(static_cast<float>(x));
  return out;
}

}  // namespace lords
