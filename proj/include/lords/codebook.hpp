#pragma once

// Quantization level tables and nearest-level search.
//
// NF4/NF2 are NormalFloat codebooks: quantiles of the standard normal,
// asymmetric so that zero is exactly representable, normalized to [-1, 1].
// The frozen tables below are regenerated by normal_float_levels() in the
// test suite.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lords/error.hpp"

namespace lords {

enum class CodebookId : std::uint8_t { kNF4 = 0, kNF2 = 1, kINT4S = 2 };

using CodeIndex = std::uint8_t;

inline constexpr std::array<double, 16> kNF4Levels = {
    -1.0,
    -0.69619280563234298,
    -0.52507295944650045,
    -0.39491742591990708,
    -0.28444130892108205,
    -0.18477340280045559,
    -0.09104997598578049,
    0.0,
    0.079580314958409087,
    0.16093014438029071,
    0.2461122513474594,
    0.33791513671312789,
    0.44070973186421625,
    0.56261688796998488,
    0.72295664415947336,
    1.0,
};

inline constexpr std::array<double, 4> kNF2Levels = {
    -1.0,
    0.0,
    0.43581816458311567,
    1.0,
};

struct Codebook {
  CodebookId id;
  int bits;
  std::vector<double> levels;

  std::size_t size() const noexcept { return levels.size(); }

  CodeIndex zero_index() const {
    for (std::size_t i = 0; i < levels.size(); ++i)
      if (levels[i] == 0.0) return static_cast<CodeIndex>(i);
    throw Error(ErrorCode::kBadCodebook, "codebook has no zero level");
  }

  /// Largest distance between adjacent levels.
  double max_gap() const noexcept {
    double gap = 0.0;
    for (std::size_t i = 1; i < levels.size(); ++i) gap = std::max(gap, levels[i] - levels[i - 1]);
    return gap;
  }
};

inline std::string_view codebook_name(CodebookId id) {
  switch (id) {
    case CodebookId::kNF4: return "nf4";
    case CodebookId::kNF2: return "nf2";
    case CodebookId::kINT4S: return "int4s";
  }
  return "unknown";
}

inline CodebookId parse_codebook(std::string_view name) {
  if (name == "nf4" || name == "NF4") return CodebookId::kNF4;
  if (name == "nf2" || name == "NF2") return CodebookId::kNF2;
  if (name == "int4s" || name == "INT4S" || name == "int4") return CodebookId::kINT4S;
  throw Error(ErrorCode::kBadCodebook, "unknown codebook '" + std::string(name) + "'");
}

inline CodebookId codebook_from_tag(std::uint8_t tag) {
  if (tag > static_cast<std::uint8_t>(CodebookId::kINT4S)) {
    throw Error(ErrorCode::kBadCodebook, "codebook tag " + std::to_string(tag));
  }
  return static_cast<CodebookId>(tag);
}

inline int codebook_bits(CodebookId id) { return id == CodebookId::kNF2 ? 2 : 4; }

/// Inverse of the standard normal CDF. Acklam's rational approximation
/// followed by two Newton steps against erfc, good to ~1e-15.
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw Error(ErrorCode::kInvalidArgument, "quantile probability must be in (0, 1)");
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                 1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                 6.680131188771972e+01,  -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                 -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                 3.754408661907416e+00};
  constexpr double p_low = 0.02425;
  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double sqrt2pi = std::sqrt(2.0 * std::acos(-1.0));
  for (int i = 0; i < 2; ++i) {
    const double cdf = 0.5 * std::erfc(-x / std::sqrt(2.0));
    const double pdf = std::exp(-0.5 * x * x) / sqrt2pi;
    x -= (cdf - p) / pdf;
  }
  return x;
}

/// NormalFloat quantile construction at k bits: 2^(k-1) positive quantiles
/// and 2^(k-1)-1 negative ones, evenly spaced in probability between 1/2
/// and an offset that keeps the extreme quantile finite, plus an exact zero.
/// The offset averages the tail probabilities 1 - 1/(2(2^k-1)) and
/// 1 - 1/(2*2^k); at k = 4 this is 0.9677083.
inline std::vector<double> normal_float_levels(int bits) {
  if (bits < 2 || bits > 8) throw Error(ErrorCode::kInvalidArgument, "normal float bits must be in [2, 8]");
  const double count = std::ldexp(1.0, bits);
  const double offset = 0.5 * ((1.0 - 1.0 / (2.0 * (count - 1.0))) + (1.0 - 1.0 / (2.0 * count)));
  const int half = 1 << (bits - 1);

  auto spaced = [&](int points, int i) {  // i-th of `points` evenly spaced from offset to 0.5
    return offset + (0.5 - offset) * static_cast<double>(i) / static_cast<double>(points - 1);
  };
  std::vector<double> positive;
  for (int i = 0; i < half; ++i) positive.push_back(normal_quantile(spaced(half + 1, i)));
  std::vector<double> negative;
  for (int i = 0; i < half - 1; ++i) negative.push_back(-normal_quantile(spaced(half, i)));

  const double top = positive.front();
  std::vector<double> levels;
  for (auto it = negative.begin(); it != negative.end(); ++it) levels.push_back(*it / top);
  levels.push_back(0.0);
  for (auto it = positive.rbegin(); it != positive.rend(); ++it) levels.push_back(*it / top);
  levels.front() = -1.0;
  levels.back() = 1.0;
  return levels;
}

inline Codebook build_codebook(CodebookId id) {
  switch (id) {
    case CodebookId::kNF4: return {id, 4, {kNF4Levels.begin(), kNF4Levels.end()}};
    case CodebookId::kNF2: return {id, 2, {kNF2Levels.begin(), kNF2Levels.end()}};
    case CodebookId::kINT4S: {
      std::vector<double> levels;
      for (int k = -7; k <= 7; ++k) levels.push_back(k / 7.0);
      return {id, 4, std::move(levels)};
    }
  }
  throw Error(ErrorCode::kBadCodebook, "unknown codebook id");
}

struct LevelMatch {
  CodeIndex index;
  double level;
};

/// argmin_i (x - levels[i])^2, lower index on ties. Saturates at the ends.
inline LevelMatch nearest_level(double x, const Codebook& cb) {
  std::size_t best = 0;
  double best_err = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < cb.levels.size(); ++i) {
    const double diff = x - cb.levels[i];
    const double err = diff * diff;
    if (err < best_err) {
      best_err = err;
      best = i;
    }
  }
  return {static_cast<CodeIndex>(best), cb.levels[best]};
}

/// argmin_i (s * levels[i] - w)^2 without dividing by s, lower index on ties.
/// With s == 0 every candidate ties and index 0 is returned.
inline LevelMatch nearest_scaled_level(double w, double s, const Codebook& cb) {
  std::size_t best = 0;
  double best_err = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < cb.levels.size(); ++i) {
    const double diff = s * cb.levels[i] - w;
    const double err = diff * diff;
    if (err < best_err) {
      best_err = err;
      best = i;
    }
  }
  return {static_cast<CodeIndex>(best), cb.levels[best]};
}

inline std::size_t packed_size(std::size_t count, int bits) {
  return (count * static_cast<std::size_t>(bits) + 7) / 8;
}

inline void check_pack_bits(int bits) {
  if (bits != 2 && bits != 4) throw Error(ErrorCode::kInvalidArgument, "pack width must be 2 or 4 bits");
}

/// Little-end-first packing: element i occupies bits [(i % per_byte) * bits, ...)
/// of byte i / per_byte. A partial trailing byte is zero padded.
inline std::vector<std::uint8_t> pack_codes(std::span<const CodeIndex> indices, int bits) {
  check_pack_bits(bits);
  const unsigned per_byte = 8u / static_cast<unsigned>(bits);
  const unsigned limit = 1u << bits;
  std::vector<std::uint8_t> out(packed_size(indices.size(), bits), 0);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= limit) {
      throw Error(ErrorCode::kInvalidArgument,
                  "code " + std::to_string(indices[i]) + " does not fit in " + std::to_string(bits) + " bits");
    }
    const unsigned shift = static_cast<unsigned>(i % per_byte) * static_cast<unsigned>(bits);
    out[i / per_byte] = static_cast<std::uint8_t>(out[i / per_byte] | (indices[i] << shift));
  }
  return out;
}

inline std::vector<CodeIndex> unpack_codes(std::span<const std::uint8_t> bytes, std::size_t count, int bits) {
  check_pack_bits(bits);
  if (bytes.size() != packed_size(count, bits)) {
    throw Error(ErrorCode::kShapeMismatch, "packed length " + std::to_string(bytes.size()) + " for " +
                                               std::to_string(count) + " codes at " + std::to_string(bits) + " bits");
  }
  const unsigned per_byte = 8u / static_cast<unsigned>(bits);
  const unsigned mask = (1u << bits) - 1u;
  std::vector<CodeIndex> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    const unsigned shift = static_cast<unsigned>(i % per_byte) * static_cast<unsigned>(bits);
    out[i] = static_cast<CodeIndex>((bytes[i / per_byte] >> shift) & mask);
  }
  return out;
}

}  // namespace lords
