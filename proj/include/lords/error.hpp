#pragma once

#include <stdexcept>
#include <string>

namespace lords {

enum class ErrorCode {
  kShapeMismatch,
  kInvalidArgument,
  kNotDivisible,
  kInvalidRank,
  kNonFinite,
  kNoConvergence,
  kDivergence,
  kUndefinedRatio,
  kBoundaryProximity,
  kIo,
  kBadMagic,
  kBadVersion,
  kTruncated,
  kUnsupportedDtype,
  kBadCodebook,
  kBadRepr,
  kTrailingBytes,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kShapeMismatch: return "shape mismatch";
    case ErrorCode::kInvalidArgument: return "invalid argument";
    case ErrorCode::kNotDivisible: return "block size does not divide columns";
    case ErrorCode::kInvalidRank: return "invalid rank";
    case ErrorCode::kNonFinite: return "non-finite value";
    case ErrorCode::kNoConvergence: return "no convergence";
    case ErrorCode::kDivergence: return "divergence";
    case ErrorCode::kUndefinedRatio: return "undefined ratio";
    case ErrorCode::kBoundaryProximity: return "rounding boundary proximity";
    case ErrorCode::kIo: return "i/o failure";
    case ErrorCode::kBadMagic: return "bad magic";
    case ErrorCode::kBadVersion: return "unsupported version";
    case ErrorCode::kTruncated: return "truncated file";
    case ErrorCode::kUnsupportedDtype: return "unsupported dtype";
    case ErrorCode::kBadCodebook: return "bad codebook";
    case ErrorCode::kBadRepr: return "bad scale representation";
    case ErrorCode::kTrailingBytes: return "trailing bytes";
  }
  return "unknown error";
}

/// Exception type thrown by every lords operation. The code is stable and
/// drives CLI exit statuses; the message carries the detail.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace lords
