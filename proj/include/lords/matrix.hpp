#pragma once

// Dense row-major matrices and the spectral primitives (SVD, nuclear norm)
// the rest of the library is built on. All arithmetic is 64-bit; 32-bit
// values only appear at the file boundary.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "lords/error.hpp"

namespace lords {

class DenseMatrix {
 public:
  DenseMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {
    check_shape();
  }

  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    check_shape();
    if (data_.size() != rows_ * cols_) {
      throw Error(ErrorCode::kShapeMismatch, "data length " + std::to_string(data_.size()) + " != " +
                                                 std::to_string(rows_) + "x" + std::to_string(cols_));
    }
    for (double x : data_) {
      if (!std::isfinite(x)) throw Error(ErrorCode::kNonFinite, "matrix entry is not finite");
    }
  }

  DenseMatrix(std::initializer_list<std::initializer_list<double>> rows) : rows_(rows.size()), cols_(0) {
    if (rows_ > 0) cols_ = rows.begin()->size();
    check_shape();
    data_.reserve(rows_ * cols_);
    for (const auto& row : rows) {
      if (row.size() != cols_) throw Error(ErrorCode::kShapeMismatch, "ragged initializer");
      for (double x : row) {
        if (!std::isfinite(x)) throw Error(ErrorCode::kNonFinite, "matrix entry is not finite");
        data_.push_back(x);
      }
    }
  }

  static DenseMatrix identity(std::size_t n) {
    DenseMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static DenseMatrix filled(std::size_t rows, std::size_t cols, double value) {
    DenseMatrix m(rows, cols);
    std::fill(m.data_.begin(), m.data_.end(), value);
    return m;
  }

  static DenseMatrix diagonal(std::span<const double> diag) {
    DenseMatrix m(diag.size(), diag.size());
    for (std::size_t i = 0; i < diag.size(); ++i) m(i, i) = diag[i];
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  double& operator()(std::size_t i, std::size_t j) noexcept { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const noexcept { return data_[i * cols_ + j]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  std::span<double> row(std::size_t i) noexcept { return {data_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const noexcept { return {data_.data() + i * cols_, cols_}; }

  bool same_shape(const DenseMatrix& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
  }

  friend bool operator==(const DenseMatrix&, const DenseMatrix&) = default;

 private:
  void check_shape() const {
    if (rows_ == 0 || cols_ == 0) throw Error(ErrorCode::kInvalidArgument, "matrix dimensions must be positive");
  }

  std::size_t rows_;
  std::size_t cols_;
  std::vector<double> data_;
};

inline std::string shape_string(const DenseMatrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

inline void require_same_shape(const DenseMatrix& a, const DenseMatrix& b, const char* what) {
  if (!a.same_shape(b)) {
    throw Error(ErrorCode::kShapeMismatch, std::string(what) + ": " + shape_string(a) + " vs " + shape_string(b));
  }
}

inline DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.rows()) {
    throw Error(ErrorCode::kShapeMismatch, "matmul: " + shape_string(a) + " * " + shape_string(b));
  }
  DenseMatrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto out_row = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto b_row = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) out_row[j] += aik * b_row[j];
    }
  }
  return out;
}

inline DenseMatrix transpose(const DenseMatrix& m) {
  DenseMatrix out(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out(j, i) = m(i, j);
  return out;
}

inline DenseMatrix hadamard(const DenseMatrix& a, const DenseMatrix& b) {
  require_same_shape(a, b, "hadamard");
  DenseMatrix out(a.rows(), a.cols());
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
  return out;
}

inline DenseMatrix add(const DenseMatrix& a, const DenseMatrix& b) {
  require_same_shape(a, b, "add");
  DenseMatrix out = a;
  auto o = out.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += y[i];
  return out;
}

inline DenseMatrix subtract(const DenseMatrix& a, const DenseMatrix& b) {
  require_same_shape(a, b, "subtract");
  DenseMatrix out = a;
  auto o = out.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= y[i];
  return out;
}

inline DenseMatrix scaled(const DenseMatrix& a, double factor) {
  DenseMatrix out = a;
  for (double& x : out.data()) x *= factor;
  return out;
}

inline double frobenius_norm(const DenseMatrix& m) {
  double sum = 0.0;
  for (double x : m.data()) sum += x * x;
  return std::sqrt(sum);
}

inline double max_abs(const DenseMatrix& m) {
  double best = 0.0;
  for (double x : m.data()) best = std::max(best, std::abs(x));
  return best;
}

/// Singular triples ordered by non-increasing sigma. u is rows x k, vt is
/// k x cols. Each left singular vector has its largest-magnitude entry
/// positive (lowest row index wins ties).
struct SvdResult {
  DenseMatrix u;
  std::vector<double> sigma;
  DenseMatrix vt;

  std::size_t rank_count() const noexcept { return sigma.size(); }

  DenseMatrix reconstruct() const {
    DenseMatrix us = u;
    for (std::size_t i = 0; i < us.rows(); ++i)
      for (std::size_t j = 0; j < us.cols(); ++j) us(i, j) *= sigma[j];
    return matmul(us, vt);
  }
};

namespace detail {

inline constexpr int kMaxJacobiSweeps = 100;

// One-sided (Hestenes) Jacobi on a matrix with rows >= cols. Returns the
// thin SVD with k = cols; sign convention is applied by the caller.
inline SvdResult jacobi_svd_tall(const DenseMatrix& m) {
  const std::size_t n = m.rows();
  const std::size_t k = m.cols();
  const double tol = static_cast<double>(n) * std::numeric_limits<double>::epsilon();

  // Column-major working copies so rotations touch contiguous memory.
  std::vector<double> a(n * k);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) a[j * n + i] = m(i, j);
  std::vector<double> v(k * k, 0.0);
  for (std::size_t j = 0; j < k; ++j) v[j * k + j] = 1.0;

  bool converged = false;
  for (int sweep = 0; sweep < kMaxJacobiSweeps && !converged; ++sweep) {
    converged = true;
    for (std::size_t p = 0; p + 1 < k; ++p) {
      double* ap = a.data() + p * n;
      for (std::size_t q = p + 1; q < k; ++q) {
        double* aq = a.data() + q * n;
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          alpha += ap[i] * ap[i];
          beta += aq[i] * aq[i];
          gamma += ap[i] * aq[i];
        }
        if (alpha == 0.0 || beta == 0.0) continue;
        if (std::abs(gamma) <= tol * std::sqrt(alpha) * std::sqrt(beta)) continue;
        converged = false;

        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::hypot(1.0, zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < n; ++i) {
          const double xp = ap[i];
          const double xq = aq[i];
          ap[i] = c * xp - s * xq;
          aq[i] = s * xp + c * xq;
        }
        double* vp = v.data() + p * k;
        double* vq = v.data() + q * k;
        for (std::size_t i = 0; i < k; ++i) {
          const double xp = vp[i];
          const double xq = vq[i];
          vp[i] = c * xp - s * xq;
          vq[i] = s * xp + c * xq;
        }
      }
    }
  }
  if (!converged) {
    throw Error(ErrorCode::kNoConvergence,
                "one-sided Jacobi SVD did not converge in " + std::to_string(kMaxJacobiSweeps) + " sweeps");
  }

  std::vector<double> norms(k);
  for (std::size_t j = 0; j < k; ++j) {
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += a[j * n + i] * a[j * n + i];
    norms[j] = std::sqrt(sum);
  }
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return norms[x] > norms[y]; });

  const double sigma_max = norms[order.front()];
  // Columns at roundoff level carry no reliable direction; their left
  // vectors are rebuilt by orthogonal completion below.
  const double degenerate = sigma_max * 1e-13;

  SvdResult out{DenseMatrix(n, k), std::vector<double>(k), DenseMatrix(k, k)};
  std::vector<bool> assigned(k, false);
  for (std::size_t slot = 0; slot < k; ++slot) {
    const std::size_t src = order[slot];
    out.sigma[slot] = norms[src];
    for (std::size_t i = 0; i < k; ++i) out.vt(slot, i) = v[src * k + i];
    if (norms[src] > degenerate && norms[src] > 0.0) {
      for (std::size_t i = 0; i < n; ++i) out.u(i, slot) = a[src * n + i] / norms[src];
      assigned[slot] = true;
    }
  }

  // Orthogonal completion: repeatedly take the standard basis vector with
  // the largest component outside span(assigned), i.e. the row of u with the
  // smallest squared norm (lowest index on ties).
  std::vector<double> row_norm2(n, 0.0);
  for (std::size_t slot = 0; slot < k; ++slot) {
    if (!assigned[slot]) continue;
    for (std::size_t i = 0; i < n; ++i) row_norm2[i] += out.u(i, slot) * out.u(i, slot);
  }
  std::vector<double> x(n);
  for (std::size_t slot = 0; slot < k; ++slot) {
    if (assigned[slot]) continue;
    const std::size_t pick = static_cast<std::size_t>(
        std::min_element(row_norm2.begin(), row_norm2.end()) - row_norm2.begin());
    std::fill(x.begin(), x.end(), 0.0);
    x[pick] = 1.0;
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t other = 0; other < k; ++other) {
        if (!assigned[other]) continue;
        double dot = 0.0;
        for (std::size_t i = 0; i < n; ++i) dot += out.u(i, other) * x[i];
        for (std::size_t i = 0; i < n; ++i) x[i] -= dot * out.u(i, other);
      }
    }
    double len = 0.0;
    for (double xi : x) len += xi * xi;
    len = std::sqrt(len);
    if (!(len > 1e-3)) throw Error(ErrorCode::kNoConvergence, "orthogonal completion of left singular vectors failed");
    for (std::size_t i = 0; i < n; ++i) {
      out.u(i, slot) = x[i] / len;
      row_norm2[i] += out.u(i, slot) * out.u(i, slot);
    }
    assigned[slot] = true;
  }
  return out;
}

inline void apply_sign_convention(SvdResult& svd) {
  for (std::size_t j = 0; j < svd.u.cols(); ++j) {
    std::size_t best = 0;
    double best_mag = -1.0;
    for (std::size_t i = 0; i < svd.u.rows(); ++i) {
      const double mag = std::abs(svd.u(i, j));
      if (mag > best_mag) {
        best_mag = mag;
        best = i;
      }
    }
    if (svd.u(best, j) < 0.0) {
      for (std::size_t i = 0; i < svd.u.rows(); ++i) svd.u(i, j) = -svd.u(i, j);
      for (std::size_t i = 0; i < svd.vt.cols(); ++i) svd.vt(j, i) = -svd.vt(j, i);
    }
  }
}

}  // namespace detail

/// Thin SVD with k = min(rows, cols).
inline SvdResult svd(const DenseMatrix& m) {
  if (!m.all_finite()) throw Error(ErrorCode::kNonFinite, "svd input has non-finite entries");
  SvdResult out = [&] {
    if (m.rows() >= m.cols()) return detail::jacobi_svd_tall(m);
    SvdResult t = detail::jacobi_svd_tall(transpose(m));
    return SvdResult{transpose(t.vt), std::move(t.sigma), transpose(t.u)};
  }();
  detail::apply_sign_convention(out);
  return out;
}

inline SvdResult truncated_svd(const DenseMatrix& m, std::size_t rank) {
  const std::size_t k = std::min(m.rows(), m.cols());
  if (rank < 1 || rank > k) {
    throw Error(ErrorCode::kInvalidRank,
                "rank " + std::to_string(rank) + " outside [1, " + std::to_string(k) + "] for " + shape_string(m));
  }
  SvdResult full = svd(m);
  if (rank == k) return full;
  SvdResult out{DenseMatrix(m.rows(), rank), std::vector<double>(full.sigma.begin(), full.sigma.begin() + rank),
                DenseMatrix(rank, m.cols())};
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < rank; ++j) out.u(i, j) = full.u(i, j);
  for (std::size_t j = 0; j < rank; ++j)
    for (std::size_t i = 0; i < m.cols(); ++i) out.vt(j, i) = full.vt(j, i);
  return out;
}

inline std::vector<double> singular_values(const DenseMatrix& m) { return svd(m).sigma; }

inline double nuclear_norm(const DenseMatrix& m) {
  const auto sigma = singular_values(m);
  return std::accumulate(sigma.begin(), sigma.end(), 0.0);
}

}  // namespace lords
