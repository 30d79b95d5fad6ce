// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "amuse/error.hpp"

namespace amuse {

using FlatVector = std::vector<double>;

/// Row-major dense matrix of doubles. Entries are finite whenever the
/// matrix is built from caller data; arithmetic results are not re-checked.
class DenseMatrix {
 public:
  DenseMatrix() = default;

  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(checked_size(rows, cols), fill) {}

  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != checked_size(rows, cols)) {
      throw ShapeError("DenseMatrix: data length " + std::to_string(data_.size()) +
                       " does not match " + std::to_string(rows) + "x" + std::to_string(cols));
    }
    for (double v : data_) {
      if (!std::isfinite(v)) throw NumericalError("DenseMatrix: non-finite entry on construction");
    }
  }

  static DenseMatrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw ShapeError("DenseMatrix::from_rows: ragged rows");
      data.insert(data.end(), row.begin(), row.end());
    }
    return DenseMatrix(r, c, std::move(data));
  }

  static DenseMatrix identity(std::size_t n) {
    DenseMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static DenseMatrix diagonal(std::span<const double> d) {
    DenseMatrix m(d.size(), d.size());
    for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  bool same_shape(const DenseMatrix& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  DenseMatrix& operator+=(const DenseMatrix& o) {
    require_same_shape(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  DenseMatrix& operator-=(const DenseMatrix& o) {
    require_same_shape(o, "-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  DenseMatrix& operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
  }

  /// Bitwise equality of shape and contents.
  friend bool operator==(const DenseMatrix& a, const DenseMatrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ &&
           std::equal(a.data_.begin(), a.data_.end(), b.data_.begin(), [](double x, double y) {
             return std::bit_cast<std::uint64_t>(x) == std::bit_cast<std::uint64_t>(y);
           });
  }

  std::string shape_string() const { return std::to_string(rows_) + "x" + std::to_string(cols_); }

 private:
  static std::size_t checked_size(std::size_t rows, std::size_t cols) {
    if (rows == 0 || cols == 0) throw ShapeError("DenseMatrix: dimensions must be positive");
    return rows * cols;
  }

  void require_same_shape(const DenseMatrix& o, const char* op) const {
    if (!same_shape(o)) {
      throw ShapeError(std::string("DenseMatrix ") + op + ": " + shape_string() + " vs " + o.shape_string());
    }
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline DenseMatrix operator+(DenseMatrix a, const DenseMatrix& b) { return a += b; }
inline DenseMatrix operator-(DenseMatrix a, const DenseMatrix& b) { return a -= b; }
inline DenseMatrix operator*(double s, DenseMatrix a) { return a *= s; }
inline DenseMatrix operator*(DenseMatrix a, double s) { return a *= s; }

namespace detail {

using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstView = Eigen::Map<const RowMajorMatrix>;
using MutView = Eigen::Map<RowMajorMatrix>;

inline ConstView view(const DenseMatrix& m) {
  return ConstView(m.data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols()));
}
inline MutView view(DenseMatrix& m) {
  return MutView(m.data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols()));
}

}  // namespace detail

/// a * b
inline DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.rows()) throw ShapeError("matmul: " + a.shape_string() + " * " + b.shape_string());
  DenseMatrix out(a.rows(), b.cols());
  detail::view(out).noalias() = detail::view(a) * detail::view(b);
  return out;
}

/// a^T * b
inline DenseMatrix matmul_tn(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.rows() != b.rows()) throw ShapeError("matmul_tn: " + a.shape_string() + "^T * " + b.shape_string());
  DenseMatrix out(a.cols(), b.cols());
  detail::view(out).noalias() = detail::view(a).transpose() * detail::view(b);
  return out;
}

/// a * b^T
inline DenseMatrix matmul_nt(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.cols()) throw ShapeError("matmul_nt: " + a.shape_string() + " * " + b.shape_string() + "^T");
  DenseMatrix out(a.rows(), b.rows());
  detail::view(out).noalias() = detail::view(a) * detail::view(b).transpose();
  return out;
}

inline DenseMatrix transpose(const DenseMatrix& m) {
  DenseMatrix out(m.cols(), m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) out(c, r) = m(r, c);
  return out;
}

inline double frobenius_norm(const DenseMatrix& m) {
  double s = 0.0;
  for (double v : m.values()) s += v * v;
  return std::sqrt(s);
}

inline double frobenius_distance(const DenseMatrix& a, const DenseMatrix& b) { return frobenius_norm(a - b); }

inline double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b) {
  if (!a.same_shape(b)) throw ShapeError("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

// ---------------------------------------------------------------------------
// Flat-vector helpers

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

/// y += alpha * x
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  if (x.size() != y.size()) throw ShapeError("axpy: length mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline void scale_in_place(std::span<double> x, double s) {
  for (double& v : x) v *= s;
}

/// Concatenates the matrices row-major in declaration order.
inline FlatVector vectorize(std::span<const DenseMatrix> params) {
  if (params.empty()) throw ShapeError("vectorize: empty parameter list");
  std::size_t total = 0;
  for (const auto& p : params) total += p.size();
  FlatVector out;
  out.reserve(total);
  for (const auto& p : params) out.insert(out.end(), p.values().begin(), p.values().end());
  return out;
}

using Shape = std::pair<std::size_t, std::size_t>;

inline std::vector<DenseMatrix> de_vectorize(std::span<const double> flat, std::span<const Shape> shapes) {
  std::size_t total = 0;
  for (const auto& [r, c] : shapes) total += r * c;
  if (total != flat.size()) {
    throw ShapeError("de_vectorize: flat length " + std::to_string(flat.size()) + " != " + std::to_string(total));
  }
  std::vector<DenseMatrix> out;
  out.reserve(shapes.size());
  std::size_t off = 0;
  for (const auto& [r, c] : shapes) {
    DenseMatrix m(r, c);
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), r * c, m.data());
    off += r * c;
    out.push_back(std::move(m));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Symmetric eigendecomposition (cyclic Jacobi rotations)

struct SymmetricEigen {
  std::vector<double> values;  // descending
  DenseMatrix vectors;         // column j pairs with values[j]
};

inline SymmetricEigen symmetric_eigen(const DenseMatrix& s, int max_sweeps = 64) {
  if (s.rows() != s.cols()) throw ShapeError("symmetric_eigen: matrix is " + s.shape_string());
  const std::size_t n = s.rows();
  DenseMatrix a = s;
  DenseMatrix v = DenseMatrix::identity(n);

  double scale = 0.0;
  for (double x : a.values()) scale += x * x;
  scale = std::sqrt(scale);

  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (std::sqrt(off) <= 1e-17 * scale || off == 0.0) break;

    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double sn = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - sn * akq;
          a(k, q) = sn * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - sn * aqk;
          a(q, k) = sn * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - sn * vkq;
          v(k, q) = sn * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return a(i, i) > a(j, j); });
  SymmetricEigen out{std::vector<double>(n), DenseMatrix(n, n)};
  for (std::size_t j = 0; j < n; ++j) {
    out.values[j] = a(order[j], order[j]);
    for (std::size_t k = 0; k < n; ++k) out.vectors(k, j) = v(k, order[j]);
  }
  return out;
}

/// Singular values, descending, via the eigenvalues of the smaller Gram matrix.
inline std::vector<double> singular_values(const DenseMatrix& m) {
  const DenseMatrix gram = m.rows() >= m.cols() ? matmul_tn(m, m) : matmul_nt(m, m);
  auto eig = symmetric_eigen(gram);
  for (double& x : eig.values) x = std::sqrt(std::max(0.0, x));
  return eig.values;
}

// ---------------------------------------------------------------------------
// Orthogonalization

/// Exact polar factor G (G^T G)^{-1/2}. Wide inputs are handled through the
/// transpose, so the result always has orthonormal rows or columns.
inline DenseMatrix polar_factor_oracle(const DenseMatrix& m) {
  if (m.empty()) throw ShapeError("polar_factor_oracle: empty matrix");
  if (!m.all_finite()) throw NumericalError("polar_factor_oracle: non-finite input");
  if (m.rows() < m.cols()) return transpose(polar_factor_oracle(transpose(m)));

  const auto eig = symmetric_eigen(matmul_tn(m, m));
  const std::size_t n = eig.values.size();
  const double largest = std::sqrt(std::max(0.0, eig.values.front()));
  for (std::size_t i = 0; i < n; ++i) {
    const double sv = std::sqrt(std::max(0.0, eig.values[i]));
    if (!(sv > 1e-10 * largest)) {
      std::ostringstream os;
      os << "polar_factor_oracle: rank-deficient input, singular value #" << i << " = " << sv
         << " is below 1e-10 x largest (" << largest << ")";
      throw NumericalError(os.str());
    }
  }
  // (G^T G)^{-1/2} = V diag(1/sqrt(lambda)) V^T
  DenseMatrix scaled = eig.vectors;
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) scaled(r, c) /= std::sqrt(eig.values[c]);
  return matmul(m, matmul_nt(scaled, eig.vectors));
}

enum class NsCoefficients {
  cubic_exact,  // X <- 1.5 X - 0.5 X X^T X
  muon_fast,    // quintic (3.4445, -4.7750, 2.0315)
};

inline constexpr double kNsNormEpsilon = 1e-7;

/// Newton-Schulz approximation of the polar factor. The input is divided by
/// (||m||_F + 1e-7) first so every singular value lies in (0, 1]. Tall inputs
/// are orthogonalized through their transpose to keep the Gram matrix small.
/// With `rms_match` the result is scaled by sqrt(max(rows, cols)) so its
/// entries have unit RMS; off by default.
inline DenseMatrix newton_schulz(const DenseMatrix& m, int iters, NsCoefficients coeffs, bool rms_match = false) {
  if (m.empty()) throw ShapeError("newton_schulz: empty matrix");
  if (iters < 1) throw std::invalid_argument("newton_schulz: iters must be >= 1");
  if (!m.all_finite()) throw NumericalError("newton_schulz: non-finite input");
  const double norm = frobenius_norm(m);
  if (norm == 0.0) throw NumericalError("zero matrix has no polar factor");

  const bool tall = m.rows() > m.cols();
  DenseMatrix x = tall ? transpose(m) : m;
  x *= 1.0 / (norm + kNsNormEpsilon);

  for (int i = 0; i < iters; ++i) {
    const DenseMatrix gram = matmul_nt(x, x);
    if (coeffs == NsCoefficients::cubic_exact) {
      DenseMatrix next = matmul(gram, x);
      next *= -0.5;
      axpy(1.5, x.values(), next.values());
      x = std::move(next);
    } else {
      constexpr double a = 3.4445, b = -4.7750, c = 2.0315;
      DenseMatrix poly = matmul(gram, gram);
      poly *= c;
      axpy(b, gram.values(), poly.values());
      DenseMatrix next = matmul(poly, x);
      axpy(a, x.values(), next.values());
      x = std::move(next);
    }
  }
  if (tall) x = transpose(x);
  if (rms_match) x *= std::sqrt(static_cast<double>(std::max(m.rows(), m.cols())));
  return x;
}

}  // namespace amuse
