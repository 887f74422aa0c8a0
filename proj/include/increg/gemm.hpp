#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "increg/error.hpp"
#include "increg/lowering.hpp"
#include "increg/tensor.hpp"

namespace increg {

// All kernels use a fixed loop nest, so a product depends only on its inputs and
// the build configuration. Accumulation over the inner dimension runs in
// increasing index order.

namespace kernels {

/// c (m x n) += a (m x k) * b (k x n), row-major, i-k-j order.
template <class T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    T* ci = c + i * n;
    const T* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = ai[p];
      const T* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

/// c (m x n) += a (m x k) * b^T, where b is stored n x k.
template <class T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* ai = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* bj = b + j * k;
      T acc{};
      for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
      c[i * n + j] += acc;
    }
  }
}

/// c (m x n) += a^T * b, where a is stored k x m and b is k x n.
template <class T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t p = 0; p < k; ++p) {
    const T* ap = a + p * m;
    const T* bp = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T api = ap[i];
      T* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += api * bp[j];
    }
  }
}

}  // namespace kernels

template <class T>
Matrix<T> gemm(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.cols() != b.rows()) {
    throw InvalidArgument("gemm: inner dimensions differ (" + std::to_string(a.cols()) + " vs " +
                          std::to_string(b.rows()) + ")");
  }
  Matrix<T> c(a.rows(), b.cols());
  kernels::gemm_nn(a.rows(), b.cols(), a.cols(), a.data().data(), b.data().data(),
                   c.data().data());
  return c;
}

/// a * b^T
template <class T>
Matrix<T> gemm_nt(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.cols() != b.cols()) throw InvalidArgument("gemm_nt: inner dimensions differ");
  Matrix<T> c(a.rows(), b.rows());
  kernels::gemm_nt(a.rows(), b.rows(), a.cols(), a.data().data(), b.data().data(),
                   c.data().data());
  return c;
}

/// a^T * b
template <class T>
Matrix<T> gemm_tn(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.rows() != b.rows()) throw InvalidArgument("gemm_tn: inner dimensions differ");
  Matrix<T> c(a.cols(), b.cols());
  kernels::gemm_tn(a.cols(), b.cols(), a.rows(), a.data().data(), b.data().data(),
                   c.data().data());
  return c;
}

/// Keeps the listed rows and columns of a matrix, in the listed order.
template <class T>
Matrix<T> gather(const Matrix<T>& m, std::span<const std::size_t> rows,
                 std::span<const std::size_t> cols) {
  for (auto r : rows) detail::require(r < m.rows(), "gather: row index out of range");
  for (auto c : cols) detail::require(c < m.cols(), "gather: column index out of range");
  Matrix<T> out(rows.size(), cols.size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < cols.size(); ++j) out(i, j) = m(rows[i], cols[j]);
  return out;
}

/// Product of the weight matrix restricted to keep_rows x keep_cols with a lowered
/// input whose rows correspond to keep_cols (rows for dropped columns are already
/// absent from x).
template <class T>
Matrix<T> compact_gemm(const LoweredMatrix<T>& w, std::span<const std::size_t> keep_rows,
                       std::span<const std::size_t> keep_cols, const Matrix<T>& x) {
  if (keep_cols.size() != x.rows()) {
    throw InvalidArgument("compact_gemm: " + std::to_string(keep_cols.size()) +
                          " kept columns but lowered input has " + std::to_string(x.rows()) +
                          " rows");
  }
  const Matrix<T> packed = gather(w.values, keep_rows, keep_cols);
  if (packed.rows() == 0) return Matrix<T>(0, x.cols());
  return gemm(packed, x);
}

}  // namespace increg
