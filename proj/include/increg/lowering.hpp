#pragma once

#include <compare>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "increg/error.hpp"
#include "increg/tensor.hpp"

namespace increg {

/// Geometry of one convolution: input (C, H, W), kernel, stride and zero padding.
struct ConvGeometry {
  std::size_t channels = 1;
  std::size_t in_h = 1;
  std::size_t in_w = 1;
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride = 1;
  std::size_t pad = 0;

  bool valid() const {
    return channels > 0 && kernel_h > 0 && kernel_w > 0 && stride > 0 &&
           in_h + 2 * pad >= kernel_h && in_w + 2 * pad >= kernel_w;
  }
  void validate() const {
    if (!valid()) {
      throw InvalidArgument("ConvGeometry: kernel " + std::to_string(kernel_h) + "x" +
                            std::to_string(kernel_w) + " does not fit input " +
                            std::to_string(in_h) + "x" + std::to_string(in_w) + " with pad " +
                            std::to_string(pad) + " and stride " + std::to_string(stride));
    }
  }
  std::size_t out_h() const { return (in_h + 2 * pad - kernel_h) / stride + 1; }
  std::size_t out_w() const { return (in_w + 2 * pad - kernel_w) / stride + 1; }
  std::size_t out_area() const { return out_h() * out_w(); }
  std::size_t kernel_area() const { return kernel_h * kernel_w; }
  /// Width of the dense lowered weight matrix, C * Hk * Wk.
  std::size_t lowered_cols() const { return channels * kernel_area(); }

  friend bool operator==(const ConvGeometry&, const ConvGeometry&) = default;
};

/// Provenance of one lowered-matrix column: (channel, kernel row, kernel col).
struct ColumnIndex {
  std::size_t channel = 0;
  std::size_t kh = 0;
  std::size_t kw = 0;

  friend auto operator<=>(const ColumnIndex&, const ColumnIndex&) = default;
};

/// Dense column order (c, kh, kw) with kw fastest, matching the (N,C,H,W) kernel layout.
inline std::vector<ColumnIndex> full_column_map(std::size_t channels, std::size_t kernel_h,
                                                std::size_t kernel_w) {
  std::vector<ColumnIndex> map;
  map.reserve(channels * kernel_h * kernel_w);
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t kh = 0; kh < kernel_h; ++kh)
      for (std::size_t kw = 0; kw < kernel_w; ++kw) map.push_back({c, kh, kw});
  return map;
}

/// im2col view of a kernel: rows are filters, columns are (c, kh, kw) positions.
/// After compaction col_map is a strict subset of the dense order.
template <class T>
struct LoweredMatrix {
  Matrix<T> values;
  std::vector<ColumnIndex> col_map;

  std::size_t rows() const { return values.rows(); }
  std::size_t cols() const { return values.cols(); }
};

/// Views an (N, C, Hk, Wk) kernel as an N x (C*Hk*Wk) matrix. The dense column
/// order coincides with the row-major memory order, so this is a relabelling.
template <class T>
LoweredMatrix<T> lower_weights(const Tensor4<T>& kernel) {
  const auto& s = kernel.shape();
  return {Matrix<T>(s.n, s.c * s.h * s.w, kernel.storage()), full_column_map(s.c, s.h, s.w)};
}

/// Inverse of lower_weights. Every (c, kh, kw) position must be present exactly once.
template <class T>
Tensor4<T> unlower_weights(const LoweredMatrix<T>& lowered, std::size_t channels,
                           std::size_t kernel_h, std::size_t kernel_w) {
  detail::require(lowered.cols() == channels * kernel_h * kernel_w &&
                      lowered.col_map.size() == lowered.cols(),
                  "unlower_weights: column count does not match kernel shape");
  Tensor4<T> out({lowered.rows(), channels, kernel_h, kernel_w});
  std::vector<bool> seen(lowered.cols(), false);
  for (std::size_t j = 0; j < lowered.cols(); ++j) {
    const auto& ci = lowered.col_map[j];
    detail::require(ci.channel < channels && ci.kh < kernel_h && ci.kw < kernel_w,
                    "unlower_weights: column provenance out of range");
    const std::size_t flat = (ci.channel * kernel_h + ci.kh) * kernel_w + ci.kw;
    detail::require(!seen[flat], "unlower_weights: duplicated column provenance");
    seen[flat] = true;
    for (std::size_t f = 0; f < lowered.rows(); ++f) out(f, ci.channel, ci.kh, ci.kw) = lowered.values(f, j);
  }
  return out;
}

/// Lowers one (C, H, W) image into `out` (cols.size() x out_area). Row j holds the
/// input pixels seen by kernel position cols[j] at each output location, zero in the
/// padding. Only the listed positions are materialized.
template <class T>
void im2col_into(std::span<const T> image, const ConvGeometry& g,
                 std::span<const ColumnIndex> cols, Matrix<T>& out) {
  const std::size_t oh = g.out_h();
  const std::size_t ow = g.out_w();
  if (out.rows() != cols.size() || out.cols() != oh * ow) out = Matrix<T>(cols.size(), oh * ow);
  for (std::size_t j = 0; j < cols.size(); ++j) {
    const auto& ci = cols[j];
    const T* plane = image.data() + ci.channel * g.in_h * g.in_w;
    T* dst = out.row(j).data();
    for (std::size_t y = 0; y < oh; ++y) {
      const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * g.stride + ci.kh) -
                                static_cast<std::ptrdiff_t>(g.pad);
      if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) {
        std::fill(dst + y * ow, dst + (y + 1) * ow, T{});
        continue;
      }
      const T* src_row = plane + static_cast<std::size_t>(iy) * g.in_w;
      for (std::size_t x = 0; x < ow; ++x) {
        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x * g.stride + ci.kw) -
                                  static_cast<std::ptrdiff_t>(g.pad);
        dst[y * ow + x] =
            (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.in_w)) ? T{} : src_row[ix];
      }
    }
  }
}

/// Full lowering of a single-image tensor: (C*Hk*Wk) x (H_out*W_out), rows in dense
/// column-map order.
template <class T>
Matrix<T> im2col(const Tensor4<T>& input, const ConvGeometry& g) {
  g.validate();
  const auto& s = input.shape();
  if (s.n != 1 || s.c != g.channels || s.h != g.in_h || s.w != g.in_w) {
    throw InvalidArgument("im2col: input " + to_string(s) + " does not match geometry");
  }
  const auto cols = full_column_map(g.channels, g.kernel_h, g.kernel_w);
  Matrix<T> out(cols.size(), g.out_area());
  im2col_into<T>(input.sample(0), g, cols, out);
  return out;
}

/// Adjoint of im2col_into: scatters-adds lowered gradients back onto the image.
template <class T>
void col2im_add(const Matrix<T>& lowered, const ConvGeometry& g,
                std::span<const ColumnIndex> cols, std::span<T> image) {
  const std::size_t oh = g.out_h();
  const std::size_t ow = g.out_w();
  for (std::size_t j = 0; j < cols.size(); ++j) {
    const auto& ci = cols[j];
    T* plane = image.data() + ci.channel * g.in_h * g.in_w;
    const T* src = lowered.row(j).data();
    for (std::size_t y = 0; y < oh; ++y) {
      const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * g.stride + ci.kh) -
                                static_cast<std::ptrdiff_t>(g.pad);
      if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
      T* dst_row = plane + static_cast<std::size_t>(iy) * g.in_w;
      for (std::size_t x = 0; x < ow; ++x) {
        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x * g.stride + ci.kw) -
                                  static_cast<std::ptrdiff_t>(g.pad);
        if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.in_w)) dst_row[ix] += src[y * ow + x];
      }
    }
  }
}

}  // namespace increg
