#pragma once

// im2col + GEMM convolution kernels, templated on the accumulation type so
// the relevance code can run them in double while the public API stays f32.

#include <Eigen/Core>
#include <algorithm>
#include <cstddef>
#include <vector>

namespace lrp::detail {

struct ConvGeometry {
  std::size_t in_c = 0, in_h = 0, in_w = 0;
  std::size_t out_c = 0, k_h = 0, k_w = 0;
  std::size_t stride = 1, pad = 0;
  std::size_t out_h = 0, out_w = 0;

  std::size_t patch() const { return in_c * k_h * k_w; }
  std::size_t positions() const { return out_h * out_w; }
};

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstRowMap = Eigen::Map<const RowMatrix<T>>;

// col is [patch, positions].
template <typename T>
void im2col(const ConvGeometry& g, const T* input, T* col) {
  const auto pad = static_cast<std::ptrdiff_t>(g.pad);
  for (std::size_t c = 0; c < g.in_c; ++c) {
    for (std::size_t ki = 0; ki < g.k_h; ++ki) {
      for (std::size_t kj = 0; kj < g.k_w; ++kj) {
        T* row = col + ((c * g.k_h + ki) * g.k_w + kj) * g.positions();
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const std::ptrdiff_t ih =
              static_cast<std::ptrdiff_t>(oh * g.stride + ki) - pad;
          T* dst = row + oh * g.out_w;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.in_h)) {
            std::fill(dst, dst + g.out_w, T(0));
            continue;
          }
          const T* src = input + (c * g.in_h + static_cast<std::size_t>(ih)) * g.in_w;
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const std::ptrdiff_t iw =
                static_cast<std::ptrdiff_t>(ow * g.stride + kj) - pad;
            dst[ow] = (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.in_w))
                          ? T(0)
                          : src[iw];
          }
        }
      }
    }
  }
}

// Scatter-add of col back into an [in_c, in_h, in_w] buffer (zeroed by caller).
template <typename T>
void col2im(const ConvGeometry& g, const T* col, T* output) {
  const auto pad = static_cast<std::ptrdiff_t>(g.pad);
  for (std::size_t c = 0; c < g.in_c; ++c) {
    for (std::size_t ki = 0; ki < g.k_h; ++ki) {
      for (std::size_t kj = 0; kj < g.k_w; ++kj) {
        const T* row = col + ((c * g.k_h + ki) * g.k_w + kj) * g.positions();
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const std::ptrdiff_t ih =
              static_cast<std::ptrdiff_t>(oh * g.stride + ki) - pad;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
          T* dst = output + (c * g.in_h + static_cast<std::size_t>(ih)) * g.in_w;
          const T* src = row + oh * g.out_w;
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const std::ptrdiff_t iw =
                static_cast<std::ptrdiff_t>(ow * g.stride + kj) - pad;
            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.in_w)) continue;
            dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

// output [out_c, positions] = weight [out_c, patch] * col + bias.
template <typename T>
void conv_forward(const ConvGeometry& g, const T* input, const T* weight,
                  const T* bias, T* output) {
  std::vector<T> col(g.patch() * g.positions());
  im2col(g, input, col.data());
  ConstRowMap<T> w(weight, g.out_c, g.patch());
  ConstRowMap<T> c(col.data(), g.patch(), g.positions());
  RowMap<T> out(output, g.out_c, g.positions());
  out.noalias() = w * c;
  if (bias != nullptr) {
    for (std::size_t k = 0; k < g.out_c; ++k) out.row(k).array() += bias[k];
  }
}

// output [in_c, in_h, in_w] = adjoint of conv_forward applied to input
// [out_c, positions].
template <typename T>
void conv_adjoint(const ConvGeometry& g, const T* input, const T* weight,
                  T* output) {
  std::vector<T> col(g.patch() * g.positions());
  ConstRowMap<T> w(weight, g.out_c, g.patch());
  ConstRowMap<T> in(input, g.out_c, g.positions());
  RowMap<T> c(col.data(), g.patch(), g.positions());
  c.noalias() = w.transpose() * in;
  std::fill(output, output + g.in_c * g.in_h * g.in_w, T(0));
  col2im(g, col.data(), output);
}

// output [out_c, patch] = grad [out_c, positions] * col^T.
template <typename T>
void conv_correlation(const ConvGeometry& g, const T* input, const T* grad,
                      T* output) {
  std::vector<T> col(g.patch() * g.positions());
  im2col(g, input, col.data());
  ConstRowMap<T> s(grad, g.out_c, g.positions());
  ConstRowMap<T> c(col.data(), g.patch(), g.positions());
  RowMap<T> out(output, g.out_c, g.patch());
  out.noalias() = s * c.transpose();
}

}  // namespace lrp::detail
