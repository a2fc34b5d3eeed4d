#pragma once

#include <Eigen/Dense>
#include <cmath>

// 3x3 convolution plumbing shared by the forward pass and backpropagation.
// Feature maps are (channels x rows*cols) matrices with cells enumerated
// row-major; convolutions become one GEMM against an im2col patch matrix.

namespace certainnet::detail {

// kernel 3, zero padding 1
inline int conv_out_extent(int in, int stride) { return (in - 1) / stride + 1; }

// Patch matrix of shape (9*channels, out_rows*out_cols). Row block k*C..k*C+C-1
// holds kernel tap k = ky*3+kx, so each tap is a contiguous segment per column.
inline Eigen::MatrixXd im2col(const Eigen::Ref<const Eigen::MatrixXd>& input,
                              int rows, int cols, int stride) {
  const int C = static_cast<int>(input.rows());
  const int orows = conv_out_extent(rows, stride);
  const int ocols = conv_out_extent(cols, stride);
  Eigen::MatrixXd patches = Eigen::MatrixXd::Zero(
      static_cast<Eigen::Index>(9) * C, static_cast<Eigen::Index>(orows) * ocols);
  for (int orow = 0; orow < orows; ++orow) {
    for (int ky = 0; ky < 3; ++ky) {
      const int ir = orow * stride - 1 + ky;
      if (ir < 0 || ir >= rows) continue;
      for (int ocol = 0; ocol < ocols; ++ocol) {
        const Eigen::Index q = static_cast<Eigen::Index>(orow) * ocols + ocol;
        for (int kx = 0; kx < 3; ++kx) {
          const int ic = ocol * stride - 1 + kx;
          if (ic < 0 || ic >= cols) continue;
          const int k = ky * 3 + kx;
          patches.col(q).segment(static_cast<Eigen::Index>(k) * C, C) =
              input.col(static_cast<Eigen::Index>(ir) * cols + ic);
        }
      }
    }
  }
  return patches;
}

// Transpose of im2col: scatter-add patch gradients back onto the input map.
inline void col2im_add(const Eigen::Ref<const Eigen::MatrixXd>& patches, int rows,
                       int cols, int stride, Eigen::Ref<Eigen::MatrixXd> out) {
  const int C = static_cast<int>(out.rows());
  const int orows = conv_out_extent(rows, stride);
  const int ocols = conv_out_extent(cols, stride);
  for (int orow = 0; orow < orows; ++orow) {
    for (int ky = 0; ky < 3; ++ky) {
      const int ir = orow * stride - 1 + ky;
      if (ir < 0 || ir >= rows) continue;
      for (int ocol = 0; ocol < ocols; ++ocol) {
        const Eigen::Index q = static_cast<Eigen::Index>(orow) * ocols + ocol;
        for (int kx = 0; kx < 3; ++kx) {
          const int ic = ocol * stride - 1 + kx;
          if (ic < 0 || ic >= cols) continue;
          const int k = ky * 3 + kx;
          out.col(static_cast<Eigen::Index>(ir) * cols + ic) +=
              patches.col(q).segment(static_cast<Eigen::Index>(k) * C, C);
        }
      }
    }
  }
}

// ELU keeps the first derivative continuous, which keeps finite-difference
// gradient checks clean even near zero pre-activations.
inline double elu(double x) { return x > 0.0 ? x : std::expm1(x); }
inline double elu_grad(double pre) { return pre > 0.0 ? 1.0 : std::exp(pre); }

inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
inline double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace certainnet::detail
