#pragma once

#include <Eigen/Dense>

namespace certainnet {

// Per-cell scores on the output-stride lattice, (row, col) indexed.
using ScalarGrid = Eigen::MatrixXd;

// Per-cell vectors: a (channels x rows*cols) matrix with cells enumerated
// row-major, so each cell's vector is one contiguous column.
struct VectorGrid {
  int rows = 0;
  int cols = 0;
  Eigen::MatrixXd data;

  VectorGrid() = default;
  VectorGrid(int channels, int rows_in, int cols_in)
      : rows(rows_in),
        cols(cols_in),
        data(Eigen::MatrixXd::Zero(channels,
                                   static_cast<Eigen::Index>(rows_in) * cols_in)) {}

  int channels() const { return static_cast<int>(data.rows()); }
  Eigen::Index cells() const { return data.cols(); }

  auto cell(int r, int c) { return data.col(static_cast<Eigen::Index>(r) * cols + c); }
  auto cell(int r, int c) const {
    return data.col(static_cast<Eigen::Index>(r) * cols + c);
  }

  ScalarGrid channel(int k) const {
    ScalarGrid g(rows, cols);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c)
        g(r, c) = data(k, static_cast<Eigen::Index>(r) * cols + c);
    return g;
  }
};

inline Eigen::VectorXd grid_to_flat(const ScalarGrid& g) {
  Eigen::VectorXd v(g.size());
  Eigen::Index i = 0;
  for (Eigen::Index r = 0; r < g.rows(); ++r)
    for (Eigen::Index c = 0; c < g.cols(); ++c) v[i++] = g(r, c);
  return v;
}

inline ScalarGrid flat_to_grid(const Eigen::Ref<const Eigen::VectorXd>& v, int rows,
                               int cols) {
  ScalarGrid g(rows, cols);
  Eigen::Index i = 0;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) g(r, c) = v[i++];
  return g;
}

// Axis-aligned box: top-left corner plus size, in input pixels.
struct Box {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;

  double area() const { return (w > 0.0 && h > 0.0) ? w * h : 0.0; }
  double cx() const { return x + 0.5 * w; }
  double cy() const { return y + 0.5 * h; }
  double x2() const { return x + w; }
  double y2() const { return y + h; }

  static Box from_center(double cx, double cy, double w, double h) {
    return Box{cx - 0.5 * w, cy - 0.5 * h, w, h};
  }
};

}  // namespace certainnet
