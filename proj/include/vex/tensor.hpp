#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace vex {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

/// Dense 2D tensor of doubles, row-major. Vectors are 1xN or Nx1.
/// Storage is SIMD-aligned so Eigen kernels pick the same code path on
/// every run regardless of where the heap lands.
struct Tensor {
  int rows = 0;
  int cols = 0;
  std::vector<double, Eigen::aligned_allocator<double>> data;

  Tensor() = default;
  Tensor(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0) {}

  static Tensor zeros(int r, int c) { return Tensor(r, c); }

  static Tensor scalar(double v) {
    Tensor t(1, 1);
    t.data[0] = v;
    return t;
  }

  static Tensor from(const Mat& m) {
    Tensor t(static_cast<int>(m.rows()), static_cast<int>(m.cols()));
    Eigen::Map<Mat>(t.data.data(), t.rows, t.cols) = m;
    return t;
  }

  int size() const { return rows * cols; }

  double& at(int i, int j) { return data[static_cast<size_t>(i) * cols + j]; }
  double at(int i, int j) const { return data[static_cast<size_t>(i) * cols + j]; }

  Eigen::Map<Mat> map() { return Eigen::Map<Mat>(data.data(), rows, cols); }
  Eigen::Map<const Mat> map() const { return Eigen::Map<const Mat>(data.data(), rows, cols); }

  bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace vex
