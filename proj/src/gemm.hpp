#pragma once

// Row-major Eigen views shared by the convolution kernels.

#include <Eigen/Core>

namespace dspl::detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

inline ConstMatMap cmat(const double* p, Eigen::Index rows, Eigen::Index cols) {
  return ConstMatMap(p, rows, cols);
}

inline MatMap mat(double* p, Eigen::Index rows, Eigen::Index cols) {
  return MatMap(p, rows, cols);
}

}  // namespace dspl::detail
