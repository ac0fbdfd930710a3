#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <string>

namespace aspmtl {

// Dense row-major storage, so `data()` is the row-major layout used on disk.
// Vectors are column tensors [n x 1].
template <typename Scalar>
using TensorT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Tensor = TensorT<double>;
using Index = Eigen::Index;

template <typename Derived>
std::string shape_string(const Eigen::DenseBase<Derived>& m) {
  return "[" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + "]";
}

inline std::string shape_string(Index rows, Index cols) {
  return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]";
}

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      if (!std::isfinite(m(i, j))) return false;
    }
  }
  return true;
}

inline Tensor column(std::initializer_list<double> values) {
  Tensor t(static_cast<Index>(values.size()), 1);
  Index i = 0;
  for (double v : values) t(i++, 0) = v;
  return t;
}

}  // namespace aspmtl
