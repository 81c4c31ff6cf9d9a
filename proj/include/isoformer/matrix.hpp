// Matrix aliases and the named parameter tensor used across the model.
#pragma once

#include <Eigen/Dense>
#include <string>
#include <utility>

#include "isoformer/error.hpp"

namespace isoformer {

template <typename Real>
using Mat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Real>
using Vec = Eigen::Matrix<Real, Eigen::Dynamic, 1>;

using Index = Eigen::Index;

// A named parameter with its gradient accumulator. Shapes are fixed at
// initialization; the optimizer and the checkpoint writer enumerate tensors
// through the owning struct's for_each_tensor.
template <typename Real>
struct Tensor {
  std::string name;
  Mat<Real> value;
  Mat<Real> grad;

  Tensor() = default;
  Tensor(std::string n, Mat<Real> v) : name(std::move(n)), value(std::move(v)) {
    grad = Mat<Real>::Zero(value.rows(), value.cols());
  }

  Index size() const { return value.size(); }
  void zero_grad() { grad.setZero(); }
};

template <typename Real>
bool all_finite(const Mat<Real>& m) {
  return m.allFinite();
}

}  // namespace isoformer
