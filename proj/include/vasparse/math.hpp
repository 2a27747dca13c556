#pragma once

#include "vasparse/types.hpp"

#include <cmath>
#include <limits>

namespace vasparse {

/// Numerically stable softmax (max-subtraction). Entries equal to -inf map to 0.
template <typename Derived>
VectorX<typename Derived::Scalar> softmax(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  VectorX<Scalar> out(x.size());
  if (x.size() == 0) return out;
  const Scalar peak = x.maxCoeff();
  out = (x.array() - peak).exp().matrix();
  out /= out.sum();
  return out;
}

template <typename Derived>
VectorX<typename Derived::Scalar> log_softmax(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  VectorX<Scalar> out(x.size());
  if (x.size() == 0) return out;
  const Scalar peak = x.maxCoeff();
  const Scalar log_z = peak + std::log((x.array() - peak).exp().sum());
  out = (x.array() - log_z).matrix();
  return out;
}

/// Index of the largest entry; ties resolve to the lowest index.
template <typename Derived>
Eigen::Index argmax(const Eigen::MatrixBase<Derived>& x) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < x.size(); ++i) {
    if (x(i) > x(best)) best = i;
  }
  return best;
}

template <typename Scalar = double>
constexpr Scalar negative_infinity() {
  return -std::numeric_limits<Scalar>::infinity();
}

}  // namespace vasparse
