#pragma once

// Attention-sink penalty: weights from cumulative column mass, and the
// recalibration (1 + beta) s - beta (w * s) applied to raw scores.

#include "vasparse/error.hpp"
#include "vasparse/math.hpp"
#include "vasparse/types.hpp"

namespace vasparse {

struct PenaltyVector {
  Vector weights;  // softmax of cumulative column mass, sums to 1
  double beta = 0.1;

  Eigen::Index size() const { return weights.size(); }
};

/// Penalty weights from already-accumulated column masses.
template <typename Derived>
PenaltyVector sink_weights_from_mass(const Eigen::MatrixBase<Derived>& cumulative_mass,
                                     double beta = 0.1) {
  detail::require<EmptyInputError>(cumulative_mass.size() > 0, "sink_weights: empty record");
  return PenaltyVector{softmax(cumulative_mass.template cast<double>()), beta};
}

/// Penalty weights for one head's lower-triangular attention matrix
/// (row i = query at position i). Column j accumulates rows j..L-1.
template <typename Derived>
PenaltyVector sink_weights(const Eigen::MatrixBase<Derived>& attention, double beta = 0.1) {
  detail::require<EmptyInputError>(attention.rows() > 0 && attention.cols() > 0,
                                   "sink_weights: empty record");
  detail::require<ShapeError>(attention.rows() == attention.cols(),
                              "sink_weights: attention matrix must be square");
  const Eigen::Index n = attention.cols();
  Vector mass(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    mass(j) = attention.col(j).tail(n - j).sum();
  }
  return sink_weights_from_mass(mass, beta);
}

/// out_j = (1 + beta) s_j - beta * w_j * s_j. Positively homogeneous in s.
template <typename DerivedS, typename DerivedW>
VectorX<typename DerivedS::Scalar> apply_penalty(const Eigen::MatrixBase<DerivedS>& scores,
                                                 const Eigen::MatrixBase<DerivedW>& weights,
                                                 double beta) {
  using Scalar = typename DerivedS::Scalar;
  detail::require<ShapeError>(scores.size() == weights.size(),
                              "apply_penalty: score/penalty length mismatch");
  const Scalar b = static_cast<Scalar>(beta);
  return ((Scalar(1) + b) * scores.array() - b * (weights.array().template cast<Scalar>() * scores.array()))
      .matrix();
}

template <typename DerivedS>
VectorX<typename DerivedS::Scalar> apply_penalty(const Eigen::MatrixBase<DerivedS>& scores,
                                                 const PenaltyVector& penalty) {
  return apply_penalty(scores, penalty.weights, penalty.beta);
}

}  // namespace vasparse
