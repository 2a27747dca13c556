#pragma once

#include "vasparse/calibration.hpp"
#include "vasparse/error.hpp"
#include "vasparse/math.hpp"

#include <cmath>

namespace vasparse {

template <typename Scalar>
struct AttentionOutput {
  VectorX<Scalar> scores;   // post-softmax row over the cached keys
  VectorX<Scalar> context;  // scores^T V
};

namespace detail {

template <typename DerivedQ, typename DerivedK, typename DerivedV>
void check_attention_shapes(const Eigen::MatrixBase<DerivedQ>& query, const Eigen::MatrixBase<DerivedK>& keys,
                            const Eigen::MatrixBase<DerivedV>& values) {
  require<PreconditionError>(keys.rows() > 0, "attention_step: empty cache");
  require<ShapeError>(keys.rows() == values.rows(), "attention_step: key/value rows differ");
  require<ShapeError>(keys.cols() == query.size(), "attention_step: query/key width differ");
}

template <typename Scalar, typename DerivedV>
AttentionOutput<Scalar> finish_attention(const VectorX<Scalar>& raw, const Eigen::MatrixBase<DerivedV>& values) {
  AttentionOutput<Scalar> out;
  out.scores = softmax(raw);
  out.context = values.transpose() * out.scores;
  return out;
}

}  // namespace detail

/// Raw cached-attention logits q K^T / sqrt(head_dim).
template <typename DerivedQ, typename DerivedK>
VectorX<typename DerivedQ::Scalar> attention_logits(const Eigen::MatrixBase<DerivedQ>& query,
                                                    const Eigen::MatrixBase<DerivedK>& keys) {
  using Scalar = typename DerivedQ::Scalar;
  return (keys * query) / std::sqrt(static_cast<Scalar>(query.size()));
}

/// Single-query cached attention, no penalty.
template <typename DerivedQ, typename DerivedK, typename DerivedV>
AttentionOutput<typename DerivedQ::Scalar> attention_step(const Eigen::MatrixBase<DerivedQ>& query,
                                                          const Eigen::MatrixBase<DerivedK>& keys,
                                                          const Eigen::MatrixBase<DerivedV>& values) {
  detail::check_attention_shapes(query, keys, values);
  return detail::finish_attention(attention_logits(query, keys), values);
}

/// Single-query cached attention with the sink penalty applied to the raw
/// scores before the softmax. beta == 0 leaves the scores untouched.
template <typename DerivedQ, typename DerivedK, typename DerivedV, typename DerivedW>
AttentionOutput<typename DerivedQ::Scalar> attention_step(const Eigen::MatrixBase<DerivedQ>& query,
                                                          const Eigen::MatrixBase<DerivedK>& keys,
                                                          const Eigen::MatrixBase<DerivedV>& values,
                                                          const Eigen::MatrixBase<DerivedW>& penalty,
                                                          double beta) {
  detail::check_attention_shapes(query, keys, values);
  detail::require<ShapeError>(penalty.size() == keys.rows(),
                              "attention_step: penalty length differs from cache length");
  auto raw = attention_logits(query, keys);
  if (beta != 0.0) raw = apply_penalty(raw, penalty, beta);
  return detail::finish_attention(raw, values);
}

}  // namespace vasparse
