#pragma once

// Visual-aware top-S token selection. The aggregated score
//   delta_i = <q, K_i>^2 + lambda * P_i
// ranks cached tokens; keeping the S largest minimizes
//   E(M) = sum_i (<q, K_i> - M_i <q, K_i>)^2 - lambda * P_i * M_i
// over all masks with sum_i M_i = S. The exhaustive oracle checks that claim.

#include "vasparse/error.hpp"
#include "vasparse/math.hpp"
#include "vasparse/types.hpp"

#include <algorithm>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

namespace vasparse {

inline constexpr double kDefaultLambda = 0.1;
inline constexpr int kOracleMaxLength = 20;

struct SparseMask {
  Eigen::Array<bool, Eigen::Dynamic, 1> keep;
  int budget = 0;
  int layer = -1;
  int head = -1;

  Eigen::Index size() const { return keep.size(); }
  std::vector<int> kept() const;
  std::vector<int> pruned() const;
  /// sum(keep) == budget and budget <= size().
  bool valid() const;
};

struct ObjectiveValue {
  double error = 0.0;           // attention_term - lambda * saliency_term
  double attention_term = 0.0;  // sum_i (y_i - M_i y_i)^2
  double saliency_term = 0.0;   // sum_i P_i M_i
  double lambda = 0.0;
};

/// Softmax-normalized visual saliency from per-token image-attention mass.
template <typename Derived>
VectorX<typename Derived::Scalar> saliency_from_image_mass(const Eigen::MatrixBase<Derived>& image_mass) {
  detail::require<EmptyInputError>(image_mass.size() > 0, "saliency: no tokens");
  return softmax(image_mass);
}

/// P_i = softmax_i(sum_{k in image_set} a_{i,k}) over the rows of a head's
/// attention matrix. Rejects an empty image set.
template <typename Derived>
VectorX<typename Derived::Scalar> saliency_scores(const Eigen::MatrixBase<Derived>& attention,
                                                  std::span<const int> image_set) {
  using Scalar = typename Derived::Scalar;
  detail::require<DegenerateInputError>(!image_set.empty(), "saliency_scores: empty image token set");
  detail::require<EmptyInputError>(attention.rows() > 0, "saliency_scores: empty record");
  VectorX<Scalar> mass = VectorX<Scalar>::Zero(attention.rows());
  for (int k : image_set) {
    detail::require<ShapeError>(k >= 0 && k < attention.cols(), "saliency_scores: image position out of range");
    mass += attention.col(k);
  }
  return saliency_from_image_mass(mass);
}

template <typename DerivedQ, typename DerivedK, typename DerivedP>
VectorX<typename DerivedK::Scalar> aggregated_scores(const Eigen::MatrixBase<DerivedQ>& query,
                                                     const Eigen::MatrixBase<DerivedK>& keys,
                                                     const Eigen::MatrixBase<DerivedP>& saliency, double lambda) {
  using Scalar = typename DerivedK::Scalar;
  detail::require<ShapeError>(keys.cols() == query.size(), "aggregated_scores: query/key width differ");
  detail::require<ShapeError>(keys.rows() == saliency.size(), "aggregated_scores: saliency length differs");
  detail::require<PreconditionError>(lambda >= 0.0, "aggregated_scores: lambda must be >= 0");
  const VectorX<Scalar> y = keys * query;
  return (y.array().square() + static_cast<Scalar>(lambda) * saliency.array()).matrix();
}

/// Variant with a per-token weight on the attention term:
/// delta_i = w_i <q, K_i>^2 + lambda * P_i.
template <typename DerivedQ, typename DerivedK, typename DerivedP, typename DerivedW>
VectorX<typename DerivedK::Scalar> aggregated_scores(const Eigen::MatrixBase<DerivedQ>& query,
                                                     const Eigen::MatrixBase<DerivedK>& keys,
                                                     const Eigen::MatrixBase<DerivedP>& saliency, double lambda,
                                                     const Eigen::MatrixBase<DerivedW>& token_weights) {
  using Scalar = typename DerivedK::Scalar;
  detail::require<ShapeError>(token_weights.size() == keys.rows(), "aggregated_scores: weight length differs");
  detail::require<ShapeError>(keys.cols() == query.size(), "aggregated_scores: query/key width differ");
  detail::require<ShapeError>(keys.rows() == saliency.size(), "aggregated_scores: saliency length differs");
  detail::require<PreconditionError>(lambda >= 0.0, "aggregated_scores: lambda must be >= 0");
  const VectorX<Scalar> y = keys * query;
  return (token_weights.array() * y.array().square() + static_cast<Scalar>(lambda) * saliency.array()).matrix();
}

/// Keeps the `budget` largest scores; ties go to the lower index.
template <typename Derived>
SparseMask select_top_s(const Eigen::MatrixBase<Derived>& delta, Eigen::Index budget) {
  const Eigen::Index n = delta.size();
  if (budget < 0 || budget > n) throw BudgetError("select_top_s: budget exceeds token count");
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return delta(a) > delta(b); });
  SparseMask mask;
  mask.keep = Eigen::Array<bool, Eigen::Dynamic, 1>::Constant(n, false);
  for (Eigen::Index r = 0; r < budget; ++r) mask.keep(order[static_cast<std::size_t>(r)]) = true;
  mask.budget = static_cast<int>(budget);
  return mask;
}

template <typename DerivedQ, typename DerivedK, typename DerivedP>
ObjectiveValue objective(const Eigen::MatrixBase<DerivedQ>& query, const Eigen::MatrixBase<DerivedK>& keys,
                         const SparseMask& mask, const Eigen::MatrixBase<DerivedP>& saliency, double lambda) {
  detail::require<ShapeError>(keys.cols() == query.size(), "objective: query/key width differ");
  detail::require<ShapeError>(keys.rows() == saliency.size() && keys.rows() == mask.size(),
                              "objective: mask/saliency/key lengths differ");
  detail::require<PreconditionError>(mask.valid(), "objective: mask violates its budget");
  const Vector y = (keys * query).template cast<double>();
  ObjectiveValue v;
  v.lambda = lambda;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double m = mask.keep(i) ? 1.0 : 0.0;
    const double r = y(i) - m * y(i);
    const double p = static_cast<double>(saliency(i));
    v.error += r * r - lambda * p * m;
    v.attention_term += r * r;
    v.saliency_term += p * m;
  }
  return v;
}

/// Exhaustive minimizer of the objective over all C(L, S) masks (L <= 20).
/// Equal objectives resolve to the mask whose kept indices are
/// lexicographically smallest, matching select_top_s's tie rule.
std::pair<SparseMask, ObjectiveValue> oracle_optimal_mask(const Eigen::Ref<const Vector>& query,
                                                          const Eigen::Ref<const RowMatrix>& keys,
                                                          const Eigen::Ref<const Vector>& saliency, double lambda,
                                                          int budget);

/// Discarded tokens merged by k-nearest-neighbour density peaks. Each cluster
/// becomes one row holding the element-wise sum of its members.
struct ClusterAssignment {
  std::vector<int> members;     // original indices of the discarded rows
  std::vector<int> cluster_of;  // cluster id per member
  std::vector<int> peak_members;  // member slot of each cluster's peak
  RowMatrix keys;    // num_peaks x head_dim, summed
  RowMatrix values;  // num_peaks x head_dim, summed
  int k = 0;
  int num_peaks = 0;

  bool empty() const { return members.empty(); }
  int representative(int cluster) const {
    return members[static_cast<std::size_t>(peak_members[static_cast<std::size_t>(cluster)])];
  }
};

/// k <= 0 selects min(5, n - 1); num_peaks <= 0 selects max(1, ceil(n / 4)).
/// Density is the inverse mean distance to the k nearest neighbours in key
/// space; separation is the distance to the nearest denser point. Peaks are
/// the largest density x separation; a point with zero separation (an exact
/// duplicate of a denser point) is never a peak, so fewer clusters than
/// requested can come back.
ClusterAssignment aggregate_discarded(const Eigen::Ref<const RowMatrix>& keys,
                                      const Eigen::Ref<const RowMatrix>& values, std::span<const int> indices,
                                      int k = 0, int num_peaks = 0);

/// ceil(fraction * n) with a tolerance so that e.g. 0.9 * 10 stays 9.
int sparsity_budget(double fraction, int n);

}  // namespace vasparse
