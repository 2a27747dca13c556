#include "vasparse/selection.hpp"

#include <cmath>
#include <cstdint>
#include <limits>

namespace vasparse {

std::vector<int> SparseMask::kept() const {
  std::vector<int> out;
  for (Eigen::Index i = 0; i < keep.size(); ++i)
    if (keep(i)) out.push_back(static_cast<int>(i));
  return out;
}

std::vector<int> SparseMask::pruned() const {
  std::vector<int> out;
  for (Eigen::Index i = 0; i < keep.size(); ++i)
    if (!keep(i)) out.push_back(static_cast<int>(i));
  return out;
}

bool SparseMask::valid() const {
  return budget >= 0 && budget <= keep.size() && keep.count() == budget;
}

namespace {

SparseMask mask_from_bits(std::uint32_t bits, int length, int budget) {
  SparseMask m;
  m.keep.resize(length);
  for (int i = 0; i < length; ++i) m.keep(i) = ((bits >> i) & 1U) != 0;
  m.budget = budget;
  return m;
}

// True when the sorted index list of `a` is lexicographically smaller than
// that of `b`: the lowest differing bit belongs to `a`.
bool lexicographically_smaller(std::uint32_t a, std::uint32_t b) {
  const std::uint32_t diff = a ^ b;
  if (diff == 0) return false;
  return (a & (diff & (~diff + 1))) != 0;
}

}  // namespace

std::pair<SparseMask, ObjectiveValue> oracle_optimal_mask(const Eigen::Ref<const Vector>& query,
                                                          const Eigen::Ref<const RowMatrix>& keys,
                                                          const Eigen::Ref<const Vector>& saliency, double lambda,
                                                          int budget) {
  const int n = static_cast<int>(keys.rows());
  if (n > kOracleMaxLength) throw TractabilityError("oracle_optimal_mask: length exceeds 20");
  if (budget < 0 || budget > n) throw BudgetError("oracle_optimal_mask: budget exceeds token count");
  detail::require<ShapeError>(saliency.size() == n, "oracle_optimal_mask: saliency length differs");

  std::uint32_t best_bits = 0;
  ObjectiveValue best{std::numeric_limits<double>::infinity(), 0.0, 0.0, lambda};
  auto consider = [&](std::uint32_t bits) {
    const ObjectiveValue v = objective(query, keys, mask_from_bits(bits, n, budget), saliency, lambda);
    if (v.error < best.error || (v.error == best.error && lexicographically_smaller(bits, best_bits))) {
      best = v;
      best_bits = bits;
    }
  };

  if (budget == 0) {
    consider(0);
  } else {
    // Gosper's hack: all n-bit words with exactly `budget` bits set.
    const std::uint64_t limit = std::uint64_t{1} << n;
    std::uint64_t c = (std::uint64_t{1} << budget) - 1;
    while (c < limit) {
      consider(static_cast<std::uint32_t>(c));
      const std::uint64_t u = c & (~c + 1);
      const std::uint64_t v = c + u;
      c = v + (((v ^ c) / u) >> 2);
    }
  }
  return {mask_from_bits(best_bits, n, budget), best};
}

ClusterAssignment aggregate_discarded(const Eigen::Ref<const RowMatrix>& keys,
                                      const Eigen::Ref<const RowMatrix>& values, std::span<const int> indices,
                                      int k, int num_peaks) {
  const int n = static_cast<int>(keys.rows());
  detail::require<ShapeError>(values.rows() == n && static_cast<int>(indices.size()) == n,
                              "aggregate_discarded: keys, values and indices differ in length");
  ClusterAssignment out;
  out.members.assign(indices.begin(), indices.end());
  out.keys.resize(0, keys.cols());
  out.values.resize(0, values.cols());
  if (n == 0) return out;

  out.k = k <= 0 ? std::min(5, n - 1) : std::min(k, n - 1);
  const int requested = num_peaks <= 0 ? std::max(1, (n + 3) / 4) : std::min(num_peaks, n);

  Matrix dist(n, n);
  for (int i = 0; i < n; ++i) {
    dist(i, i) = 0.0;
    for (int j = i + 1; j < n; ++j) dist(i, j) = dist(j, i) = (keys.row(i) - keys.row(j)).norm();
  }

  std::vector<double> density(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  if (out.k > 0) {
    std::vector<double> row;
    for (int i = 0; i < n; ++i) {
      row.clear();
      for (int j = 0; j < n; ++j)
        if (j != i) row.push_back(dist(i, j));
      std::partial_sort(row.begin(), row.begin() + out.k, row.end());
      double mean = 0.0;
      for (int t = 0; t < out.k; ++t) mean += row[static_cast<std::size_t>(t)];
      mean /= out.k;
      if (mean > 0.0) density[static_cast<std::size_t>(i)] = 1.0 / mean;
    }
  }

  // Density rank: higher density first, lower index on ties.
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return density[static_cast<std::size_t>(a)] > density[static_cast<std::size_t>(b)];
  });

  std::vector<double> separation(static_cast<std::size_t>(n), 0.0);
  std::vector<int> parent(static_cast<std::size_t>(n), -1);
  const int densest = order.front();
  separation[static_cast<std::size_t>(densest)] = dist.row(densest).maxCoeff();
  for (int r = 1; r < n; ++r) {
    const int i = order[static_cast<std::size_t>(r)];
    double best = std::numeric_limits<double>::infinity();
    for (int s = 0; s < r; ++s) {
      const int j = order[static_cast<std::size_t>(s)];
      if (dist(i, j) < best) {
        best = dist(i, j);
        parent[static_cast<std::size_t>(i)] = j;
      }
    }
    separation[static_cast<std::size_t>(i)] = best;
  }

  std::vector<int> candidates;
  for (int r = 1; r < n; ++r) {
    const int i = order[static_cast<std::size_t>(r)];
    if (separation[static_cast<std::size_t>(i)] > 0.0) candidates.push_back(i);
  }
  auto gamma = [&](int i) {
    return density[static_cast<std::size_t>(i)] * separation[static_cast<std::size_t>(i)];
  };
  std::stable_sort(candidates.begin(), candidates.end(), [&](int a, int b) { return gamma(a) > gamma(b); });

  std::vector<int> cluster(static_cast<std::size_t>(n), -1);
  out.peak_members.push_back(densest);
  cluster[static_cast<std::size_t>(densest)] = 0;
  for (int i : candidates) {
    if (static_cast<int>(out.peak_members.size()) >= requested) break;
    cluster[static_cast<std::size_t>(i)] = static_cast<int>(out.peak_members.size());
    out.peak_members.push_back(i);
  }
  for (int i : order) {
    if (cluster[static_cast<std::size_t>(i)] < 0) {
      cluster[static_cast<std::size_t>(i)] = cluster[static_cast<std::size_t>(parent[static_cast<std::size_t>(i)])];
    }
  }

  out.num_peaks = static_cast<int>(out.peak_members.size());
  out.cluster_of = cluster;
  out.keys = RowMatrix::Zero(out.num_peaks, keys.cols());
  out.values = RowMatrix::Zero(out.num_peaks, values.cols());
  for (int i = 0; i < n; ++i) {
    out.keys.row(cluster[static_cast<std::size_t>(i)]) += keys.row(i);
    out.values.row(cluster[static_cast<std::size_t>(i)]) += values.row(i);
  }
  return out;
}

int sparsity_budget(double fraction, int n) {
  const int s = static_cast<int>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
  return std::clamp(s, 0, n);
}

}  // namespace vasparse
