#include "doctest.h"

#include "vasparse/error.hpp"
#include "vasparse/selection.hpp"

#include <bit>
#include <cmath>
#include <random>

using namespace vasparse;

namespace {

std::vector<int> kept_of(const SparseMask& m) { return m.kept(); }

struct Instance {
  Vector q;
  RowMatrix k;
  Vector p;
};

Instance random_instance(std::mt19937_64& rng, int n, int d) {
  std::normal_distribution<double> normal;
  Instance in{Vector::NullaryExpr(d, [&] { return normal(rng); }),
              RowMatrix::NullaryExpr(n, d, [&] { return normal(rng); }),
              Vector::NullaryExpr(n, [&] { return std::exp(normal(rng)); })};
  in.p /= in.p.sum();
  return in;
}

}  // namespace

TEST_CASE("saliency scores") {
  SUBCASE("equal image mass gives a uniform vector") {
    const std::vector<int> image{0};
    const Vector expected = Vector::Constant(2, 0.5);
    Matrix b(2, 3);
    b << 0.3, 0.0, 0.7, 0.3, 0.7, 0.0;
    CHECK(saliency_scores(b, image).isApprox(expected));
  }

  SUBCASE("a dominant image sum saturates") {
    Matrix a = Matrix::Zero(3, 2);
    a(1, 0) = 10.0;
    const std::vector<int> image{0};
    CHECK(saliency_scores(a, image)(1) > 0.99);
  }

  SUBCASE("random 6-token record matches scalar softmax") {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u;
    Matrix a = Matrix::NullaryExpr(6, 6, [&] { return u(rng); });
    const std::vector<int> image{0, 2, 3};
    double mass[6];
    double z = 0.0;
    for (int i = 0; i < 6; ++i) {
      mass[i] = a(i, 0) + a(i, 2) + a(i, 3);
      z += std::exp(mass[i]);
    }
    const Vector p = saliency_scores(a, image);
    for (int i = 0; i < 6; ++i) CHECK(p(i) == doctest::Approx(std::exp(mass[i]) / z).epsilon(1e-12));
  }

  SUBCASE("empty image set is degenerate") {
    CHECK_THROWS_AS(saliency_scores(Matrix(Matrix::Ones(2, 2)), std::vector<int>{}), DegenerateInputError);
  }
}

TEST_CASE("aggregated scores") {
  Vector q(2);
  q << 1.0, 0.0;
  RowMatrix k(3, 2);
  k << 2.0, 0.0, 1.0, 0.0, 0.0, 1.0;
  const Vector p = Vector::Constant(3, 1.0 / 3.0);
  CHECK(aggregated_scores(q, k, p, 0.0) == Vector((Vector(3) << 4.0, 1.0, 0.0).finished()));
  CHECK(aggregated_scores(Vector(Vector::Zero(2)), k, p, 0.1).isApprox(0.1 * p));

  std::mt19937_64 rng(2);
  const Instance in = random_instance(rng, 8, 5);
  const Vector delta = aggregated_scores(in.q, in.k, in.p, kDefaultLambda);
  for (int i = 0; i < 8; ++i) {
    double y = 0.0;
    for (int d = 0; d < 5; ++d) y += in.q(d) * in.k(i, d);
    CHECK(delta(i) == doctest::Approx(y * y + 0.1 * in.p(i)).epsilon(1e-12));
  }
  CHECK_THROWS_AS(aggregated_scores(in.q, in.k, in.p, -1.0), PreconditionError);
  CHECK_THROWS_AS(aggregated_scores(in.q, in.k, Vector(Vector::Ones(3)), 0.1), ShapeError);
}

TEST_CASE("top-S selection") {
  const Vector delta = (Vector(3) << 4.0, 1.0, 0.0).finished();
  CHECK(kept_of(select_top_s(delta, 2)) == std::vector<int>{0, 1});
  CHECK(select_top_s(delta, 3).keep.all());
  CHECK(kept_of(select_top_s(Vector(Vector::Ones(4)), 2)) == std::vector<int>{0, 1});
  CHECK_THROWS_AS(select_top_s(delta, 4), BudgetError);
  CHECK_THROWS_AS(select_top_s(delta, -1), BudgetError);
}

TEST_CASE("objective") {
  std::mt19937_64 rng(3);
  const Instance in = random_instance(rng, 5, 4);
  const double lambda = 0.1;

  const ObjectiveValue full = objective(in.q, in.k, select_top_s(in.p, 5), in.p, lambda);
  CHECK(full.attention_term == 0.0);
  CHECK(full.error == doctest::Approx(-lambda * in.p.sum()));

  const ObjectiveValue none = objective(in.q, in.k, select_top_s(in.p, 0), in.p, lambda);
  CHECK(none.saliency_term == 0.0);
  CHECK(none.error == doctest::Approx((in.k * in.q).squaredNorm()));

  const SparseMask m = select_top_s(in.p, 2);
  double expected = 0.0;
  for (int i = 0; i < 5; ++i) {
    double y = 0.0;
    for (int d = 0; d < 4; ++d) y += in.q(d) * in.k(i, d);
    const double keep = m.keep(i) ? 1.0 : 0.0;
    expected += (y - keep * y) * (y - keep * y) - lambda * in.p(i) * keep;
  }
  CHECK(objective(in.q, in.k, m, in.p, lambda).error == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("oracle agrees with greedy selection") {
  std::mt19937_64 rng(4);
  const double lambdas[] = {0.0, 0.1, 1.0};
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 12);
    const int s = 1 + static_cast<int>(rng() % static_cast<unsigned>(n));
    const double lambda = lambdas[trial % 3];
    const Instance in = random_instance(rng, n, 6);
    const Vector delta = aggregated_scores(in.q, in.k, in.p, lambda);
    const SparseMask greedy = select_top_s(delta, s);
    const auto [mask, value] = oracle_optimal_mask(in.q, in.k, in.p, lambda, s);
    CHECK(objective(in.q, in.k, greedy, in.p, lambda).error == value.error);

    // Continuous random deltas are strictly ordered, so the sets coincide.
    CHECK(kept_of(mask) == kept_of(greedy));
  }
}

TEST_CASE("oracle edge cases") {
  std::mt19937_64 rng(5);
  const Instance in = random_instance(rng, 6, 3);
  CHECK(oracle_optimal_mask(in.q, in.k, in.p, 0.1, 6).first.keep.all());
  const Instance big = random_instance(rng, 21, 3);
  CHECK_THROWS_AS(oracle_optimal_mask(big.q, big.k, big.p, 0.1, 3), TractabilityError);
  CHECK_THROWS_AS(oracle_optimal_mask(in.q, in.k, in.p, 0.1, 7), BudgetError);
}

TEST_CASE("frozen instance") {
  // Hand-solved: y = [3, -1, 0.5, 2], P = [0.1, 0.6, 0.2, 0.1], lambda = 1.
  // delta = [9.1, 1.6, 0.45, 4.1]; S = 2 keeps {0, 3}; E = 1 + 0.25 - 0.2.
  const Vector q = (Vector(1) << 1.0).finished();
  const RowMatrix k = (RowMatrix(4, 1) << 3.0, -1.0, 0.5, 2.0).finished();
  const Vector p = (Vector(4) << 0.1, 0.6, 0.2, 0.1).finished();
  const SparseMask m = select_top_s(aggregated_scores(q, k, p, 1.0), 2);
  CHECK(kept_of(m) == std::vector<int>{0, 3});
  CHECK(objective(q, k, m, p, 1.0).error == doctest::Approx(1.05));
  CHECK(oracle_optimal_mask(q, k, p, 1.0, 2).second.error == doctest::Approx(1.05));
}

TEST_CASE("density-peak aggregation") {
  SUBCASE("well separated clouds become two clusters") {
    std::mt19937_64 rng(6);
    std::normal_distribution<double> normal(0.0, 0.01);
    RowMatrix keys(10, 2);
    for (int i = 0; i < 10; ++i) {
      const double centre = i < 5 ? 0.0 : 100.0;
      keys(i, 0) = centre + normal(rng);
      keys(i, 1) = centre + normal(rng);
    }
    std::vector<int> idx(10);
    std::iota(idx.begin(), idx.end(), 0);
    const ClusterAssignment c = aggregate_discarded(keys, keys, idx, 3, 2);
    REQUIRE(c.num_peaks == 2);
    for (int i = 1; i < 5; ++i) CHECK(c.cluster_of[static_cast<std::size_t>(i)] == c.cluster_of[0]);
    for (int i = 6; i < 10; ++i) CHECK(c.cluster_of[static_cast<std::size_t>(i)] == c.cluster_of[5]);
    CHECK(c.cluster_of[0] != c.cluster_of[5]);
  }

  SUBCASE("single token is its own cluster") {
    const RowMatrix k = RowMatrix::Constant(1, 3, 2.0);
    const RowMatrix v = RowMatrix::Constant(1, 3, -1.0);
    const std::vector<int> idx{7};
    const ClusterAssignment c = aggregate_discarded(k, v, idx);
    CHECK(c.num_peaks == 1);
    CHECK(c.keys == k);
    CHECK(c.values == v);
    CHECK(c.representative(0) == 7);
  }

  SUBCASE("identical vectors collapse into one effective cluster") {
    const RowMatrix k = RowMatrix::Constant(6, 3, 1.5);
    std::vector<int> idx(6);
    std::iota(idx.begin(), idx.end(), 0);
    const ClusterAssignment c = aggregate_discarded(k, k, idx, 2, 3);
    int nonempty = 0;
    for (Eigen::Index r = 0; r < c.keys.rows(); ++r) {
      if (!c.keys.row(r).isZero()) {
        ++nonempty;
        CHECK(c.keys.row(r).isApprox(6.0 * k.row(0)));
      }
    }
    CHECK(nonempty == 1);
  }
}

TEST_CASE("sparsity budget") {
  CHECK(sparsity_budget(0.9, 10) == 9);
  CHECK(sparsity_budget(0.75, 40) == 30);
  CHECK(sparsity_budget(0.3, 10) == 3);
  CHECK(sparsity_budget(1.0, 7) == 7);
  CHECK(sparsity_budget(0.01, 7) == 1);
}
