#include "doctest.h"

#include "vasparse/calibration.hpp"
#include "vasparse/error.hpp"

#include <cmath>
#include <random>

using namespace vasparse;

TEST_CASE("sink weights") {
  SUBCASE("single position") {
    CHECK(sink_weights(Matrix(Matrix::Ones(1, 1))).weights(0) == 1.0);
  }

  SUBCASE("causal uniform attention matches partial harmonic sums") {
    const int n = 6;
    Matrix a = Matrix::Zero(n, n);
    for (int i = 0; i < n; ++i) a.row(i).head(i + 1).setConstant(1.0 / (i + 1));
    const Vector w = sink_weights(a).weights;
    double mass[n];
    double z = 0.0;
    for (int j = 0; j < n; ++j) {
      mass[j] = 0.0;
      for (int i = j + 1; i <= n; ++i) mass[j] += 1.0 / i;
      z += std::exp(mass[j]);
    }
    for (int j = 0; j < n; ++j) CHECK(w(j) == doctest::Approx(std::exp(mass[j]) / z).epsilon(1e-12));
    for (int j = 1; j < n; ++j) CHECK(w(j) < w(j - 1));
  }

  SUBCASE("dominant column receives the largest weight") {
    Matrix a = Matrix::Zero(5, 5);
    for (int i = 0; i < 5; ++i) {
      a.row(i).head(i + 1).setConstant(0.2 / (i + 1));
      a(i, std::min(i, 2)) += 0.8;
    }
    Eigen::Index best = 0;
    sink_weights(a).weights.maxCoeff(&best);
    CHECK(best == 2);
  }

  SUBCASE("shape checks") {
    CHECK_THROWS_AS(sink_weights(Matrix(Matrix::Ones(2, 3))), ShapeError);
    CHECK_THROWS_AS(sink_weights(Matrix(0, 0)), EmptyInputError);
  }
}

TEST_CASE("apply_penalty") {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> normal;
  const Vector s = Vector::NullaryExpr(7, [&] { return normal(rng); });
  Vector w = Vector::NullaryExpr(7, [&] { return std::exp(normal(rng)); });
  w /= w.sum();

  CHECK(apply_penalty(s, w, 0.0) == s);

  Vector one_hot = Vector::Zero(7);
  one_hot(2) = 1.0;
  const Vector r = apply_penalty(s, one_hot, 0.1);
  CHECK(r(2) == doctest::Approx(s(2)));
  for (int j = 0; j < 7; ++j)
    if (j != 2) CHECK(r(j) == doctest::Approx(1.1 * s(j)));

  const Vector out = apply_penalty(s, PenaltyVector{w, 0.1});
  for (int j = 0; j < 7; ++j) CHECK(out(j) == doctest::Approx(1.1 * s(j) - 0.1 * w(j) * s(j)).epsilon(1e-14));

  CHECK_THROWS_AS(apply_penalty(s, Vector(Vector::Ones(3)), 0.1), ShapeError);
}
