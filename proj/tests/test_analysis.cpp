#include "doctest.h"

#include "vasparse/analysis.hpp"
#include "vasparse/error.hpp"

#include <cmath>

using namespace vasparse;

namespace {

Matrix causal_uniform(int n) {
  Matrix a = Matrix::Zero(n, n);
  for (int i = 0; i < n; ++i) a.row(i).head(i + 1).setConstant(1.0 / (i + 1));
  return a;
}

}  // namespace

TEST_CASE("recall of simple rows") {
  const double half[] = {0.5};
  CHECK(recall_curve(Vector(Vector::Constant(10, 0.1)), half).recall_at_fraction[0] == doctest::Approx(0.5));

  Vector one_hot = Vector::Zero(10);
  one_hot(6) = 1.0;
  const double tenth[] = {0.1};
  CHECK(recall_curve(one_hot, tenth).recall_at_fraction[0] == 1.0);

  const double bad[] = {0.0};
  CHECK_THROWS_AS(recall_curve(one_hot, bad), PreconditionError);
}

TEST_CASE("recall over a head matrix uses only the causal prefix") {
  const Matrix a = causal_uniform(4);
  const double f[] = {0.5, 1.0};
  const RecallCurve c = recall_curve(a, f);
  // Rows keep ceil(0.5 n) of n: 1/1, 1/2, 2/3, 2/4.
  CHECK(c.recall_at_fraction[0] == doctest::Approx((1.0 + 0.5 + 2.0 / 3.0 + 0.5) / 4.0));
  CHECK(c.recall_at_fraction[1] == doctest::Approx(1.0));
}

TEST_CASE("recall curve is monotone in the fraction") {
  AttentionRecord record(1, 2);
  const std::vector<int> pos{0, 1, 2, 3, 4};
  for (int h = 0; h < 2; ++h) {
    for (int i = 0; i < 5; ++i) {
      Vector row(i + 1);
      for (int j = 0; j <= i; ++j) row(j) = 1.0 + h * j + (j == 0 ? 3.0 : 0.0);
      row /= row.sum();
      record.add_row(0, h, i, std::span<const int>(pos.data(), static_cast<std::size_t>(i + 1)), row);
    }
  }
  const RecallCurve c = recall_curve(record, default_fractions());
  CHECK(std::is_sorted(c.recall_at_fraction.begin(), c.recall_at_fraction.end()));
  CHECK(c.recall_at_fraction.back() == doctest::Approx(1.0));
}

TEST_CASE("modality density") {
  SUBCASE("all-image sequence leaves the text histogram empty") {
    const std::vector<Modality> tags(5, Modality::image);
    const ModalityDensity d = modality_density(causal_uniform(5), tags);
    CHECK(d.text_total() == 0);
    CHECK(d.image_total() == 15);
  }

  SUBCASE("hand-built 4-token record with 4 bins") {
    Matrix a = Matrix::Zero(4, 4);
    a(0, 0) = 1.0;
    a.row(1).head(2) << 0.1, 0.9;
    a.row(2).head(3) << 0.3, 0.3, 0.4;
    a.row(3).head(4) << 0.6, 0.1, 0.2, 0.1;
    const std::vector<Modality> tags{Modality::image, Modality::image, Modality::text_prompt, Modality::generated};
    const ModalityDensity d = modality_density(a, tags, 4);
    // image column entries: 1.0, 0.1, 0.3, 0.6 | 0.9, 0.3, 0.1
    CHECK(d.image_counts == std::vector<long>{2, 2, 1, 2});
    // text column entries: 0.4, 0.2 | 0.1
    CHECK(d.text_counts == std::vector<long>{2, 1, 0, 0});
    CHECK(d.bin_edges == std::vector<double>{0.0, 0.25, 0.5, 0.75, 1.0});
  }

  SUBCASE("tag count must match") {
    const std::vector<Modality> tags(3, Modality::image);
    CHECK_THROWS_AS(modality_density(causal_uniform(4), tags), ShapeError);
  }
}

TEST_CASE("sink detection") {
  SUBCASE("uniform full attention has no sinks") {
    CHECK(detect_sinks(Matrix(Matrix::Constant(8, 8, 1.0 / 8))).sinks().empty());
  }

  SUBCASE("dominant first column is flagged") {
    const int n = 12;
    Matrix a = Matrix::Zero(n, n);
    a(0, 0) = 1.0;
    for (int i = 1; i < n; ++i) {
      a(i, 0) = 0.9;
      a.row(i).segment(1, i).setConstant(0.1 / i);
    }
    const std::vector<Modality> tags(n, Modality::text_prompt);
    const SinkReport r = detect_sinks(a, 4.0, tags);
    CHECK(r.sinks() == std::vector<int>{0});
    CHECK(r.modality.size() == static_cast<std::size_t>(n));
  }

  SUBCASE("column masses are invariant to reordering rows") {
    Matrix a = causal_uniform(9);
    a(5, 2) += 3.0;
    CHECK(detect_sinks(a).sinks() == detect_sinks(Matrix(a.colwise().reverse())).sinks());
  }

  SUBCASE("threshold must exceed one") {
    CHECK_THROWS_AS(detect_sinks(causal_uniform(3), 1.0), PreconditionError);
  }
}
