#include "doctest.h"

#include "vasparse/attention.hpp"
#include "vasparse/error.hpp"
#include "vasparse/harness.hpp"
#include "vasparse/record.hpp"
#include "vasparse/reference.hpp"

#include <random>

using namespace vasparse;

namespace {

ModelConfig small_config(std::uint64_t seed) {
  ModelConfig c;
  c.vocab_size = 32;
  c.embed_dim = 16;
  c.num_heads = 2;
  c.head_dim = 8;
  c.num_layers = 2;
  c.max_seq_len = 64;
  c.rng_seed = seed;
  return c;
}

const std::vector<TokenId> kImage{3, 5, 7, 9};
const std::vector<TokenId> kPrompt{1, 2};

DecoderState ingested(std::uint64_t seed) {
  DecoderState s = init_model(small_config(seed));
  ingest(s, kImage, kPrompt);
  return s;
}

}  // namespace

TEST_CASE("same seed gives identical weights and first logits") {
  const DecoderState a = ingested(1);
  const DecoderState b = ingested(1);
  CHECK(a.weights->lm_head == b.weights->lm_head);
  CHECK(a.weights->layers[0].wq == b.weights->layers[0].wq);
  CHECK(a.last_logits == b.last_logits);
}

TEST_CASE("different seeds give different logits") {
  CHECK(ingested(1).last_logits != ingested(2).last_logits);
}

TEST_CASE("embed_dim must equal num_heads * head_dim") {
  ModelConfig c = small_config(0);
  c.embed_dim = 17;
  CHECK_THROWS_AS(init_model(c), ConfigError);
  c = small_config(0);
  c.num_layers = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("attention_step") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal;
  const Vector q = Vector::NullaryExpr(4, [&] { return normal(rng); });

  SUBCASE("single cached token scores 1") {
    const RowMatrix k = RowMatrix::NullaryExpr(1, 4, [&] { return normal(rng); });
    const RowMatrix v = RowMatrix::NullaryExpr(1, 4, [&] { return normal(rng); });
    const auto out = attention_step(q, k, v);
    REQUIRE(out.scores.size() == 1);
    CHECK(out.scores(0) == doctest::Approx(1.0));
    CHECK((out.context - v.row(0).transpose()).norm() < 1e-12);
  }

  SUBCASE("beta zero equals vanilla") {
    const RowMatrix k = RowMatrix::NullaryExpr(6, 4, [&] { return normal(rng); });
    const RowMatrix v = RowMatrix::NullaryExpr(6, 4, [&] { return normal(rng); });
    const Vector w = Vector::Constant(6, 1.0 / 6.0);
    CHECK(attention_step(q, k, v, w, 0.0).scores == attention_step(q, k, v).scores);
  }

  SUBCASE("uniform weights match direct scalar evaluation") {
    const int n = 8;
    const RowMatrix k = RowMatrix::NullaryExpr(n, 4, [&] { return normal(rng); });
    const RowMatrix v = RowMatrix::NullaryExpr(n, 4, [&] { return normal(rng); });
    const Vector w = Vector::Constant(n, 1.0 / n);
    const double beta = 0.1;
    std::vector<double> expected(n);
    double z = 0.0;
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int d = 0; d < 4; ++d) s += q(d) * k(j, d);
      s /= 2.0;
      expected[static_cast<std::size_t>(j)] = std::exp((1.0 + beta) * s - beta * w(j) * s);
      z += expected[static_cast<std::size_t>(j)];
    }
    const auto out = attention_step(q, k, v, w, beta);
    for (int j = 0; j < n; ++j) CHECK(out.scores(j) == doctest::Approx(expected[static_cast<std::size_t>(j)] / z).epsilon(1e-12));
  }

  SUBCASE("shape errors") {
    const RowMatrix k = RowMatrix::NullaryExpr(3, 4, [&] { return normal(rng); });
    const RowMatrix v = RowMatrix::NullaryExpr(3, 4, [&] { return normal(rng); });
    CHECK_THROWS_AS(attention_step(q, k, v, Vector::Ones(2), 0.1), ShapeError);
    CHECK_THROWS_AS(attention_step(q, RowMatrix(0, 4), RowMatrix(0, 4)), PreconditionError);
  }
}

TEST_CASE("decode_step determinism and contract") {
  DecoderState a = ingested(4);
  DecoderState b = ingested(4);
  for (TokenId t : {4, 8, 15}) CHECK(decode_step(a, t) == decode_step(b, t));

  DecoderState empty = init_model(small_config(4));
  CHECK_THROWS_AS(decode_step(empty, 1), PreconditionError);

  ModelConfig tight = small_config(4);
  tight.max_seq_len = kImage.size() + kPrompt.size();
  DecoderState full = init_model(tight);
  ingest(full, kImage, kPrompt);
  CHECK_THROWS_AS(decode_step(full, 1), CapacityError);
}

TEST_CASE("greedy chain of 8 matches the cache-free forward pass") {
  DecoderState s = ingested(5);
  std::vector<Vector> cached{s.last_logits};
  for (int t = 0; t < 8; ++t) {
    Eigen::Index best = 0;
    s.last_logits.maxCoeff(&best);
    cached.push_back(decode_step(s, static_cast<TokenId>(best)));
  }
  const RowMatrix full = reference_forward(s, s.sequence);
  const int prompt = static_cast<int>(kImage.size() + kPrompt.size());
  for (int t = 0; t <= 8; ++t) {
    CHECK((full.row(prompt - 1 + t).transpose() - cached[static_cast<std::size_t>(t)]).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("lm_head_only") {
  const DecoderState s = ingested(6);
  const int d = s.config.embed_dim;
  const RowMatrix zero = RowMatrix::Zero(1, d);
  CHECK(lm_head_only(s, zero) == s.weights->lm_bias);
  RowMatrix e = RowMatrix::Random(3, d);
  CHECK(lm_head_only(s, e) == lm_head_only(s, e));
  CHECK(lm_head_only(s, e, Pooling::mean).size() == s.config.vocab_size);
  CHECK(lm_head_only(s, e, Pooling::last).size() == s.config.vocab_size);
  CHECK_THROWS_AS(lm_head_only(s, RowMatrix(0, d)), EmptyInputError);
  CHECK_THROWS_AS(lm_head_only(s, RowMatrix::Zero(1, d + 1)), ShapeError);
}

TEST_CASE("recorded attention is causal and row-stochastic") {
  DecoderState s = init_model(small_config(7));
  AttentionRecord record(s.config.num_layers, s.config.num_heads);
  s.observer = record.observer();
  ingest(s, kImage, kPrompt);
  for (TokenId t : {4, 6, 8, 10}) decode_step(s, t);
  CHECK(record.length() == s.length());
  for (const Matrix& head : record.heads()) {
    for (Eigen::Index i = 0; i < head.rows(); ++i) {
      CHECK(head.row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(head.row(i).tail(head.cols() - i - 1).isZero());
    }
  }
}

TEST_CASE("grounding gain correlates image embeddings with the lm head") {
  ModelConfig plain = small_config(8);
  ModelConfig grounded = plain;
  grounded.grounding_gain = 1.0;
  const DecoderState a = init_model(plain);
  const DecoderState b = init_model(grounded);
  const Vector e = b.weights->image_embedding.row(3).transpose() - a.weights->image_embedding.row(3).transpose();
  const Vector h = a.weights->lm_head.row(3).transpose().normalized();
  CHECK(e.dot(h) == doctest::Approx(std::sqrt(static_cast<double>(plain.embed_dim))));
}
