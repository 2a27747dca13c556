#include "vasparse/model.hpp"

#include "vasparse/error.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <string>

namespace vasparse {

namespace {

constexpr double kLayerNormEps = 1e-5;

Matrix random_matrix(std::mt19937_64& rng, int rows, int cols, double stddev) {
  std::normal_distribution<double> normal(0.0, stddev);
  Matrix m(rows, cols);
  for (int c = 0; c < cols; ++c)
    for (int r = 0; r < rows; ++r) m(r, c) = normal(rng);
  return m;
}

RowMatrix random_row_matrix(std::mt19937_64& rng, int rows, int cols, double stddev) {
  std::normal_distribution<double> normal(0.0, stddev);
  RowMatrix m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = normal(rng);
  return m;
}

RowMatrix sinusoidal_positions(int length, int dim) {
  RowMatrix pe(length, dim);
  for (int p = 0; p < length; ++p) {
    for (int i = 0; i < dim; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / dim);
      pe(p, i) = (i % 2 == 0) ? std::sin(p * freq) : std::cos(p * freq);
    }
  }
  return pe;
}

void forward_token(DecoderState& state, TokenId token, Modality modality) {
  const ModelConfig& cfg = state.config;
  const ModelWeights& w = *state.weights;
  if (state.length() >= cfg.max_seq_len) {
    throw CapacityError("sequence length would exceed max_seq_len (" + std::to_string(cfg.max_seq_len) + ")");
  }
  detail::require<PreconditionError>(token >= 0 && token < cfg.vocab_size, "token id outside vocabulary");

  const int position = state.length();
  state.sequence.tokens.push_back(token);
  state.sequence.modalities.push_back(modality);

  const Vector embedding = token_embedding(state, token, modality);
  state.embedding_sum += embedding;
  Vector x = embedding + w.position_embedding.row(position).transpose();

  const int hd = cfg.head_dim;
  Vector context(cfg.embed_dim);
  for (int l = 0; l < cfg.num_layers; ++l) {
    const LayerWeights& lw = w.layers[static_cast<std::size_t>(l)];
    const Vector h = layer_norm(x);
    const Vector q = lw.wq * h;
    const Vector k = lw.wk * h;
    const Vector v = lw.wv * h;
    const bool last_layer = (l == cfg.num_layers - 1);

    for (int head = 0; head < cfg.num_heads; ++head) {
      HeadCache& cache = state.cache(l, head);
      cache.append(k.segment(head * hd, hd), v.segment(head * hd, hd), position);
      cache.last_query = q.segment(head * hd, hd);

      const auto out = (cache.penalty_active && state.beta != 0.0)
                           ? attention_step(cache.last_query, cache.live_keys(), cache.live_values(),
                                            cache.live_penalty(), state.beta)
                           : attention_step(cache.last_query, cache.live_keys(), cache.live_values());

      cache.cumulative_mass.head(cache.size) += out.scores;
      if (last_layer) {
        double image_mass = 0.0;
        for (int r = 0; r < cache.size; ++r) {
          if (state.is_image_position(cache.position_ids[static_cast<std::size_t>(r)])) image_mass += out.scores(r);
        }
        state.image_attention[static_cast<std::size_t>(head)](position) = image_mass;
      }
      if (state.observer) {
        state.observer(AttentionTrace{TraceKind::attention, l, head, position, cache.live_positions(), out.scores});
      }
      context.segment(head * hd, hd) = out.context;
    }
    x += lw.wo * context;
    const Vector hidden = (lw.w1 * layer_norm(x)).unaryExpr([](double a) { return gelu(a); });
    x += lw.w2 * hidden;
  }
  state.last_logits = lm_head_logits(state, x);
}

}  // namespace

void ModelConfig::validate() const {
  if (vocab_size < 2) throw ConfigError("vocab_size must be >= 2");
  if (num_layers < 1) throw ConfigError("num_layers must be >= 1");
  if (max_seq_len < 2) throw ConfigError("max_seq_len must be >= 2");
  if (num_heads < 1 || head_dim < 1) throw ConfigError("num_heads and head_dim must be positive");
  if (embed_dim != num_heads * head_dim) {
    throw ConfigError("embed_dim (" + std::to_string(embed_dim) + ") must equal num_heads * head_dim (" +
                      std::to_string(num_heads * head_dim) + ")");
  }
  if (!(grounding_gain >= 0.0)) throw ConfigError("grounding_gain must be >= 0");
}

HeadCache::HeadCache(int capacity, int head_dim)
    : keys(capacity, head_dim),
      values(capacity, head_dim),
      position_ids(static_cast<std::size_t>(capacity), -1),
      aggregated(static_cast<std::size_t>(capacity), 0),
      cumulative_mass(Vector::Zero(capacity)),
      penalty(Vector::Zero(capacity)),
      last_query(Vector::Zero(head_dim)) {}

void HeadCache::append(const Eigen::Ref<const Vector>& key, const Eigen::Ref<const Vector>& value, int position) {
  if (size >= keys.rows()) throw CapacityError("KV cache capacity exhausted");
  keys.row(size) = key.transpose();
  values.row(size) = value.transpose();
  position_ids[static_cast<std::size_t>(size)] = position;
  aggregated[static_cast<std::size_t>(size)] = 0;
  cumulative_mass(size) = 0.0;
  penalty(size) = 0.0;
  ++size;
}

void HeadCache::compact(std::span<const int> kept_rows, const RowMatrix& agg_keys, const RowMatrix& agg_values,
                        std::span<const int> agg_positions, std::span<const double> agg_mass) {
  detail::require<ShapeError>(agg_keys.rows() == agg_values.rows() &&
                                  agg_keys.rows() == static_cast<Eigen::Index>(agg_positions.size()) &&
                                  agg_positions.size() == agg_mass.size(),
                              "compact: aggregate row fields disagree in length");
  int out = 0;
  for (int row : kept_rows) {
    detail::require<ShapeError>(row >= out && row < size, "compact: kept rows must be ascending live rows");
    if (row != out) {
      keys.row(out) = keys.row(row);
      values.row(out) = values.row(row);
      position_ids[static_cast<std::size_t>(out)] = position_ids[static_cast<std::size_t>(row)];
      aggregated[static_cast<std::size_t>(out)] = aggregated[static_cast<std::size_t>(row)];
      cumulative_mass(out) = cumulative_mass(row);
    }
    ++out;
  }
  for (Eigen::Index a = 0; a < agg_keys.rows(); ++a) {
    keys.row(out) = agg_keys.row(a);
    values.row(out) = agg_values.row(a);
    position_ids[static_cast<std::size_t>(out)] = agg_positions[static_cast<std::size_t>(a)];
    aggregated[static_cast<std::size_t>(out)] = 1;
    cumulative_mass(out) = agg_mass[static_cast<std::size_t>(a)];
    ++out;
  }
  size = out;
  penalty_active = false;
}

void HeadCache::set_penalty(const Vector& weights) {
  detail::require<ShapeError>(weights.size() == size, "set_penalty: weight length differs from cache length");
  penalty.setZero();
  penalty.head(size) = weights;
  penalty_active = true;
}

DecoderState init_model(const ModelConfig& config) {
  config.validate();
  const int d = config.embed_dim;
  const int v = config.vocab_size;
  const int ffn = 2 * d;
  const double proj_std = 1.0 / std::sqrt(static_cast<double>(d));

  std::mt19937_64 rng(config.rng_seed);
  auto weights = std::make_shared<ModelWeights>();
  weights->lm_head = random_row_matrix(rng, v, d, proj_std);
  weights->lm_bias = random_matrix(rng, v, 1, 0.1).col(0);
  weights->text_embedding = random_row_matrix(rng, v, d, 1.0);
  weights->image_embedding = random_row_matrix(rng, v, d, 1.0);
  if (config.grounding_gain > 0.0) {
    for (int t = 0; t < v; ++t) {
      weights->image_embedding.row(t) +=
          config.grounding_gain * std::sqrt(static_cast<double>(d)) * weights->lm_head.row(t).normalized();
    }
  }
  weights->position_embedding = sinusoidal_positions(config.max_seq_len, d);

  const Matrix eye = Matrix::Identity(d, d);
  for (int l = 0; l < config.num_layers; ++l) {
    LayerWeights lw;
    lw.wq = random_matrix(rng, d, d, proj_std);
    lw.wk = random_matrix(rng, d, d, proj_std);
    lw.wv = random_matrix(rng, d, d, proj_std) + config.grounding_gain * eye;
    lw.wo = random_matrix(rng, d, d, proj_std) + config.grounding_gain * eye;
    lw.w1 = random_matrix(rng, ffn, d, proj_std);
    lw.w2 = random_matrix(rng, d, ffn, 0.5 / std::sqrt(static_cast<double>(ffn)));
    weights->layers.push_back(std::move(lw));
  }

  DecoderState state;
  state.config = config;
  state.weights = std::move(weights);
  state.caches.assign(static_cast<std::size_t>(config.num_layers * config.num_heads),
                      HeadCache(config.max_seq_len, config.head_dim));
  state.image_attention.assign(static_cast<std::size_t>(config.num_heads), Vector::Zero(config.max_seq_len));
  state.embedding_sum = Vector::Zero(d);
  return state;
}

const Vector& ingest(DecoderState& state, std::span<const TokenId> image_tokens,
                     std::span<const TokenId> prompt_tokens) {
  detail::require<PreconditionError>(state.length() == 0, "ingest: state already holds a sequence");
  detail::require<PreconditionError>(!image_tokens.empty() || !prompt_tokens.empty(), "ingest: empty prompt");
  if (image_tokens.size() + prompt_tokens.size() > static_cast<std::size_t>(state.config.max_seq_len)) {
    throw CapacityError("prompt longer than max_seq_len");
  }
  for (TokenId t : image_tokens) forward_token(state, t, Modality::image);
  for (TokenId t : prompt_tokens) forward_token(state, t, Modality::text_prompt);
  return state.last_logits;
}

const Vector& decode_step(DecoderState& state, TokenId token) {
  detail::require<PreconditionError>(state.length() > 0, "decode_step: prompt must be ingested first");
  forward_token(state, token, Modality::generated);
  return state.last_logits;
}

Eigen::Ref<const Vector> token_embedding(const DecoderState& state, TokenId token, Modality modality) {
  const RowMatrix& table =
      modality == Modality::image ? state.weights->image_embedding : state.weights->text_embedding;
  return table.row(token).transpose();
}

Vector lm_head_logits(const DecoderState& state, const Eigen::Ref<const Vector>& embedding) {
  detail::require<ShapeError>(embedding.size() == state.config.embed_dim, "lm_head: embedding width differs from D");
  return state.weights->lm_head * layer_norm(embedding) + state.weights->lm_bias;
}

Vector lm_head_only(const DecoderState& state, const Eigen::Ref<const RowMatrix>& embeddings, Pooling pooling) {
  detail::require<ShapeError>(embeddings.cols() == state.config.embed_dim, "lm_head_only: embedding width differs from D");
  detail::require<EmptyInputError>(embeddings.rows() > 0, "lm_head_only: empty embedding sequence");
  if (pooling == Pooling::last) return lm_head_logits(state, embeddings.row(embeddings.rows() - 1).transpose());
  const Vector pooled = embeddings.colwise().mean().transpose();
  return lm_head_logits(state, pooled);
}

Vector layer_norm(const Eigen::Ref<const Vector>& x) {
  const double mean = x.mean();
  const Vector centered = x.array() - mean;
  const double var = centered.squaredNorm() / static_cast<double>(x.size());
  return centered / std::sqrt(var + kLayerNormEps);
}

double gelu(double x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2 / pi)
  return 0.5 * x * (1.0 + std::tanh(kC * (x + 0.044715 * x * x * x)));
}

}  // namespace vasparse
