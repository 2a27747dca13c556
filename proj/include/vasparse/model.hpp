#pragma once

// Deterministic toy multimodal decoder: seeded random weights, pre-norm
// transformer blocks, per-head KV caches that the sparsification stack can
// prune and extend with aggregated rows.

#include "vasparse/attention.hpp"
#include "vasparse/record.hpp"
#include "vasparse/types.hpp"

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

namespace vasparse {

struct ModelConfig {
  int vocab_size = 256;
  int embed_dim = 64;
  int num_heads = 4;
  int head_dim = 16;
  int num_layers = 4;
  int max_seq_len = 1024;
  std::uint64_t rng_seed = 0;
  /// Strength of the copy bias: image embeddings aligned with LM-head rows and
  /// identity-leaning value/output projections. 0 gives a plain random model.
  double grounding_gain = 0.0;

  /// Throws ConfigError when an invariant is violated.
  void validate() const;
};

struct LayerWeights {
  Matrix wq, wk, wv, wo;  // D x D, applied as W x
  Matrix w1;              // F x D
  Matrix w2;              // D x F
};

struct ModelWeights {
  RowMatrix text_embedding;      // vocab x D
  RowMatrix image_embedding;     // vocab x D, distinct table for image tokens
  RowMatrix position_embedding;  // max_seq_len x D, sinusoidal
  std::vector<LayerWeights> layers;
  RowMatrix lm_head;  // vocab x D
  Vector lm_bias;     // vocab
};

/// Cached keys/values for one (layer, head). Rows [0, size) are live; the
/// backing storage has max_seq_len rows so appends never reallocate.
struct HeadCache {
  RowMatrix keys;
  RowMatrix values;
  std::vector<int> position_ids;
  std::vector<std::uint8_t> aggregated;
  Vector cumulative_mass;  // attention received by each live row so far
  Vector penalty;          // applied sink weights, valid when penalty_active
  bool penalty_active = false;
  Vector last_query;
  int size = 0;

  HeadCache() = default;
  HeadCache(int capacity, int head_dim);

  auto live_keys() const { return keys.topRows(size); }
  auto live_values() const { return values.topRows(size); }
  auto live_mass() const { return cumulative_mass.head(size); }
  auto live_penalty() const { return penalty.head(size); }
  std::span<const int> live_positions() const { return {position_ids.data(), static_cast<std::size_t>(size)}; }

  void append(const Eigen::Ref<const Vector>& key, const Eigen::Ref<const Vector>& value, int position);

  /// Keeps the listed live rows (ascending) and appends aggregate rows after them.
  void compact(std::span<const int> kept_rows, const RowMatrix& agg_keys, const RowMatrix& agg_values,
               std::span<const int> agg_positions, std::span<const double> agg_mass);

  /// Installs penalty weights for the current live rows. Rows appended later
  /// get weight 0 (unpenalized) until the next refresh.
  void set_penalty(const Vector& weights);
  void clear_penalty() { penalty_active = false; }
};

struct DecoderState {
  ModelConfig config;
  std::shared_ptr<const ModelWeights> weights;
  TokenSequence sequence;
  std::vector<HeadCache> caches;        // layer-major: layer * num_heads + head
  std::vector<Vector> image_attention;  // last layer, per head: attention onto image rows by query position
  Vector last_logits;
  Vector embedding_sum;  // sum of raw token embeddings over the sequence
  double beta = 0.0;     // sink-penalty strength used by attention
  AttentionObserver observer;

  HeadCache& cache(int layer, int head) { return caches[static_cast<std::size_t>(layer * config.num_heads + head)]; }
  const HeadCache& cache(int layer, int head) const {
    return caches[static_cast<std::size_t>(layer * config.num_heads + head)];
  }
  int length() const { return static_cast<int>(sequence.size()); }
  bool is_image_position(int position) const { return sequence.is_image(position); }
};

DecoderState init_model(const ModelConfig& config);

/// Feeds image tokens then prompt tokens into an empty state. Returns the
/// logits for the first generated token.
const Vector& ingest(DecoderState& state, std::span<const TokenId> image_tokens,
                     std::span<const TokenId> prompt_tokens);

/// Appends one generated token and returns next-token logits. The prompt must
/// already be ingested.
const Vector& decode_step(DecoderState& state, TokenId token);

/// Raw table embedding of a token (no position term).
Eigen::Ref<const Vector> token_embedding(const DecoderState& state, TokenId token, Modality modality);

enum class Pooling : std::uint8_t { mean, last };

/// Final layer norm + vocabulary projection on a single D-vector. Never
/// touches the transformer layers.
Vector lm_head_logits(const DecoderState& state, const Eigen::Ref<const Vector>& embedding);

/// Pools an embedding sequence (rows) and applies lm_head_logits.
Vector lm_head_only(const DecoderState& state, const Eigen::Ref<const RowMatrix>& embeddings,
                    Pooling pooling = Pooling::last);

Vector layer_norm(const Eigen::Ref<const Vector>& x);
double gelu(double x);

}  // namespace vasparse
