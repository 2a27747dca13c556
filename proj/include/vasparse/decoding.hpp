#pragma once

// Contrastive logits with a plausibility cutoff, plus the cache sparsification
// that greedy and beam search run between steps.

#include "vasparse/model.hpp"
#include "vasparse/selection.hpp"

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

namespace vasparse {

enum class SearchMode : std::uint8_t { greedy, beam };
enum class VisualMaskMode : std::uint8_t { zero, remove };
enum class SaliencySource : std::uint8_t { last_head, last_layer_mean };

struct DecodeConfig {
  SearchMode mode = SearchMode::greedy;
  int beam_size = 1;
  int max_new_tokens = 64;
  double lambda = 0.1;
  double alpha = 0.1;
  double beta = 0.1;
  double sparsity_fraction = 0.9;  // S = ceil(fraction * L)
  double visual_mask_rate = 0.5;
  double plausibility_threshold = 0.1;
  int sparsify_stride = 16;
  std::uint64_t rng_seed = 0;  // visual-mask stream

  int density_k = 0;      // 0: min(5, |T| - 1)
  int num_peaks = 0;      // 0: max(1, ceil(|T| / 4))
  bool aggregate = true;  // merge discarded rows instead of dropping them
  Pooling pooling = Pooling::mean;
  VisualMaskMode mask_mode = VisualMaskMode::zero;
  SaliencySource saliency_source = SaliencySource::last_head;
  bool stop_at_eos = true;

  /// Throws ConfigError when an invariant is violated.
  void validate() const;

  /// Every mechanism off: plain greedy decoding.
  static DecodeConfig baseline();
  /// Attention-only top-S pruning with every other mechanism off.
  static DecodeConfig vanilla_top_k(double fraction);
};

struct LogitRecord {
  Vector theta;     // sparsified full decode path
  Vector phi;       // masked visual embeddings through the LM head only
  Vector combined;  // (1 + alpha) theta - alpha phi; -inf where filtered
  Eigen::Array<bool, Eigen::Dynamic, 1> plausible;

  int survivors() const { return static_cast<int>(plausible.count()); }
};

struct HeadEvent {
  int layer = 0;
  int head = 0;
  int live_before = 0;
  int kept = 0;
  int pruned = 0;
  int clusters = 0;
  int image_kept = 0;  // selected rows whose position is an image token
};

struct SparsifyEvent {
  int step = 0;  // generated tokens at the time of the event
  std::vector<HeadEvent> heads;

  int kept() const;
  int pruned() const;
  int clusters() const;
  int image_kept() const;
};

struct StepRecord {
  LogitRecord logits;
  TokenId token = kEosToken;
  bool event = false;
};

struct GenerationResult {
  std::vector<TokenId> tokens;
  std::vector<StepRecord> steps;
  std::vector<SparsifyEvent> events;
  double log_prob = 0.0;
  /// Best hypothesis score after each step (beam) or running log-prob (greedy).
  std::vector<double> score_trace;
  DecoderState final_state;
};

/// Image positions masked at a decode step; a fixed count
/// round(rate * num_image) drawn from the (seed, step) stream.
std::vector<int> visual_mask(int num_image, double rate, std::uint64_t seed, int step);

/// Raw embedding sequence with the masked image rows zeroed or removed.
RowMatrix masked_embeddings(const DecoderState& state, std::span<const int> masked, VisualMaskMode mode);

/// Contrastive record for the next token. theta is the state's current
/// logits; phi pools the masked embedding sequence and runs only the LM head.
LogitRecord contrastive_logits(const DecoderState& state, const DecodeConfig& config, int step);

/// Keeps tokens with p_theta >= threshold * max p_theta; others become -inf
/// in `combined`. The argmax of theta always survives.
LogitRecord plausibility_filter(LogitRecord record, double threshold);

/// Installs fresh sink-penalty weights on every head from its cumulative
/// column mass. beta == 0 clears the penalty.
void refresh_penalty(DecoderState& state, double beta);

/// One sparsification pass over every (layer, head). Discarded rows are merged
/// into cluster rows, then the sink penalty is refreshed.
SparsifyEvent sparsify_event(DecoderState& state, const DecodeConfig& config, int step);

/// Generates from an ingested state. The state is consumed; the result holds
/// the final state of the best hypothesis.
GenerationResult generate(DecoderState state, const DecodeConfig& config);

}  // namespace vasparse
