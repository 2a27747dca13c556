#include "vasparse/decoding.hpp"

#include "vasparse/calibration.hpp"
#include "vasparse/error.hpp"
#include "vasparse/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <random>
#include <string>

namespace vasparse {

void DecodeConfig::validate() const {
  if (!(sparsity_fraction > 0.0 && sparsity_fraction <= 1.0)) throw ConfigError("sparsity_fraction must lie in (0, 1]");
  if (!(visual_mask_rate >= 0.0 && visual_mask_rate < 1.0)) throw ConfigError("visual_mask_rate must lie in [0, 1)");
  if (!(plausibility_threshold > 0.0 && plausibility_threshold < 1.0)) {
    throw ConfigError("plausibility_threshold must lie in (0, 1)");
  }
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
  if (!(beta >= 0.0)) throw ConfigError("beta must be >= 0");
  if (!std::isfinite(alpha)) throw ConfigError("alpha must be finite");
  if (beam_size < 1) throw ConfigError("beam_size must be >= 1");
  if (max_new_tokens < 1) throw ConfigError("max_new_tokens must be >= 1");
  if (sparsify_stride < 1) throw ConfigError("sparsify_stride must be >= 1");
}

DecodeConfig DecodeConfig::baseline() {
  DecodeConfig c;
  c.lambda = 0.0;
  c.alpha = 0.0;
  c.beta = 0.0;
  c.sparsity_fraction = 1.0;
  c.aggregate = false;
  return c;
}

DecodeConfig DecodeConfig::vanilla_top_k(double fraction) {
  DecodeConfig c = baseline();
  c.sparsity_fraction = fraction;
  return c;
}

int SparsifyEvent::kept() const {
  return std::accumulate(heads.begin(), heads.end(), 0, [](int a, const HeadEvent& h) { return a + h.kept; });
}
int SparsifyEvent::pruned() const {
  return std::accumulate(heads.begin(), heads.end(), 0, [](int a, const HeadEvent& h) { return a + h.pruned; });
}
int SparsifyEvent::clusters() const {
  return std::accumulate(heads.begin(), heads.end(), 0, [](int a, const HeadEvent& h) { return a + h.clusters; });
}
int SparsifyEvent::image_kept() const {
  return std::accumulate(heads.begin(), heads.end(), 0, [](int a, const HeadEvent& h) { return a + h.image_kept; });
}

std::vector<int> visual_mask(int num_image, double rate, std::uint64_t seed, int step) {
  const int count = std::clamp(static_cast<int>(std::lround(rate * num_image)), 0, num_image);
  std::vector<int> pool(static_cast<std::size_t>(num_image));
  std::iota(pool.begin(), pool.end(), 0);
  std::mt19937_64 rng(derive_seed(seed, "visual-mask", static_cast<std::uint64_t>(step)));
  for (int i = 0; i < count; ++i) {
    std::uniform_int_distribution<int> pick(i, num_image - 1);
    std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(pick(rng))]);
  }
  pool.resize(static_cast<std::size_t>(count));
  std::sort(pool.begin(), pool.end());
  return pool;
}

RowMatrix masked_embeddings(const DecoderState& state, std::span<const int> masked, VisualMaskMode mode) {
  const int n = state.length();
  std::vector<std::uint8_t> is_masked(static_cast<std::size_t>(n), 0);
  for (int p : masked) is_masked[static_cast<std::size_t>(p)] = 1;
  const int rows = mode == VisualMaskMode::remove ? n - static_cast<int>(masked.size()) : n;
  RowMatrix out(rows, state.config.embed_dim);
  int r = 0;
  for (int p = 0; p < n; ++p) {
    const auto pos = static_cast<std::size_t>(p);
    if (is_masked[pos]) {
      if (mode == VisualMaskMode::zero) out.row(r++).setZero();
      continue;
    }
    out.row(r++) = token_embedding(state, state.sequence.tokens[pos], state.sequence.modalities[pos]).transpose();
  }
  return out;
}

namespace {

// Pooled masked embedding without materializing the sequence: the state keeps
// a running sum of raw embeddings, so only masked rows are touched.
Vector pooled_masked_embedding(const DecoderState& state, std::span<const int> masked, const DecodeConfig& config) {
  const int n = state.length();
  if (config.pooling == Pooling::mean) {
    Vector sum = state.embedding_sum;
    for (int p : masked) {
      sum -= token_embedding(state, state.sequence.tokens[static_cast<std::size_t>(p)], Modality::image);
    }
    const int count = config.mask_mode == VisualMaskMode::remove ? n - static_cast<int>(masked.size()) : n;
    return sum / static_cast<double>(count);
  }
  int last = n - 1;
  auto is_masked = [&](int p) { return std::binary_search(masked.begin(), masked.end(), p); };
  if (config.mask_mode == VisualMaskMode::remove) {
    while (last > 0 && is_masked(last)) --last;
  } else if (is_masked(last)) {
    return Vector::Zero(state.config.embed_dim);
  }
  const auto pos = static_cast<std::size_t>(last);
  return token_embedding(state, state.sequence.tokens[pos], state.sequence.modalities[pos]);
}

double image_mass_at(const DecoderState& state, SaliencySource source, int position) {
  const auto pos = static_cast<Eigen::Index>(position);
  if (source == SaliencySource::last_head) return state.image_attention.back()(pos);
  double total = 0.0;
  for (const Vector& head : state.image_attention) total += head(pos);
  return total / static_cast<double>(state.image_attention.size());
}

void emit(const DecoderState& state, TraceKind kind, int layer, int head, const HeadCache& cache, const Vector& values) {
  if (state.observer) {
    state.observer(AttentionTrace{kind, layer, head, state.length() - 1, cache.live_positions(), values});
  }
}

void require_ready(const DecoderState& state, const DecodeConfig& config) {
  config.validate();
  detail::require<PreconditionError>(state.length() > 0, "generate: prompt must be ingested first");
  detail::require<DegenerateInputError>(state.sequence.num_image_tokens() > 0, "generate: no image tokens");
  if (state.length() + config.max_new_tokens > state.config.max_seq_len) {
    throw CapacityError("prompt length + max_new_tokens exceeds max_seq_len");
  }
}

}  // namespace

LogitRecord contrastive_logits(const DecoderState& state, const DecodeConfig& config, int step) {
  const int num_image = state.sequence.num_image_tokens();
  detail::require<DegenerateInputError>(num_image > 0, "contrastive_logits: no image tokens");
  const std::vector<int> masked = visual_mask(num_image, config.visual_mask_rate, config.rng_seed, step);

  LogitRecord rec;
  rec.theta = state.last_logits;
  rec.phi = lm_head_logits(state, pooled_masked_embedding(state, masked, config));
  rec.combined = (1.0 + config.alpha) * rec.theta - config.alpha * rec.phi;
  rec.plausible = Eigen::Array<bool, Eigen::Dynamic, 1>::Constant(rec.theta.size(), true);
  return rec;
}

LogitRecord plausibility_filter(LogitRecord record, double threshold) {
  detail::require<PreconditionError>(record.theta.size() > 0, "plausibility_filter: empty logits");
  // p_i >= t * p_max  <=>  theta_i - theta_max >= log t
  const double cutoff = record.theta.maxCoeff() + std::log(threshold);
  record.plausible = record.theta.array() >= cutoff;
  for (Eigen::Index i = 0; i < record.combined.size(); ++i) {
    if (!record.plausible(i)) record.combined(i) = negative_infinity();
  }
  return record;
}

void refresh_penalty(DecoderState& state, double beta) {
  state.beta = beta;
  for (int l = 0; l < state.config.num_layers; ++l) {
    for (int h = 0; h < state.config.num_heads; ++h) {
      HeadCache& cache = state.cache(l, h);
      if (beta == 0.0 || cache.size == 0) {
        cache.clear_penalty();
        continue;
      }
      const PenaltyVector w = sink_weights_from_mass(cache.live_mass(), beta);
      cache.set_penalty(w.weights);
      emit(state, TraceKind::penalty, l, h, cache, w.weights);
    }
  }
}

SparsifyEvent sparsify_event(DecoderState& state, const DecodeConfig& config, int step) {
  detail::require<DegenerateInputError>(state.sequence.num_image_tokens() > 0, "sparsify_event: no image tokens");
  SparsifyEvent event;
  event.step = step;
  const int hd = state.config.head_dim;

  for (int l = 0; l < state.config.num_layers; ++l) {
    for (int h = 0; h < state.config.num_heads; ++h) {
      HeadCache& cache = state.cache(l, h);
      const int live = cache.size;
      Vector image_mass(live);
      for (int r = 0; r < live; ++r) {
        image_mass(r) = image_mass_at(state, config.saliency_source, cache.position_ids[static_cast<std::size_t>(r)]);
      }
      const Vector saliency = saliency_from_image_mass(image_mass);
      emit(state, TraceKind::saliency, l, h, cache, saliency);

      const Vector delta = aggregated_scores(cache.last_query, cache.live_keys(), saliency, config.lambda);
      SparseMask mask = select_top_s(delta, sparsity_budget(config.sparsity_fraction, live));
      mask.layer = l;
      mask.head = h;

      HeadEvent he{l, h, live, mask.budget, live - mask.budget, 0, 0};
      const std::vector<int> kept = mask.kept();
      for (int r : kept) {
        if (state.is_image_position(cache.position_ids[static_cast<std::size_t>(r)])) ++he.image_kept;
      }

      if (he.pruned > 0) {
        const std::vector<int> dropped = mask.pruned();
        RowMatrix agg_keys(0, hd);
        RowMatrix agg_values(0, hd);
        std::vector<int> agg_positions;
        std::vector<double> agg_mass;
        if (config.aggregate) {
          RowMatrix dk(static_cast<Eigen::Index>(dropped.size()), hd);
          RowMatrix dv(static_cast<Eigen::Index>(dropped.size()), hd);
          std::vector<int> positions(dropped.size());
          for (std::size_t i = 0; i < dropped.size(); ++i) {
            dk.row(static_cast<Eigen::Index>(i)) = cache.keys.row(dropped[i]);
            dv.row(static_cast<Eigen::Index>(i)) = cache.values.row(dropped[i]);
            positions[i] = cache.position_ids[static_cast<std::size_t>(dropped[i])];
          }
          const ClusterAssignment clusters =
              aggregate_discarded(dk, dv, positions, config.density_k, config.num_peaks);
          agg_keys = clusters.keys;
          agg_values = clusters.values;
          agg_mass.assign(static_cast<std::size_t>(clusters.num_peaks), 0.0);
          for (int c = 0; c < clusters.num_peaks; ++c) agg_positions.push_back(clusters.representative(c));
          for (std::size_t i = 0; i < dropped.size(); ++i) {
            agg_mass[static_cast<std::size_t>(clusters.cluster_of[i])] += cache.cumulative_mass(dropped[i]);
          }
          he.clusters = clusters.num_peaks;
        }
        cache.compact(kept, agg_keys, agg_values, agg_positions, agg_mass);
      }
      event.heads.push_back(he);
    }
  }
  refresh_penalty(state, config.beta);
  return event;
}

namespace {

GenerationResult generate_greedy(DecoderState state, const DecodeConfig& config) {
  GenerationResult result;
  for (int t = 0; t < config.max_new_tokens; ++t) {
    StepRecord step;
    step.logits = plausibility_filter(contrastive_logits(state, config, t), config.plausibility_threshold);
    step.token = static_cast<TokenId>(argmax(step.logits.combined));
    result.log_prob += log_softmax(step.logits.combined)(step.token);
    result.score_trace.push_back(result.log_prob);
    result.tokens.push_back(step.token);
    const bool stop = config.stop_at_eos && step.token == kEosToken;
    if (!stop) {
      decode_step(state, step.token);
      if ((t + 1) % config.sparsify_stride == 0) {
        result.events.push_back(sparsify_event(state, config, t + 1));
        step.event = true;
      }
    }
    result.steps.push_back(std::move(step));
    if (stop) break;
  }
  result.final_state = std::move(state);
  return result;
}

struct HistoryNode {
  StepRecord step;
  std::optional<SparsifyEvent> event;
  std::shared_ptr<const HistoryNode> parent;
};

struct Hypothesis {
  DecoderState state;
  std::shared_ptr<const HistoryNode> history;
  double score = 0.0;
  bool finished = false;
};

struct Candidate {
  double score;
  int parent;
  TokenId token;  // -1 carries a finished hypothesis forward unchanged
  LogitRecord logits;
};

// Top `count` tokens of a hypothesis by combined logit; lower id wins ties.
std::vector<TokenId> top_tokens(const Vector& combined, int count) {
  std::vector<TokenId> ids(static_cast<std::size_t>(combined.size()));
  std::iota(ids.begin(), ids.end(), 0);
  const auto n = std::min<std::size_t>(static_cast<std::size_t>(count), ids.size());
  std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n), ids.end(),
                    [&](TokenId a, TokenId b) { return combined(a) > combined(b) || (combined(a) == combined(b) && a < b); });
  ids.resize(n);
  return ids;
}

GenerationResult generate_beam(DecoderState state, const DecodeConfig& config) {
  std::vector<Hypothesis> beam;
  beam.push_back(Hypothesis{std::move(state), nullptr, 0.0, false});
  std::vector<double> trace;

  for (int t = 0; t < config.max_new_tokens; ++t) {
    std::vector<Candidate> candidates;
    for (int i = 0; i < static_cast<int>(beam.size()); ++i) {
      const Hypothesis& hyp = beam[static_cast<std::size_t>(i)];
      if (hyp.finished) {
        candidates.push_back(Candidate{hyp.score, i, -1, {}});
        continue;
      }
      LogitRecord rec = plausibility_filter(contrastive_logits(hyp.state, config, t), config.plausibility_threshold);
      const Vector lp = log_softmax(rec.combined);
      for (TokenId tok : top_tokens(rec.combined, config.beam_size)) {
        if (!std::isfinite(lp(tok))) continue;
        candidates.push_back(Candidate{hyp.score + lp(tok), i, tok, rec});
      }
    }
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const Candidate& a, const Candidate& b) { return a.score > b.score; });
    if (static_cast<int>(candidates.size()) > config.beam_size) candidates.resize(static_cast<std::size_t>(config.beam_size));

    std::vector<int> uses(beam.size(), 0);
    for (const Candidate& c : candidates) ++uses[static_cast<std::size_t>(c.parent)];

    std::vector<Hypothesis> next;
    next.reserve(candidates.size());
    for (Candidate& c : candidates) {
      auto& parent = beam[static_cast<std::size_t>(c.parent)];
      const bool last_use = --uses[static_cast<std::size_t>(c.parent)] == 0;
      Hypothesis hyp{last_use ? std::move(parent.state) : parent.state, parent.history, c.score, parent.finished};
      if (c.token >= 0) {
        auto node = std::make_shared<HistoryNode>();
        node->step.logits = std::move(c.logits);
        node->step.token = c.token;
        node->parent = hyp.history;
        if (config.stop_at_eos && c.token == kEosToken) {
          hyp.finished = true;
        } else {
          decode_step(hyp.state, c.token);
          if ((t + 1) % config.sparsify_stride == 0) {
            node->event = sparsify_event(hyp.state, config, t + 1);
            node->step.event = true;
          }
        }
        hyp.history = std::move(node);
      }
      next.push_back(std::move(hyp));
    }
    beam = std::move(next);
    trace.push_back(beam.front().score);
    if (std::all_of(beam.begin(), beam.end(), [](const Hypothesis& h) { return h.finished; })) break;
  }

  Hypothesis& best = beam.front();
  GenerationResult result;
  std::vector<const HistoryNode*> chain;
  for (const HistoryNode* n = best.history.get(); n != nullptr; n = n->parent.get()) chain.push_back(n);
  std::reverse(chain.begin(), chain.end());
  for (const HistoryNode* n : chain) {
    result.tokens.push_back(n->step.token);
    result.steps.push_back(n->step);
    if (n->event) result.events.push_back(*n->event);
  }
  result.log_prob = best.score;
  result.score_trace = std::move(trace);
  result.final_state = std::move(best.state);
  return result;
}

}  // namespace

GenerationResult generate(DecoderState state, const DecodeConfig& config) {
  require_ready(state, config);
  refresh_penalty(state, config.beta);
  if (config.mode == SearchMode::beam) return generate_beam(std::move(state), config);
  return generate_greedy(std::move(state), config);
}

}  // namespace vasparse
