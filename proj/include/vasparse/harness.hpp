#pragma once

// Desk-scale grounding benchmark and tokens-per-second measurement.

#include "vasparse/decoding.hpp"
#include "vasparse/model.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace vasparse {

struct TaskConfig {
  int num_image_tokens = 32;
  int prompt_len = 8;
  int grounded_size = 16;
};

/// A synthetic image: tokens drawn from a small grounded subset of the
/// vocabulary. Generated tokens outside that subset count as hallucinations.
struct GroundingTask {
  std::vector<TokenId> grounded;  // sorted, never contains the EOS id
  std::vector<TokenId> image_tokens;
  std::vector<TokenId> prompt_tokens;
  std::uint64_t seed = 0;

  bool is_grounded(TokenId t) const;
};

GroundingTask make_grounding_task(const ModelConfig& model, const TaskConfig& task, std::uint64_t seed);

/// Fraction of generated non-EOS tokens outside the grounded subset.
double hallucination_rate(const GroundingTask& task, std::span<const TokenId> generated);

/// Desk defaults: vocab 256, D = 64, 4 heads, 4 layers, grounding bias on.
ModelConfig desk_model_config();

/// Initializes a fresh state and ingests the task's image and prompt tokens.
DecoderState prepare_state(const ModelConfig& model, const GroundingTask& task);

struct Arm {
  std::string name;
  DecodeConfig config;
};

/// baseline (everything off), topk (attention-only pruning at the same
/// fraction) and vasparse (the given config).
std::vector<Arm> grounding_arms(const DecodeConfig& vasparse);

/// Sets one named decode setting (fraction, lambda, alpha, beta, stride,
/// mask_rate, plausibility, beam, max_new). Unknown keys throw ConfigError.
DecodeConfig with_setting(DecodeConfig config, std::string_view key, double value);

/// One arm per value, named "<key>=<value>".
std::vector<Arm> sweep_arms(const DecodeConfig& base, std::string_view key, std::span<const double> values);

struct TpsMeasurement {
  std::string arm;
  double warmup_tps = 0.0;
  std::vector<double> run_tps;  // timed runs, warm-up excluded
  double median_tps = 0.0;
  double mean_tps = 0.0;
  int tokens = 0;  // tokens generated per run
  GenerationResult last;
};

/// Times `generate` for each arm from copies of the same ingested state.
/// One warm-up round, then `repeats` rounds with the arms interleaved so
/// each round is a paired comparison. Requires repeats >= 3.
std::vector<TpsMeasurement> tps_bench(const DecoderState& ingested, std::span<const Arm> arms, int repeats);

struct BenchRow {
  std::string arm;
  std::uint64_t seed = 0;
  double tps = 0.0;  // median over timed runs
  double tps_mean = 0.0;
  double hallucination_rate = 0.0;
  double image_tokens_kept = 0.0;  // image rows left in the cache, mean over heads
};

struct BenchReport {
  std::vector<BenchRow> rows;
  std::string methodology;
};

struct BenchOptions {
  ModelConfig model = desk_model_config();
  TaskConfig task;
  std::vector<Arm> arms;
  int num_seeds = 1;
  std::uint64_t master_seed = 0;
  int repeats = 3;
  int jobs = 1;  // concurrent sessions; >1 perturbs timings
};

/// Runs every arm on one shared task per seed. Rows are ordered by seed, then arm.
BenchReport run_bench(const BenchOptions& options);

/// baseline / topk / vasparse arms over num_tasks seeds.
BenchReport grounding_benchmark(int num_tasks, const BenchOptions& options, const DecodeConfig& vasparse);

/// Seeds used for seed index i under a master seed.
std::uint64_t run_seed(std::uint64_t master, int index);
std::uint64_t task_seed(std::uint64_t run);
std::uint64_t mask_seed(std::uint64_t run);
std::uint64_t model_seed(std::uint64_t master);

double mean_image_rows(const DecoderState& state);

}  // namespace vasparse
