#include "vasparse/harness.hpp"

#include "vasparse/error.hpp"
#include "vasparse/rng.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

namespace vasparse {

bool GroundingTask::is_grounded(TokenId t) const {
  return std::binary_search(grounded.begin(), grounded.end(), t);
}

GroundingTask make_grounding_task(const ModelConfig& model, const TaskConfig& task, std::uint64_t seed) {
  if (task.grounded_size < 1 || task.grounded_size >= model.vocab_size) {
    throw ConfigError("grounded_size must lie in [1, vocab_size - 1]");
  }
  if (task.num_image_tokens < 1) throw ConfigError("num_image_tokens must be >= 1");
  if (task.prompt_len < 0) throw ConfigError("prompt_len must be >= 0");

  std::mt19937_64 rng(seed);
  GroundingTask out;
  out.seed = seed;
  std::vector<TokenId> ids(static_cast<std::size_t>(model.vocab_size - 1));
  std::iota(ids.begin(), ids.end(), 1);  // EOS (0) is never grounded
  std::shuffle(ids.begin(), ids.end(), rng);
  out.grounded.assign(ids.begin(), ids.begin() + task.grounded_size);
  std::sort(out.grounded.begin(), out.grounded.end());

  std::uniform_int_distribution<std::size_t> pick_grounded(0, out.grounded.size() - 1);
  for (int i = 0; i < task.num_image_tokens; ++i) out.image_tokens.push_back(out.grounded[pick_grounded(rng)]);
  std::uniform_int_distribution<TokenId> pick_text(1, model.vocab_size - 1);
  for (int i = 0; i < task.prompt_len; ++i) out.prompt_tokens.push_back(pick_text(rng));
  return out;
}

double hallucination_rate(const GroundingTask& task, std::span<const TokenId> generated) {
  int counted = 0;
  int outside = 0;
  for (TokenId t : generated) {
    if (t == kEosToken) continue;
    ++counted;
    if (!task.is_grounded(t)) ++outside;
  }
  return counted == 0 ? 0.0 : static_cast<double>(outside) / counted;
}

ModelConfig desk_model_config() {
  ModelConfig c;
  c.vocab_size = 256;
  c.embed_dim = 64;
  c.num_heads = 4;
  c.head_dim = 16;
  c.num_layers = 4;
  c.max_seq_len = 1024;
  c.grounding_gain = 1.0;
  return c;
}

DecoderState prepare_state(const ModelConfig& model, const GroundingTask& task) {
  DecoderState state = init_model(model);
  ingest(state, task.image_tokens, task.prompt_tokens);
  return state;
}

std::vector<Arm> grounding_arms(const DecodeConfig& vasparse) {
  DecodeConfig baseline = DecodeConfig::baseline();
  DecodeConfig topk = DecodeConfig::vanilla_top_k(vasparse.sparsity_fraction);
  for (DecodeConfig* c : {&baseline, &topk}) {
    c->max_new_tokens = vasparse.max_new_tokens;
    c->sparsify_stride = vasparse.sparsify_stride;
    c->rng_seed = vasparse.rng_seed;
    c->mode = vasparse.mode;
    c->beam_size = vasparse.beam_size;
    c->stop_at_eos = vasparse.stop_at_eos;
  }
  return {{"baseline", baseline}, {"topk", topk}, {"vasparse", vasparse}};
}

DecodeConfig with_setting(DecodeConfig c, std::string_view key, double value) {
  if (key == "fraction" || key == "sparsity_fraction") c.sparsity_fraction = value;
  else if (key == "lambda") c.lambda = value;
  else if (key == "alpha") c.alpha = value;
  else if (key == "beta") c.beta = value;
  else if (key == "stride" || key == "sparsify_stride") c.sparsify_stride = static_cast<int>(value);
  else if (key == "mask_rate" || key == "visual_mask_rate") c.visual_mask_rate = value;
  else if (key == "plausibility" || key == "plausibility_threshold") c.plausibility_threshold = value;
  else if (key == "beam" || key == "beam_size") {
    c.beam_size = static_cast<int>(value);
    c.mode = c.beam_size > 1 ? SearchMode::beam : SearchMode::greedy;
  } else if (key == "max_new" || key == "max_new_tokens") c.max_new_tokens = static_cast<int>(value);
  else throw ConfigError("unknown sweep key: " + std::string(key));
  c.validate();
  return c;
}

std::vector<Arm> sweep_arms(const DecodeConfig& base, std::string_view key, std::span<const double> values) {
  std::vector<Arm> arms;
  for (double v : values) {
    std::ostringstream name;
    name << key << '=' << v;
    arms.push_back(Arm{name.str(), with_setting(base, key, v)});
  }
  return arms;
}

namespace {

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// One timed session: the state copy is made outside the timed region.
double timed_generate(const DecoderState& ingested, const DecodeConfig& config, GenerationResult& out) {
  DecoderState state = ingested;
  const auto start = std::chrono::steady_clock::now();
  out = generate(std::move(state), config);
  const auto stop = std::chrono::steady_clock::now();
  const double seconds = std::chrono::duration<double>(stop - start).count();
  return static_cast<double>(out.tokens.size()) / std::max(seconds, 1e-9);
}

}  // namespace

std::vector<TpsMeasurement> tps_bench(const DecoderState& ingested, std::span<const Arm> arms, int repeats) {
  if (repeats < 3) throw ConfigError("tps_bench: repeats must be >= 3");
  std::vector<TpsMeasurement> out(arms.size());
  for (std::size_t a = 0; a < arms.size(); ++a) {
    out[a].arm = arms[a].name;
    out[a].warmup_tps = timed_generate(ingested, arms[a].config, out[a].last);
  }
  for (int r = 0; r < repeats; ++r) {
    for (std::size_t a = 0; a < arms.size(); ++a) {
      out[a].run_tps.push_back(timed_generate(ingested, arms[a].config, out[a].last));
    }
  }
  for (TpsMeasurement& m : out) {
    m.median_tps = median_of(m.run_tps);
    m.mean_tps = std::accumulate(m.run_tps.begin(), m.run_tps.end(), 0.0) / static_cast<double>(m.run_tps.size());
    m.tokens = static_cast<int>(m.last.tokens.size());
  }
  return out;
}

std::uint64_t run_seed(std::uint64_t master, int index) { return master + static_cast<std::uint64_t>(index); }
std::uint64_t task_seed(std::uint64_t run) { return derive_seed(run, "tasks"); }
std::uint64_t mask_seed(std::uint64_t run) { return derive_seed(run, "visual-mask"); }
std::uint64_t model_seed(std::uint64_t master) { return derive_seed(master, "model"); }

double mean_image_rows(const DecoderState& state) {
  long rows = 0;
  for (const HeadCache& cache : state.caches) {
    for (int r = 0; r < cache.size; ++r) {
      if (state.is_image_position(cache.position_ids[static_cast<std::size_t>(r)])) ++rows;
    }
  }
  return static_cast<double>(rows) / static_cast<double>(state.caches.size());
}

BenchReport run_bench(const BenchOptions& options) {
  if (options.num_seeds < 1) throw ConfigError("bench: need at least one seed");
  if (options.arms.empty()) throw ConfigError("bench: no arms");
  ModelConfig model = options.model;
  model.rng_seed = model_seed(options.master_seed);
  const DecoderState base_model = init_model(model);

  const std::size_t arms = options.arms.size();
  std::vector<BenchRow> rows(static_cast<std::size_t>(options.num_seeds) * arms);
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int i = next++; i < options.num_seeds; i = next++) {
      const std::uint64_t seed = run_seed(options.master_seed, i);
      const GroundingTask task = make_grounding_task(model, options.task, task_seed(seed));
      DecoderState ingested = base_model;
      ingest(ingested, task.image_tokens, task.prompt_tokens);
      std::vector<Arm> seeded = options.arms;
      for (Arm& a : seeded) a.config.rng_seed = mask_seed(seed);
      const auto timing = tps_bench(ingested, seeded, options.repeats);
      for (std::size_t a = 0; a < arms; ++a) {
        BenchRow& row = rows[static_cast<std::size_t>(i) * arms + a];
        row.arm = seeded[a].name;
        row.seed = seed;
        row.tps = timing[a].median_tps;
        row.tps_mean = timing[a].mean_tps;
        row.hallucination_rate = hallucination_rate(task, timing[a].last.tokens);
        row.image_tokens_kept = mean_image_rows(timing[a].last.final_state);
      }
    }
  };
  const int jobs = std::clamp(options.jobs, 1, options.num_seeds);
  {
    std::vector<std::jthread> pool;
    for (int j = 1; j < jobs; ++j) pool.emplace_back(worker);
    worker();
  }

  BenchReport report;
  report.rows = std::move(rows);
  std::ostringstream note;
  note << "tps = generated tokens / wall-clock seconds of generate() on a steady clock, prompt ingestion "
          "excluded; one warm-up round discarded, then "
       << options.repeats << " interleaved rounds per seed; tps column is the median, tps_mean the mean; "
       << jobs << " concurrent session(s).";
  report.methodology = note.str();
  return report;
}

BenchReport grounding_benchmark(int num_tasks, const BenchOptions& options, const DecodeConfig& vasparse) {
  if (num_tasks < 1) throw ConfigError("grounding_benchmark: num_tasks must be >= 1");
  BenchOptions o = options;
  o.num_seeds = num_tasks;
  o.arms = grounding_arms(vasparse);
  return run_bench(o);
}

}  // namespace vasparse
