// Command-line entry point for the toy decoder.

#include "vasparse/analysis.hpp"
#include "vasparse/error.hpp"
#include "vasparse/io.hpp"
#include "vasparse/verify.hpp"

#include "CLI11.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using namespace vasparse;

namespace {

constexpr int kExitProperty = 1;
constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 3;

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

RunConfig load_or_default(const std::string& path) { return path.empty() ? RunConfig{} : load_run_config(path); }

struct Sweep {
  std::string key;
  std::vector<double> values;
};

Sweep parse_sweep(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == text.size())
    throw CLI::ValidationError("--sweep", "expected key=v1,v2,...");
  Sweep s{text.substr(0, eq), {}};
  std::stringstream rest(text.substr(eq + 1));
  std::string item;
  while (std::getline(rest, item, ',')) {
    try {
      std::size_t used = 0;
      s.values.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      throw CLI::ValidationError("--sweep", "not a number: '" + item + "'");
    }
  }
  // Reject unknown keys before any work starts.
  with_setting(DecodeConfig{}, s.key, s.values.front());
  return s;
}

int run_decode(const std::string& config_path, std::uint64_t seed, const fs::path& out_dir, bool dump,
               std::optional<int> max_new) {
  RunConfig rc = load_or_default(config_path);
  if (max_new) rc.decode.max_new_tokens = *max_new;
  rc.model.rng_seed = model_seed(seed);
  rc.decode.rng_seed = mask_seed(seed);
  const GroundingTask task = make_grounding_task(rc.model, rc.task, task_seed(seed));

  DecoderState state = init_model(rc.model);
  std::ofstream jsonl;
  std::optional<JsonlTraceWriter> writer;
  if (dump) {
    jsonl = open_out(out_dir / "attention.jsonl");
    writer.emplace(jsonl);
    state.observer = writer->observer();
  }
  ingest(state, task.image_tokens, task.prompt_tokens);
  const GenerationResult result = generate(std::move(state), rc.decode);
  if (writer) writer->write_sequence(result.final_state.sequence);

  open_out(out_dir / "transcript.json") << transcript_json(rc, seed, task, result).dump(2) << '\n';
  std::cout << "generated " << result.tokens.size() << " tokens, " << result.events.size()
            << " sparsification events, hallucination rate " << hallucination_rate(task, result.tokens) << '\n';
  return 0;
}

int run_bench_cmd(const std::string& config_path, std::uint64_t seed, const fs::path& out_dir,
                  const std::string& sweep_text, int seeds, int repeats, std::optional<int> max_new) {
  RunConfig rc = load_or_default(config_path);
  if (max_new) rc.decode.max_new_tokens = *max_new;
  BenchOptions opts;
  opts.model = rc.model;
  opts.task = rc.task;
  opts.num_seeds = seeds;
  opts.master_seed = seed;
  opts.repeats = repeats;
  if (sweep_text.empty()) {
    opts.arms = grounding_arms(rc.decode);
  } else {
    const Sweep s = parse_sweep(sweep_text);
    opts.arms = sweep_arms(rc.decode, s.key, s.values);
  }
  const BenchReport report = run_bench(opts);

  auto metrics = open_out(out_dir / "metrics.csv");
  write_metrics_csv(metrics, report);
  json summary{{"methodology", report.methodology}, {"config", to_json(rc.decode)}, {"arms", json::array()}};
  for (const Arm& a : opts.arms) {
    double tps = 0.0, hall = 0.0, kept = 0.0;
    int n = 0;
    for (const BenchRow& r : report.rows) {
      if (r.arm != a.name) continue;
      tps += r.tps;
      hall += r.hallucination_rate;
      kept += r.image_tokens_kept;
      ++n;
    }
    summary["arms"].push_back(
        {{"arm", a.name}, {"mean_tps", tps / n}, {"hallucination_rate", hall / n}, {"image_tokens_kept", kept / n}});
    std::cout << a.name << ": tps " << tps / n << ", hallucination " << hall / n << '\n';
  }
  open_out(out_dir / "bench_summary.json") << summary.dump(2) << '\n';
  return 0;
}

int run_analyze(const std::string& dump_path, const fs::path& out_dir, double threshold) {
  std::ifstream in(dump_path);
  if (!in) throw Error("cannot open dump " + dump_path);
  const AttentionDump dump = read_attention_dump(in);

  auto recall = open_out(out_dir / "recall.csv");
  write_recall_csv(recall, recall_curve(dump.record, default_fractions()));
  const SinkReport sinks = detect_sinks(dump.record, threshold, dump.sequence.modalities);
  auto sink_csv = open_out(out_dir / "sinks.csv");
  write_sink_csv(sink_csv, sinks);
  auto density = open_out(out_dir / "density.csv");
  write_density_csv(density, modality_density(dump.record, dump.sequence.modalities));
  std::cout << dump.record.length() << " positions, " << sinks.sinks().size() << " sinks\n";
  return 0;
}

int run_verify_cmd(int instances, int max_len, std::uint64_t seed, const fs::path& out_dir) {
  VerifyOptions o;
  o.instances = instances;
  o.max_len = max_len;
  o.seed = seed;
  const VerifyReport report = run_verify(o, [](const CheckResult& c) {
    std::cout << (c.passed ? "PASS " : "FAIL ") << c.name << ": " << c.detail << std::endl;
  });
  auto oracle = open_out(out_dir / "oracle.csv");
  write_oracle_csv(oracle, report.oracle_rows);
  return report.passed() ? 0 : kExitProperty;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Visual-aware token sparsification on a deterministic toy decoder"};
  app.require_subcommand(1, 1);

  std::string config;
  std::uint64_t seed = 0;
  std::string out = ".";
  std::optional<int> max_new;

  auto* decode = app.add_subcommand("decode", "Decode one grounding task and write transcript.json");
  bool dump = false;
  decode->add_option("--config", config, "JSON run config")->check(CLI::ExistingFile);
  decode->add_option("--seed", seed, "Master seed");
  decode->add_option("--out", out, "Output directory");
  decode->add_option("--max-new", max_new, "Override max_new_tokens")->check(CLI::PositiveNumber);
  decode->add_flag("--dump-attention", dump, "Also write attention.jsonl");

  auto* bench = app.add_subcommand("bench", "Benchmark arms and write metrics.csv");
  std::string sweep;
  int seeds = 3;
  int repeats = 5;
  bench->add_option("--config", config, "JSON run config")->check(CLI::ExistingFile);
  bench->add_option("--seed", seed, "Master seed");
  bench->add_option("--out", out, "Output directory");
  bench->add_option("--sweep", sweep, "key=v1,v2,... (fraction, lambda, alpha, beta, stride, mask_rate, ...)");
  bench->add_option("--seeds", seeds, "Number of seeds")->check(CLI::PositiveNumber);
  bench->add_option("--repeats", repeats, "Timed rounds per seed")->check(CLI::Range(3, 1000));
  bench->add_option("--max-new", max_new, "Override max_new_tokens")->check(CLI::PositiveNumber);

  auto* analyze = app.add_subcommand("analyze", "Recall, sink and density reports from an attention dump");
  std::string dump_path;
  double threshold = 4.0;
  analyze->add_option("--dump", dump_path, "attention.jsonl from decode")->required()->check(CLI::ExistingFile);
  analyze->add_option("--out", out, "Output directory");
  analyze->add_option("--threshold", threshold, "Sink threshold as a multiple of the median mass");

  auto* verify = app.add_subcommand("verify", "Oracle comparison and property checks");
  int instances = 1000;
  int max_len = 16;
  verify->add_option("--instances", instances, "Oracle instances")->check(CLI::PositiveNumber);
  verify->add_option("--max-len", max_len, "Largest oracle instance")->check(CLI::Range(1, 20));
  verify->add_option("--seed", seed, "Master seed");
  verify->add_option("--out", out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*decode) return run_decode(config, seed, out, dump, max_new);
    if (*bench) return run_bench_cmd(config, seed, out, sweep, seeds, repeats, max_new);
    if (*analyze) return run_analyze(dump_path, out, threshold);
    return run_verify_cmd(instances, max_len, seed, out);
  } catch (const CLI::ValidationError& e) {
    std::cerr << e.what() << '\n';
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}
