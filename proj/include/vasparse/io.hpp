#pragma once

// On-disk formats for configs and run outputs.

#include "vasparse/analysis.hpp"
#include "vasparse/decoding.hpp"
#include "vasparse/harness.hpp"
#include "vasparse/model.hpp"
#include "vasparse/record.hpp"

#include "json.hpp"

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace vasparse {

using json = nlohmann::json;

ModelConfig model_config_from_json(const json& j);
json to_json(const ModelConfig& c);

DecodeConfig decode_config_from_json(const json& j, DecodeConfig base = {});
json to_json(const DecodeConfig& c);

TaskConfig task_config_from_json(const json& j, TaskConfig base = {});
json to_json(const TaskConfig& c);

/// Top-level document: model keys at the root, optional "decode" and "task"
/// objects. Missing keys keep the desk defaults.
struct RunConfig {
  ModelConfig model = desk_model_config();
  DecodeConfig decode;
  TaskConfig task;
};

RunConfig run_config_from_json(const json& j);
RunConfig load_run_config(const std::string& path);

json transcript_json(const RunConfig& config, std::uint64_t seed, const GroundingTask& task,
                     const GenerationResult& result);

/// Streams traces as JSONL, one object per line:
///   {"type":"attention"|"penalty"|"saliency","layer":l,"head":h,"step":t,
///    "positions":[...],"values":[...]}
/// followed by a closing {"type":"sequence","tokens":[...],"modalities":[...]}.
class JsonlTraceWriter {
 public:
  explicit JsonlTraceWriter(std::ostream& out) : out_(&out) {}
  void write(const AttentionTrace& trace);
  void write_sequence(const TokenSequence& sequence);
  AttentionObserver observer();

 private:
  std::ostream* out_;
};

struct DumpedTrace {
  TraceKind kind = TraceKind::attention;
  int layer = 0;
  int head = 0;
  int step = 0;
  std::vector<int> positions;
  Vector values;
};

struct AttentionDump {
  AttentionRecord record;
  std::vector<DumpedTrace> traces;
  TokenSequence sequence;
};

/// Rebuilds a record from a JSONL dump. Throws Error on malformed lines.
AttentionDump read_attention_dump(std::istream& in);

std::string_view to_string(TraceKind kind);

void write_recall_csv(std::ostream& out, const RecallCurve& curve);
void write_sink_csv(std::ostream& out, const SinkReport& report);
void write_density_csv(std::ostream& out, const ModalityDensity& density);
void write_metrics_csv(std::ostream& out, const BenchReport& report);

struct OracleRow {
  int instance_id = 0;
  int length = 0;
  int budget = 0;
  double lambda = 0.0;
  double greedy_objective = 0.0;
  double oracle_objective = 0.0;
  bool equal = false;
};

void write_oracle_csv(std::ostream& out, const std::vector<OracleRow>& rows);

}  // namespace vasparse
