#include "vasparse/io.hpp"

#include "vasparse/error.hpp"

#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>

namespace vasparse {

namespace {

template <typename T>
void read_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

const char* to_cstr(SearchMode m) { return m == SearchMode::beam ? "beam" : "greedy"; }
const char* to_cstr(Pooling p) { return p == Pooling::last ? "last" : "mean"; }
const char* to_cstr(VisualMaskMode m) { return m == VisualMaskMode::remove ? "remove" : "zero"; }
const char* to_cstr(SaliencySource s) { return s == SaliencySource::last_layer_mean ? "last_layer_mean" : "last_head"; }

template <typename Enum>
Enum parse_enum(const std::string& s, std::initializer_list<std::pair<const char*, Enum>> options, const char* what) {
  for (const auto& [name, value] : options)
    if (s == name) return value;
  throw ConfigError(std::string("unknown ") + what + ": " + s);
}

}  // namespace

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c = desk_model_config();
  try {
    read_if(j, "vocab_size", c.vocab_size);
    read_if(j, "embed_dim", c.embed_dim);
    read_if(j, "num_heads", c.num_heads);
    read_if(j, "head_dim", c.head_dim);
    read_if(j, "num_layers", c.num_layers);
    read_if(j, "max_seq_len", c.max_seq_len);
    read_if(j, "rng_seed", c.rng_seed);
    read_if(j, "grounding_gain", c.grounding_gain);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

json to_json(const ModelConfig& c) {
  return json{{"vocab_size", c.vocab_size}, {"embed_dim", c.embed_dim}, {"num_heads", c.num_heads},
              {"head_dim", c.head_dim},     {"num_layers", c.num_layers}, {"max_seq_len", c.max_seq_len},
              {"rng_seed", c.rng_seed},     {"grounding_gain", c.grounding_gain}};
}

DecodeConfig decode_config_from_json(const json& j, DecodeConfig c) {
  try {
    if (j.contains("mode")) {
      c.mode = parse_enum<SearchMode>(j.at("mode").get<std::string>(),
                                      {{"greedy", SearchMode::greedy}, {"beam", SearchMode::beam}}, "mode");
    }
    read_if(j, "beam_size", c.beam_size);
    read_if(j, "max_new_tokens", c.max_new_tokens);
    read_if(j, "lambda", c.lambda);
    read_if(j, "alpha", c.alpha);
    read_if(j, "beta", c.beta);
    read_if(j, "sparsity_fraction", c.sparsity_fraction);
    read_if(j, "visual_mask_rate", c.visual_mask_rate);
    read_if(j, "plausibility_threshold", c.plausibility_threshold);
    read_if(j, "sparsify_stride", c.sparsify_stride);
    read_if(j, "rng_seed", c.rng_seed);
    read_if(j, "density_k", c.density_k);
    read_if(j, "num_peaks", c.num_peaks);
    read_if(j, "aggregate", c.aggregate);
    read_if(j, "stop_at_eos", c.stop_at_eos);
    if (j.contains("pooling")) {
      c.pooling = parse_enum<Pooling>(j.at("pooling").get<std::string>(),
                                      {{"mean", Pooling::mean}, {"last", Pooling::last}}, "pooling");
    }
    if (j.contains("mask_mode")) {
      c.mask_mode = parse_enum<VisualMaskMode>(j.at("mask_mode").get<std::string>(),
                                               {{"zero", VisualMaskMode::zero}, {"remove", VisualMaskMode::remove}},
                                               "mask_mode");
    }
    if (j.contains("saliency_source")) {
      c.saliency_source = parse_enum<SaliencySource>(
          j.at("saliency_source").get<std::string>(),
          {{"last_head", SaliencySource::last_head}, {"last_layer_mean", SaliencySource::last_layer_mean}},
          "saliency_source");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("decode config: ") + e.what());
  }
  c.validate();
  return c;
}

json to_json(const DecodeConfig& c) {
  return json{{"mode", to_cstr(c.mode)},
              {"beam_size", c.beam_size},
              {"max_new_tokens", c.max_new_tokens},
              {"lambda", c.lambda},
              {"alpha", c.alpha},
              {"beta", c.beta},
              {"sparsity_fraction", c.sparsity_fraction},
              {"visual_mask_rate", c.visual_mask_rate},
              {"plausibility_threshold", c.plausibility_threshold},
              {"sparsify_stride", c.sparsify_stride},
              {"rng_seed", c.rng_seed},
              {"density_k", c.density_k},
              {"num_peaks", c.num_peaks},
              {"aggregate", c.aggregate},
              {"stop_at_eos", c.stop_at_eos},
              {"pooling", to_cstr(c.pooling)},
              {"mask_mode", to_cstr(c.mask_mode)},
              {"saliency_source", to_cstr(c.saliency_source)}};
}

TaskConfig task_config_from_json(const json& j, TaskConfig c) {
  try {
    read_if(j, "num_image_tokens", c.num_image_tokens);
    read_if(j, "prompt_len", c.prompt_len);
    read_if(j, "grounded_size", c.grounded_size);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("task config: ") + e.what());
  }
  return c;
}

json to_json(const TaskConfig& c) {
  return json{{"num_image_tokens", c.num_image_tokens}, {"prompt_len", c.prompt_len}, {"grounded_size", c.grounded_size}};
}

RunConfig run_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config document must be a JSON object");
  RunConfig rc;
  rc.model = model_config_from_json(j);
  if (j.contains("decode")) rc.decode = decode_config_from_json(j.at("decode"));
  if (j.contains("task")) rc.task = task_config_from_json(j.at("task"));
  return rc;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
  return run_config_from_json(j);
}

json transcript_json(const RunConfig& config, std::uint64_t seed, const GroundingTask& task,
                     const GenerationResult& result) {
  json steps = json::array();
  for (const StepRecord& s : result.steps) {
    json flags = json::array();
    if (s.event) flags.push_back("sparsify");
    steps.push_back(json{{"token", s.token},
                         {"logit_argmax", static_cast<int>(argmax(s.logits.theta))},
                         {"plausibility_survivors", s.logits.survivors()},
                         {"event_flags", flags}});
  }
  json events = json::array();
  for (const SparsifyEvent& e : result.events) {
    json per_head = json::array();
    for (const HeadEvent& h : e.heads) {
      per_head.push_back(json{{"layer", h.layer},
                              {"head", h.head},
                              {"live_before", h.live_before},
                              {"kept", h.kept},
                              {"pruned", h.pruned},
                              {"clusters", h.clusters},
                              {"image_kept", h.image_kept}});
    }
    events.push_back(json{{"step", e.step},
                          {"heads", static_cast<int>(e.heads.size())},
                          {"kept", e.kept()},
                          {"pruned", e.pruned()},
                          {"clusters", e.clusters()},
                          {"image_kept", e.image_kept()},
                          {"per_head", per_head}});
  }
  return json{{"config",
               {{"seed", seed}, {"model", to_json(config.model)}, {"decode", to_json(config.decode)},
                {"task", to_json(config.task)}}},
              {"task",
               {{"grounded", task.grounded}, {"image_tokens", task.image_tokens}, {"prompt_tokens", task.prompt_tokens}}},
              {"tokens", result.tokens},
              {"log_prob", result.log_prob},
              {"hallucination_rate", hallucination_rate(task, result.tokens)},
              {"per_step", steps},
              {"events", events}};
}

std::string_view to_string(TraceKind kind) {
  switch (kind) {
    case TraceKind::attention: return "attention";
    case TraceKind::penalty: return "penalty";
    case TraceKind::saliency: return "saliency";
  }
  return "unknown";
}

void JsonlTraceWriter::write(const AttentionTrace& t) {
  json j{{"type", std::string(to_string(t.kind))},
         {"layer", t.layer},
         {"head", t.head},
         {"step", t.step},
         {"positions", std::vector<int>(t.positions.begin(), t.positions.end())},
         {"values", std::vector<double>(t.values.data(), t.values.data() + t.values.size())}};
  *out_ << j.dump() << '\n';
}

void JsonlTraceWriter::write_sequence(const TokenSequence& sequence) {
  std::vector<std::string> tags;
  for (Modality m : sequence.modalities) tags.emplace_back(to_string(m));
  *out_ << json{{"type", "sequence"}, {"tokens", sequence.tokens}, {"modalities", tags}}.dump() << '\n';
}

AttentionObserver JsonlTraceWriter::observer() {
  return [this](const AttentionTrace& t) { write(t); };
}

AttentionDump read_attention_dump(std::istream& in) {
  AttentionDump dump;
  int max_layer = -1;
  int max_head = -1;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      const std::string type = j.at("type").get<std::string>();
      if (type == "sequence") {
        dump.sequence.tokens = j.at("tokens").get<std::vector<TokenId>>();
        dump.sequence.modalities.clear();
        for (const auto& tag : j.at("modalities")) dump.sequence.modalities.push_back(modality_from_string(tag.get<std::string>()));
        continue;
      }
      DumpedTrace t;
      if (type == "attention") t.kind = TraceKind::attention;
      else if (type == "penalty") t.kind = TraceKind::penalty;
      else if (type == "saliency") t.kind = TraceKind::saliency;
      else throw Error("unknown record type " + type);
      t.layer = j.at("layer").get<int>();
      t.head = j.at("head").get<int>();
      t.step = j.at("step").get<int>();
      t.positions = j.at("positions").get<std::vector<int>>();
      const auto values = j.at("values").get<std::vector<double>>();
      t.values = Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
      max_layer = std::max(max_layer, t.layer);
      max_head = std::max(max_head, t.head);
      dump.traces.push_back(std::move(t));
    } catch (const json::exception& e) {
      throw Error("attention dump line " + std::to_string(line_no) + ": " + e.what());
    } catch (const std::invalid_argument& e) {
      throw Error("attention dump line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  dump.record = AttentionRecord(max_layer + 1, max_head + 1);
  for (const DumpedTrace& t : dump.traces) {
    if (t.kind == TraceKind::attention) dump.record.add_row(t.layer, t.head, t.step, t.positions, t.values);
  }
  return dump;
}

namespace {

void full_precision(std::ostream& out) { out << std::setprecision(std::numeric_limits<double>::max_digits10); }

}  // namespace

void write_recall_csv(std::ostream& out, const RecallCurve& curve) {
  full_precision(out);
  out << "fraction,recall\n";
  for (std::size_t i = 0; i < curve.fractions_kept.size(); ++i) {
    out << curve.fractions_kept[i] << ',' << curve.recall_at_fraction[i] << '\n';
  }
}

void write_sink_csv(std::ostream& out, const SinkReport& report) {
  full_precision(out);
  out << "position,cumulative_mass,modality,sink_flag\n";
  for (std::size_t j = 0; j < report.cumulative_mass.size(); ++j) {
    out << j << ',' << report.cumulative_mass[j] << ','
        << (j < report.modality.size() ? to_string(report.modality[j]) : std::string_view("unknown")) << ','
        << static_cast<int>(report.sink_flag[j]) << '\n';
  }
}

void write_density_csv(std::ostream& out, const ModalityDensity& density) {
  full_precision(out);
  out << "bin_lo,bin_hi,image_count,text_count\n";
  for (std::size_t b = 0; b < density.image_counts.size(); ++b) {
    out << density.bin_edges[b] << ',' << density.bin_edges[b + 1] << ',' << density.image_counts[b] << ','
        << density.text_counts[b] << '\n';
  }
}

void write_metrics_csv(std::ostream& out, const BenchReport& report) {
  full_precision(out);
  out << "arm,seed,tps,hallucination_rate,image_tokens_kept\n";
  for (const BenchRow& r : report.rows) {
    out << r.arm << ',' << r.seed << ',' << r.tps << ',' << r.hallucination_rate << ',' << r.image_tokens_kept << '\n';
  }
}

void write_oracle_csv(std::ostream& out, const std::vector<OracleRow>& rows) {
  full_precision(out);
  out << "instance_id,L,S,lambda,greedy_objective,oracle_objective,equal_flag\n";
  for (const OracleRow& r : rows) {
    out << r.instance_id << ',' << r.length << ',' << r.budget << ',' << r.lambda << ',' << r.greedy_objective << ','
        << r.oracle_objective << ',' << (r.equal ? 1 : 0) << '\n';
  }
}

}  // namespace vasparse
