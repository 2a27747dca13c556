#include "doctest.h"

#include "vasparse/error.hpp"
#include "vasparse/io.hpp"

#include <sstream>

using namespace vasparse;

TEST_CASE("config round trip") {
  RunConfig rc;
  rc.decode.mode = SearchMode::beam;
  rc.decode.beam_size = 2;
  rc.decode.mask_mode = VisualMaskMode::remove;
  rc.decode.saliency_source = SaliencySource::last_layer_mean;
  rc.task.grounded_size = 9;
  json doc = to_json(rc.model);
  doc["decode"] = to_json(rc.decode);
  doc["task"] = to_json(rc.task);
  const RunConfig back = run_config_from_json(doc);
  CHECK(to_json(back.model) == to_json(rc.model));
  CHECK(to_json(back.decode) == to_json(rc.decode));
  CHECK(back.task.grounded_size == 9);
}

TEST_CASE("config errors") {
  CHECK_THROWS_AS(run_config_from_json(json::array()), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(json{{"embed_dim", "wide"}}), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(json{{"decode", {{"mode", "sample"}}}}), ConfigError);
  CHECK_THROWS_AS(load_run_config("/nonexistent/config.json"), ConfigError);
}

TEST_CASE("partial config keeps defaults") {
  const RunConfig rc = run_config_from_json(json{{"decode", {{"alpha", 0.3}}}});
  CHECK(rc.decode.alpha == 0.3);
  CHECK(rc.decode.lambda == 0.1);
  CHECK(rc.model.grounding_gain == desk_model_config().grounding_gain);
}

TEST_CASE("transcript schema") {
  RunConfig rc;
  rc.decode.max_new_tokens = 32;
  rc.decode.stop_at_eos = false;
  const GroundingTask task = make_grounding_task(rc.model, rc.task, 3);
  const GenerationResult r = generate(prepare_state(rc.model, task), rc.decode);
  const json t = transcript_json(rc, 3, task, r);
  CHECK(t.at("tokens").size() == 32);
  CHECK(t.at("per_step").size() == 32);
  CHECK(t.at("events").size() == 2);
  const json& step = t.at("per_step")[15];
  CHECK(step.contains("logit_argmax"));
  CHECK(step.contains("plausibility_survivors"));
  CHECK(step.at("event_flags") == json::array({"sparsify"}));
  const json& event = t.at("events")[0];
  for (const char* key : {"step", "heads", "kept", "pruned", "clusters"}) CHECK(event.contains(key));
  CHECK(t.at("config").at("seed") == 3);
  CHECK(transcript_json(rc, 3, task, r).dump() == t.dump());
}

TEST_CASE("attention dump round trip") {
  RunConfig rc;
  rc.decode.max_new_tokens = 20;
  rc.decode.sparsify_stride = 8;
  rc.decode.sparsity_fraction = 0.75;
  rc.decode.stop_at_eos = false;
  const GroundingTask task = make_grounding_task(rc.model, rc.task, 4);

  DecoderState state = init_model(rc.model);
  AttentionRecord direct(rc.model.num_layers, rc.model.num_heads);
  const AttentionObserver feed = direct.observer();
  std::stringstream buffer;
  JsonlTraceWriter writer(buffer);
  const AttentionObserver write = writer.observer();
  state.observer = [&](const AttentionTrace& t) {
    feed(t);
    write(t);
  };
  ingest(state, task.image_tokens, task.prompt_tokens);
  const GenerationResult r = generate(std::move(state), rc.decode);
  writer.write_sequence(r.final_state.sequence);

  const AttentionDump dump = read_attention_dump(buffer);
  CHECK(dump.record.length() == direct.length());
  CHECK(dump.sequence.tokens == r.final_state.sequence.tokens);
  CHECK(dump.sequence.modalities == r.final_state.sequence.modalities);
  CHECK((dump.record.mean() - direct.mean()).cwiseAbs().maxCoeff() < 1e-15);
  const auto penalties = std::count_if(dump.traces.begin(), dump.traces.end(),
                                       [](const DumpedTrace& d) { return d.kind == TraceKind::penalty; });
  CHECK(penalties == 3 * rc.model.num_layers * rc.model.num_heads);

  std::stringstream bad("{\"type\":\"attention\"}\n");
  CHECK_THROWS_AS(read_attention_dump(bad), Error);
}

TEST_CASE("csv headers") {
  std::ostringstream o;
  write_oracle_csv(o, {OracleRow{0, 4, 2, 0.1, -0.5, -0.5, true}});
  CHECK(o.str().rfind("instance_id,L,S,lambda,greedy_objective,oracle_objective,equal_flag\n0,4,2,", 0) == 0);
  std::ostringstream m;
  write_metrics_csv(m, BenchReport{{BenchRow{"topk", 7, 10.0, 11.0, 0.25, 20.0}}, ""});
  CHECK(m.str() == "arm,seed,tps,hallucination_rate,image_tokens_kept\ntopk,7,10,0.25,20\n");
  std::ostringstream s;
  SinkReport r;
  r.cumulative_mass = {2.0, 0.5};
  r.sink_flag = {1, 0};
  r.modality = {Modality::image, Modality::generated};
  write_sink_csv(s, r);
  CHECK(s.str() == "position,cumulative_mass,modality,sink_flag\n0,2,image,1\n1,0.5,generated,0\n");
}
