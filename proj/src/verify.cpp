#include "vasparse/verify.hpp"

#include "vasparse/analysis.hpp"
#include "vasparse/calibration.hpp"
#include "vasparse/reference.hpp"
#include "vasparse/rng.hpp"
#include "vasparse/selection.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace vasparse {

bool VerifyReport::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
}

namespace {

struct Instance {
  Vector query;
  RowMatrix keys;
  Vector saliency;
};

Instance random_instance(std::mt19937_64& rng, int length, int dim) {
  std::normal_distribution<double> normal;
  Instance in;
  in.query = Vector::NullaryExpr(dim, [&] { return normal(rng); });
  in.keys = RowMatrix::NullaryExpr(length, dim, [&] { return normal(rng); });
  in.saliency = softmax(Vector::NullaryExpr(length, [&] { return normal(rng); }));
  return in;
}

// Random lower-triangular attention matrix with softmax rows.
Matrix random_attention(std::mt19937_64& rng, int n) {
  std::normal_distribution<double> normal(0.0, 1.5);
  Matrix a = Matrix::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    const Vector logits = Vector::NullaryExpr(i + 1, [&] { return normal(rng); });
    a.row(i).head(i + 1) = softmax(logits).transpose();
  }
  return a;
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(3);
  s << v;
  return s.str();
}

CheckResult check(std::string name, bool ok, std::string detail) { return {std::move(name), ok, std::move(detail)}; }

ModelConfig verify_model(const VerifyOptions& o, std::uint64_t seed) {
  ModelConfig c = o.model;
  c.rng_seed = derive_seed(seed, "model");
  return c;
}

GroundingTask verify_task(const ModelConfig& model, std::uint64_t seed) {
  TaskConfig t;
  t.num_image_tokens = 12;
  t.prompt_len = 4;
  t.grounded_size = 8;
  return make_grounding_task(model, t, derive_seed(seed, "tasks"));
}

CheckResult check_oracle(const std::vector<OracleRow>& rows) {
  const auto bad = std::count_if(rows.begin(), rows.end(), [](const OracleRow& r) { return !r.equal; });
  return check("greedy_matches_oracle", bad == 0 && !rows.empty(),
               std::to_string(rows.size() - static_cast<std::size_t>(bad)) + "/" + std::to_string(rows.size()) +
                   " instances equal");
}

CheckResult check_exchange(std::mt19937_64& rng) {
  long violations = 0;
  long swaps = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 11);
    const Instance in = random_instance(rng, n, 4);
    const double lambda = (trial % 2 == 0) ? 0.1 : 1.0;
    const int s = 1 + static_cast<int>(rng() % static_cast<unsigned>(n - 1));
    const SparseMask mask = select_top_s(aggregated_scores(in.query, in.keys, in.saliency, lambda), s);
    const double base = objective(in.query, in.keys, mask, in.saliency, lambda).error;
    for (int i : mask.kept()) {
      for (int j : mask.pruned()) {
        SparseMask swapped = mask;
        swapped.keep(i) = false;
        swapped.keep(j) = true;
        ++swaps;
        if (objective(in.query, in.keys, swapped, in.saliency, lambda).error < base - 1e-12) ++violations;
      }
    }
  }
  return check("greedy_exchange_property", violations == 0,
               std::to_string(swaps) + " swaps, " + std::to_string(violations) + " decreased the objective");
}

CheckResult check_delta_monotonicity(std::mt19937_64& rng) {
  long violations = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const int n = 3 + static_cast<int>(rng() % 14);
    Instance in = random_instance(rng, n, 4);
    const double lambda = 0.1 + static_cast<double>(trial % 3);
    const int s = 1 + static_cast<int>(rng() % static_cast<unsigned>(n));
    const SparseMask before = select_top_s(aggregated_scores(in.query, in.keys, in.saliency, lambda), s);
    const int i = static_cast<int>(rng() % static_cast<unsigned>(n));
    in.saliency(i) += 0.5;
    const SparseMask after = select_top_s(aggregated_scores(in.query, in.keys, in.saliency, lambda), s);
    if (before.keep(i) && !after.keep(i)) ++violations;
  }
  return check("delta_monotonicity", violations == 0, std::to_string(violations) + " violations in 300 trials");
}

CheckResult check_objective_decomposition(std::mt19937_64& rng) {
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 16);
    const Instance in = random_instance(rng, n, 8);
    const int s = static_cast<int>(rng() % static_cast<unsigned>(n + 1));
    const SparseMask m = select_top_s(aggregated_scores(in.query, in.keys, in.saliency, 0.1), s);
    const ObjectiveValue v = objective(in.query, in.keys, m, in.saliency, 0.1);
    worst = std::max(worst, std::abs(v.error - (v.attention_term - v.lambda * v.saliency_term)));
  }
  return check("objective_decomposition", worst <= 1e-9, "max |error - (att - lambda sal)| = " + fmt(worst));
}

CheckResult check_saliency_normalization(std::mt19937_64& rng) {
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 40);
    const Matrix a = random_attention(rng, n);
    std::vector<int> image(static_cast<std::size_t>(1 + rng() % static_cast<unsigned>(n)));
    std::iota(image.begin(), image.end(), 0);
    worst = std::max(worst, std::abs(saliency_scores(a, image).sum() - 1.0));
  }
  return check("saliency_normalization", worst <= 1e-6, "max |sum P - 1| = " + fmt(worst));
}

CheckResult check_clusters(std::mt19937_64& rng) {
  double worst = 0.0;
  bool partition = true;
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 40);
    const RowMatrix k = RowMatrix::NullaryExpr(n, 8, [&] { return normal(rng); });
    const RowMatrix v = RowMatrix::NullaryExpr(n, 8, [&] { return normal(rng); });
    std::vector<int> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 100);
    const ClusterAssignment c = aggregate_discarded(k, v, idx);
    worst = std::max({worst, (c.keys.colwise().sum() - k.colwise().sum()).cwiseAbs().maxCoeff(),
                      (c.values.colwise().sum() - v.colwise().sum()).cwiseAbs().maxCoeff()});
    partition = partition && c.keys.rows() == c.num_peaks && static_cast<int>(c.cluster_of.size()) == n &&
                std::all_of(c.cluster_of.begin(), c.cluster_of.end(),
                            [&](int id) { return id >= 0 && id < c.num_peaks; });
  }
  return check("cluster_partition_conservation", partition && worst <= 1e-9,
               "max conservation error " + fmt(worst) + (partition ? "" : ", partition broken"));
}

CheckResult check_penalty_properties(std::mt19937_64& rng) {
  double norm_err = 0.0;
  bool positive = true;
  double homog_err = 0.0;
  double perm_err = 0.0;
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 30);
    const Matrix a = random_attention(rng, n);
    const PenaltyVector w = sink_weights(a, 0.1);
    norm_err = std::max(norm_err, std::abs(w.weights.sum() - 1.0));
    positive = positive && (w.weights.array() > 0.0).all();

    const Vector s = Vector::NullaryExpr(n, [&] { return normal(rng); });
    const double c = 0.5 + static_cast<double>(rng() % 100) / 10.0;
    homog_err = std::max(homog_err, (apply_penalty(Vector(c * s), w) - c * apply_penalty(s, w)).cwiseAbs().maxCoeff());

    std::vector<int> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Matrix permuted(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) permuted(i, j) = a(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
    // Column sums of a permuted full matrix; use the mass form since the
    // permuted matrix is no longer lower triangular.
    const PenaltyVector wp = sink_weights_from_mass(permuted.colwise().sum().transpose());
    for (int j = 0; j < n; ++j) perm_err = std::max(perm_err, std::abs(wp.weights(j) - w.weights(perm[static_cast<std::size_t>(j)])));
  }
  const bool ok = norm_err <= 1e-6 && positive && homog_err <= 1e-12 && perm_err <= 1e-12;
  return check("penalty_normalization_homogeneity_equivariance", ok,
               "sum err " + fmt(norm_err) + ", homogeneity err " + fmt(homog_err) + ", permutation err " + fmt(perm_err));
}

CheckResult check_sink_damping() {
  const int n = 8;
  Matrix a = Matrix::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    a(i, 0) = i == 0 ? 1.0 : 0.9;
    for (int j = 1; j <= i; ++j) a(i, j) = 0.1 / i;
  }
  const PenaltyVector w = sink_weights(a, 0.1);
  Vector s = Vector::Constant(n, 1.0);
  s(0) = 2.0;
  const double before = softmax(s)(0);
  const double after = softmax(apply_penalty(s, w))(0);
  return check("sink_damping", after < before, "sink share " + fmt(before) + " -> " + fmt(after));
}

CheckResult check_beta_zero(std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  bool identical = true;
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 20);
    const Vector q = Vector::NullaryExpr(8, [&] { return normal(rng); });
    const RowMatrix k = RowMatrix::NullaryExpr(n, 8, [&] { return normal(rng); });
    const RowMatrix v = RowMatrix::NullaryExpr(n, 8, [&] { return normal(rng); });
    const Vector w = softmax(Vector::NullaryExpr(n, [&] { return normal(rng); }));
    const auto plain = attention_step(q, k, v);
    const auto zero = attention_step(q, k, v, w, 0.0);
    identical = identical && plain.scores == zero.scores && plain.context == zero.context;
  }
  return check("beta_zero_noop", identical, identical ? "bitwise identical" : "outputs differ");
}

std::vector<TokenId> plain_greedy(DecoderState& state, int steps, std::vector<Vector>* logits) {
  std::vector<TokenId> out;
  for (int t = 0; t < steps; ++t) {
    if (logits) logits->push_back(state.last_logits);
    const auto tok = static_cast<TokenId>(argmax(state.last_logits));
    out.push_back(tok);
    decode_step(state, tok);
  }
  return out;
}

CheckResult check_cache_free(const VerifyOptions& o) {
  double worst = 0.0;
  for (int s = 0; s < 3; ++s) {
    const ModelConfig model = verify_model(o, o.seed + static_cast<std::uint64_t>(s));
    const GroundingTask task = verify_task(model, o.seed + static_cast<std::uint64_t>(s));
    DecoderState state = prepare_state(model, task);
    std::vector<Vector> cached;
    plain_greedy(state, 16, &cached);
    const RowMatrix ref = reference_forward(state, state.sequence);
    const int prompt = static_cast<int>(task.image_tokens.size() + task.prompt_tokens.size());
    for (int t = 0; t < 16; ++t) {
      worst = std::max(worst, (ref.row(prompt - 1 + t).transpose() - cached[static_cast<std::size_t>(t)]).cwiseAbs().maxCoeff());
    }
  }
  return check("cache_free_equivalence", worst <= 1e-5, "max logit diff " + fmt(worst));
}

CheckResult check_baseline(const VerifyOptions& o) {
  double worst = 0.0;
  bool same_tokens = true;
  for (int s = 0; s < 3; ++s) {
    const ModelConfig model = verify_model(o, o.seed + static_cast<std::uint64_t>(s));
    const GroundingTask task = verify_task(model, o.seed + static_cast<std::uint64_t>(s));
    DecoderState plain = prepare_state(model, task);
    std::vector<Vector> plain_logits;
    const auto plain_tokens = plain_greedy(plain, 32, &plain_logits);

    DecodeConfig cfg;
    cfg.alpha = 0.0;
    cfg.beta = 0.0;
    cfg.sparsity_fraction = 1.0;
    cfg.max_new_tokens = 32;
    cfg.sparsify_stride = 8;
    cfg.stop_at_eos = false;
    const GenerationResult r = generate(prepare_state(model, task), cfg);
    same_tokens = same_tokens && r.tokens == plain_tokens;
    for (std::size_t t = 0; t < r.steps.size(); ++t) {
      worst = std::max(worst, (r.steps[t].logits.theta - plain_logits[t]).cwiseAbs().maxCoeff());
    }
  }
  return check("baseline_equivalence", same_tokens && worst <= 1e-9,
               "max logit diff " + fmt(worst) + (same_tokens ? "" : ", token streams differ"));
}

CheckResult check_decode_properties(const VerifyOptions& o, std::mt19937_64& rng) {
  const ModelConfig model = verify_model(o, o.seed);
  const GroundingTask task = verify_task(model, o.seed);
  DecoderState state = prepare_state(model, task);

  // Plausibility safety on the first record.
  DecodeConfig cfg;
  cfg.rng_seed = rng();
  cfg.max_new_tokens = 24;
  cfg.sparsify_stride = 8;
  cfg.sparsity_fraction = 0.75;
  cfg.stop_at_eos = false;

  bool safety = true;
  bool affine = true;
  double affine_err = 0.0;
  {
    for (int step = 0; step < 5; ++step) {
      LogitRecord rec = plausibility_filter(contrastive_logits(state, cfg, step), cfg.plausibility_threshold);
      safety = safety && rec.plausible(argmax(rec.theta));
      DecodeConfig a0 = cfg, a1 = cfg, a2 = cfg;
      a0.alpha = 0.0;
      a1.alpha = 0.1;
      a2.alpha = 0.2;
      const Vector c0 = contrastive_logits(state, a0, step).combined;
      const Vector c1 = contrastive_logits(state, a1, step).combined;
      const Vector c2 = contrastive_logits(state, a2, step).combined;
      affine_err = std::max(affine_err, (c0 - 2.0 * c1 + c2).cwiseAbs().maxCoeff());
      decode_step(state, static_cast<TokenId>(argmax(rec.combined)));
    }
    affine = affine_err <= 1e-9;
  }

  DecodeConfig beam = cfg;
  beam.mode = SearchMode::beam;
  beam.beam_size = 3;
  const GenerationResult br = generate(prepare_state(model, task), beam);
  bool monotone = true;
  for (std::size_t i = 1; i < br.score_trace.size(); ++i) monotone = monotone && br.score_trace[i] <= br.score_trace[i - 1];
  monotone = monotone && !br.score_trace.empty() && br.score_trace.front() <= 0.0;

  DecodeConfig single = cfg;
  single.mode = SearchMode::beam;
  single.beam_size = 1;
  const bool beam_one = generate(prepare_state(model, task), single).tokens == generate(prepare_state(model, task), cfg).tokens;

  const GenerationResult gr = generate(prepare_state(model, task), cfg);
  bool shrinks = !gr.events.empty();
  for (const SparsifyEvent& e : gr.events) {
    for (const HeadEvent& h : e.heads) {
      if (h.pruned > h.clusters) shrinks = shrinks && h.kept + h.clusters < h.live_before;
    }
  }

  std::ostringstream d;
  d << "safety " << safety << ", affine err " << fmt(affine_err) << ", beam monotone " << monotone << ", beam1==greedy "
    << beam_one << ", shrink " << shrinks;
  return check("decoding_properties", safety && affine && monotone && beam_one && shrinks, d.str());
}

CheckResult check_record_properties(const VerifyOptions& o) {
  const ModelConfig model = verify_model(o, o.seed + 7);
  const GroundingTask task = verify_task(model, o.seed + 7);
  DecoderState state = init_model(model);
  AttentionRecord record(model.num_layers, model.num_heads);
  state.observer = record.observer();
  ingest(state, task.image_tokens, task.prompt_tokens);
  plain_greedy(state, 32, nullptr);

  double row_err = 0.0;
  bool causal = true;
  for (const Matrix& head : record.heads()) {
    row_err = std::max(row_err, (head.rowwise().sum().array() - 1.0).abs().maxCoeff());
    for (Eigen::Index i = 0; i < head.rows(); ++i) causal = causal && (head.row(i).tail(head.cols() - i - 1).array() == 0.0).all();
  }

  const RecallCurve curve = recall_curve(record, default_fractions());
  const bool monotone = std::is_sorted(curve.recall_at_fraction.begin(), curve.recall_at_fraction.end()) &&
                        curve.recall_at_fraction.back() == 1.0;

  const ModalityDensity density = modality_density(record, state.sequence.modalities);
  const long n = record.length();
  const bool conserved = density.image_total() + density.text_total() ==
                         static_cast<long>(model.num_layers * model.num_heads) * n * (n + 1) / 2;

  const Matrix mean = record.mean();
  Matrix flipped = mean.colwise().reverse();
  const bool perm_invariant = detect_sinks(mean).sinks() == detect_sinks(flipped).sinks();

  std::ostringstream d;
  d << "row err " << fmt(row_err) << ", causal " << causal << ", recall monotone " << monotone << ", density conserved "
    << conserved << ", sink row-permutation invariant " << perm_invariant;
  return check("record_properties", row_err <= 1e-6 && causal && monotone && conserved && perm_invariant, d.str());
}

}  // namespace

std::vector<OracleRow> oracle_comparison(int instances, int max_len, std::uint64_t seed) {
  if (max_len < 1 || max_len > kOracleMaxLength) throw TractabilityError("oracle_comparison: max_len must lie in [1, 20]");
  std::mt19937_64 rng(derive_seed(seed, "oracle"));
  constexpr double kLambdas[] = {0.0, 0.1, 1.0};
  std::vector<OracleRow> rows;
  rows.reserve(static_cast<std::size_t>(instances));
  for (int id = 0; id < instances; ++id) {
    const int n = 1 + static_cast<int>(rng() % static_cast<unsigned>(max_len));
    const int s = 1 + static_cast<int>(rng() % static_cast<unsigned>(n));
    const double lambda = kLambdas[id % 3];
    const Instance in = random_instance(rng, n, 8);
    const SparseMask greedy = select_top_s(aggregated_scores(in.query, in.keys, in.saliency, lambda), s);
    const double g = objective(in.query, in.keys, greedy, in.saliency, lambda).error;
    const auto [mask, best] = oracle_optimal_mask(in.query, in.keys, in.saliency, lambda, s);
    rows.push_back(OracleRow{id, n, s, lambda, g, best.error, g == best.error});
  }
  return rows;
}

VerifyReport run_verify(const VerifyOptions& options, const std::function<void(const CheckResult&)>& progress) {
  VerifyReport report;
  std::mt19937_64 rng(derive_seed(options.seed, "verify"));
  auto add = [&](CheckResult r) {
    if (progress) progress(r);
    report.checks.push_back(std::move(r));
  };
  report.oracle_rows = oracle_comparison(options.instances, options.max_len, options.seed);
  add(check_oracle(report.oracle_rows));
  add(check_exchange(rng));
  add(check_delta_monotonicity(rng));
  add(check_objective_decomposition(rng));
  add(check_saliency_normalization(rng));
  add(check_clusters(rng));
  add(check_penalty_properties(rng));
  add(check_sink_damping());
  add(check_beta_zero(rng));
  add(check_cache_free(options));
  add(check_baseline(options));
  add(check_decode_properties(options, rng));
  add(check_record_properties(options));
  return report;
}

}  // namespace vasparse
