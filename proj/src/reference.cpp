#include "vasparse/reference.hpp"

#include "vasparse/error.hpp"

#include <cmath>
#include <limits>

namespace vasparse {

namespace {

RowMatrix rowwise_layer_norm(const RowMatrix& x) {
  RowMatrix out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).mean();
    const double var = (x.row(r).array() - mean).square().mean();
    out.row(r) = (x.row(r).array() - mean) / std::sqrt(var + 1e-5);
  }
  return out;
}

}  // namespace

RowMatrix reference_forward(const DecoderState& source, const TokenSequence& sequence) {
  const ModelConfig& cfg = source.config;
  const ModelWeights& w = *source.weights;
  const auto n = static_cast<Eigen::Index>(sequence.size());
  detail::require<ShapeError>(n > 0 && n <= cfg.max_seq_len, "reference_forward: bad sequence length");
  const int hd = cfg.head_dim;

  RowMatrix x(n, cfg.embed_dim);
  for (Eigen::Index t = 0; t < n; ++t) {
    const auto i = static_cast<std::size_t>(t);
    const RowMatrix& table = sequence.modalities[i] == Modality::image ? w.image_embedding : w.text_embedding;
    x.row(t) = table.row(sequence.tokens[i]) + w.position_embedding.row(t);
  }

  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  for (const LayerWeights& lw : w.layers) {
    const RowMatrix h = rowwise_layer_norm(x);
    const RowMatrix q = h * lw.wq.transpose();
    const RowMatrix k = h * lw.wk.transpose();
    const RowMatrix v = h * lw.wv.transpose();
    RowMatrix context(n, cfg.embed_dim);
    for (int head = 0; head < cfg.num_heads; ++head) {
      Matrix scores = q.middleCols(head * hd, hd) * k.middleCols(head * hd, hd).transpose() * inv_sqrt;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double peak = scores.row(i).head(i + 1).maxCoeff();
        scores.row(i).head(i + 1) = (scores.row(i).head(i + 1).array() - peak).exp();
        scores.row(i).head(i + 1) /= scores.row(i).head(i + 1).sum();
        scores.row(i).tail(n - i - 1).setZero();
      }
      context.middleCols(head * hd, hd) = scores * v.middleCols(head * hd, hd);
    }
    x += context * lw.wo.transpose();
    RowMatrix hidden = rowwise_layer_norm(x) * lw.w1.transpose();
    hidden = hidden.unaryExpr([](double a) { return 0.5 * a * (1.0 + std::tanh(0.7978845608028654 * (a + 0.044715 * a * a * a))); });
    x += hidden * lw.w2.transpose();
  }
  RowMatrix logits = rowwise_layer_norm(x) * w.lm_head.transpose();
  logits.rowwise() += w.lm_bias.transpose();
  return logits;
}

}  // namespace vasparse
