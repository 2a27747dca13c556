#include "vasparse/record.hpp"

#include "vasparse/error.hpp"

#include <algorithm>

namespace vasparse {

AttentionRecord::AttentionRecord(int num_layers, int num_heads)
    : num_layers_(num_layers),
      num_heads_(num_heads),
      rows_(static_cast<std::size_t>(num_layers * num_heads)) {}

void AttentionRecord::add_row(int layer, int head, int step, std::span<const int> positions, const Vector& scores) {
  detail::require<ShapeError>(layer >= 0 && layer < num_layers_ && head >= 0 && head < num_heads_,
                              "AttentionRecord: layer/head out of range");
  detail::require<ShapeError>(static_cast<Eigen::Index>(positions.size()) == scores.size(),
                              "AttentionRecord: positions and scores differ in length");
  auto& rows = rows_[static_cast<std::size_t>(layer * num_heads_ + head)];
  if (static_cast<int>(rows.size()) <= step) rows.resize(static_cast<std::size_t>(step) + 1);
  Vector row = Vector::Zero(step + 1);
  for (std::size_t c = 0; c < positions.size(); ++c) {
    detail::require<ShapeError>(positions[c] >= 0 && positions[c] <= step,
                                "AttentionRecord: score refers to a future position");
    row(positions[c]) += scores(static_cast<Eigen::Index>(c));
  }
  rows[static_cast<std::size_t>(step)] = std::move(row);
  length_ = std::max(length_, step + 1);
}

Matrix AttentionRecord::head(int layer, int head) const {
  detail::require<ShapeError>(layer >= 0 && layer < num_layers_ && head >= 0 && head < num_heads_,
                              "AttentionRecord: layer/head out of range");
  Matrix m = Matrix::Zero(length_, length_);
  const auto& rows = rows_[static_cast<std::size_t>(layer * num_heads_ + head)];
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() > 0) m.row(static_cast<Eigen::Index>(i)).head(rows[i].size()) = rows[i].transpose();
  }
  return m;
}

std::vector<Matrix> AttentionRecord::heads() const {
  std::vector<Matrix> out;
  out.reserve(rows_.size());
  for (int l = 0; l < num_layers_; ++l)
    for (int h = 0; h < num_heads_; ++h) out.push_back(head(l, h));
  return out;
}

Matrix AttentionRecord::mean() const {
  Matrix acc = Matrix::Zero(length_, length_);
  if (rows_.empty()) return acc;
  for (int l = 0; l < num_layers_; ++l)
    for (int h = 0; h < num_heads_; ++h) acc += head(l, h);
  return acc / static_cast<double>(rows_.size());
}

AttentionObserver AttentionRecord::observer() {
  return [this](const AttentionTrace& t) {
    if (t.kind == TraceKind::attention) add_row(t.layer, t.head, t.step, t.positions, t.values);
  };
}

}  // namespace vasparse
