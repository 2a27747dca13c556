#pragma once

#include "vasparse/types.hpp"

#include <functional>
#include <span>
#include <vector>

namespace vasparse {

enum class TraceKind : std::uint8_t { attention, penalty, saliency };

/// One emitted row: an attention score row for a (layer, head, step), or a
/// penalty / saliency vector computed at a sparsification event. `positions`
/// holds the original sequence index of each cached row the values refer to.
struct AttentionTrace {
  TraceKind kind = TraceKind::attention;
  int layer = 0;
  int head = 0;
  int step = 0;
  std::span<const int> positions;
  const Vector& values;
};

using AttentionObserver = std::function<void(const AttentionTrace&)>;

/// Post-softmax attention history per (layer, head), stored by original
/// sequence position. Row i is the query at position i; rows are lower
/// triangular. Scores for an aggregated cache row are attributed to the
/// position it carries.
class AttentionRecord {
 public:
  AttentionRecord() = default;
  AttentionRecord(int num_layers, int num_heads);

  int num_layers() const { return num_layers_; }
  int num_heads() const { return num_heads_; }
  /// Number of query rows recorded (max step + 1 over all heads).
  int length() const { return length_; }
  bool empty() const { return length_ == 0; }

  void add_row(int layer, int head, int step, std::span<const int> positions, const Vector& scores);

  /// Dense length() x length() matrix for one head; unrecorded rows are zero.
  Matrix head(int layer, int head) const;
  /// Element-wise mean over all heads of all layers.
  Matrix mean() const;
  std::vector<Matrix> heads() const;

  /// Observer that feeds attention traces into this record. The record must
  /// outlive the observer.
  AttentionObserver observer();

 private:
  int num_layers_ = 0;
  int num_heads_ = 0;
  int length_ = 0;
  std::vector<std::vector<Vector>> rows_;  // [layer * num_heads + head][step]
};

}  // namespace vasparse
