#pragma once

// Diagnostics over recorded attention: long-tail recall, attention-score
// density split by modality, and attention-sink detection.

#include "vasparse/record.hpp"
#include "vasparse/types.hpp"

#include <span>
#include <vector>

namespace vasparse {

struct RecallCurve {
  std::vector<double> fractions_kept;      // ascending, in (0, 1]
  std::vector<double> recall_at_fraction;  // non-decreasing, 1.0 at fraction 1.0
};

/// 0.01, 0.02, 0.05, 0.1, 0.2, ..., 1.0
std::vector<double> default_fractions();

/// Recall of one score row: for each f, mass of the top ceil(f * n) scores
/// over the total mass.
RecallCurve recall_curve(const Vector& scores, std::span<const double> fractions);

/// Mean recall over the rows of one head's lower-triangular matrix; row i
/// ranks its i + 1 visible entries.
RecallCurve recall_curve(const Matrix& head, std::span<const double> fractions);

/// Macro-average of the per-head curves.
RecallCurve recall_curve(const AttentionRecord& record, std::span<const double> fractions);

struct ModalityDensity {
  std::vector<double> bin_edges;  // bins + 1 shared edges over [0, 1]
  std::vector<long> image_counts;
  std::vector<long> text_counts;  // prompt and generated positions

  long image_total() const;
  long text_total() const;
};

/// Histograms of received attention scores, split by the modality of the
/// attended (column) position. Counts every lower-triangular entry j <= i.
ModalityDensity modality_density(const Matrix& head, std::span<const Modality> tags, int bins = 20);
ModalityDensity modality_density(const AttentionRecord& record, std::span<const Modality> tags, int bins = 20);

struct SinkReport {
  std::vector<double> cumulative_mass;
  std::vector<std::uint8_t> sink_flag;
  std::vector<Modality> modality;
  double median_mass = 0.0;
  double threshold_multiple = 4.0;

  std::vector<int> sinks() const;
};

inline constexpr double kDefaultSinkThreshold = 4.0;

/// Flags columns whose cumulative mass exceeds threshold_multiple x the median
/// column mass. `tags` may be empty, in which case modalities are left out.
SinkReport detect_sinks(const Matrix& attention, double threshold_multiple = kDefaultSinkThreshold,
                        std::span<const Modality> tags = {});

/// Sink detection on the head-averaged matrix.
SinkReport detect_sinks(const AttentionRecord& record, double threshold_multiple = kDefaultSinkThreshold,
                        std::span<const Modality> tags = {});

}  // namespace vasparse
