#include "vasparse/analysis.hpp"

#include "vasparse/error.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

namespace vasparse {

namespace {

std::vector<double> checked_fractions(std::span<const double> fractions) {
  detail::require<EmptyInputError>(!fractions.empty(), "recall_curve: no fractions given");
  std::vector<double> out(fractions.begin(), fractions.end());
  for (double f : out) {
    detail::require<PreconditionError>(f > 0.0 && f <= 1.0, "recall_curve: fractions must lie in (0, 1]");
  }
  std::sort(out.begin(), out.end());
  return out;
}

// Number of entries kept at fraction f of n. The small slack keeps products
// such as 0.3 * 10 from rounding up to 4.
Eigen::Index kept_count(double f, Eigen::Index n) {
  const auto k = static_cast<Eigen::Index>(std::ceil(f * static_cast<double>(n) - 1e-9));
  return std::clamp<Eigen::Index>(k, 1, n);
}

// Returns false when the row carries no mass.
bool accumulate_row_recall(const Eigen::Ref<const Vector>& scores, const std::vector<double>& fractions,
                           std::vector<double>& sums) {
  std::vector<double> sorted(scores.data(), scores.data() + scores.size());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  std::vector<double> prefix(sorted.size());
  std::partial_sum(sorted.begin(), sorted.end(), prefix.begin());
  const double total = prefix.back();
  if (!(total > 0.0)) return false;
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    const auto k = kept_count(fractions[i], scores.size());
    sums[i] += prefix[static_cast<std::size_t>(k - 1)] / total;
  }
  return true;
}

RecallCurve finalize(std::vector<double> fractions, std::vector<double> sums, long count) {
  detail::require<EmptyInputError>(count > 0, "recall_curve: record holds no attention mass");
  for (double& s : sums) s /= static_cast<double>(count);
  return RecallCurve{std::move(fractions), std::move(sums)};
}

double median_of(std::vector<double> values) {
  const std::size_t n = values.size();
  const auto mid = values.begin() + static_cast<std::ptrdiff_t>(n / 2);
  std::nth_element(values.begin(), mid, values.end());
  if (n % 2 == 1) return *mid;
  const double upper = *mid;
  const double lower = *std::max_element(values.begin(), mid);
  return 0.5 * (lower + upper);
}

}  // namespace

std::vector<double> default_fractions() {
  return {0.01, 0.02, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
}

RecallCurve recall_curve(const Vector& scores, std::span<const double> fractions) {
  detail::require<EmptyInputError>(scores.size() > 0, "recall_curve: empty score row");
  auto fs = checked_fractions(fractions);
  std::vector<double> sums(fs.size(), 0.0);
  const long count = accumulate_row_recall(scores, fs, sums) ? 1 : 0;
  return finalize(std::move(fs), std::move(sums), count);
}

RecallCurve recall_curve(const Matrix& head, std::span<const double> fractions) {
  detail::require<EmptyInputError>(head.rows() > 0, "recall_curve: empty record");
  auto fs = checked_fractions(fractions);
  std::vector<double> sums(fs.size(), 0.0);
  long count = 0;
  for (Eigen::Index i = 0; i < head.rows(); ++i) {
    const Vector row = head.row(i).head(std::min(i + 1, head.cols())).transpose();
    if (accumulate_row_recall(row, fs, sums)) ++count;
  }
  return finalize(std::move(fs), std::move(sums), count);
}

RecallCurve recall_curve(const AttentionRecord& record, std::span<const double> fractions) {
  detail::require<EmptyInputError>(!record.empty(), "recall_curve: empty record");
  auto fs = checked_fractions(fractions);
  std::vector<double> sums(fs.size(), 0.0);
  long count = 0;
  for (const Matrix& head : record.heads()) {
    bool any = false;
    for (Eigen::Index i = 0; i < head.rows(); ++i) any = any || head.row(i).sum() > 0.0;
    if (!any) continue;
    const RecallCurve c = recall_curve(head, fs);
    for (std::size_t i = 0; i < fs.size(); ++i) sums[i] += c.recall_at_fraction[i];
    ++count;
  }
  return finalize(std::move(fs), std::move(sums), count);
}

long ModalityDensity::image_total() const { return std::accumulate(image_counts.begin(), image_counts.end(), 0L); }
long ModalityDensity::text_total() const { return std::accumulate(text_counts.begin(), text_counts.end(), 0L); }

namespace {

void add_density(const Matrix& head, std::span<const Modality> tags, ModalityDensity& out) {
  detail::require<ShapeError>(head.cols() == static_cast<Eigen::Index>(tags.size()),
                              "modality_density: tag count differs from record length");
  const int bins = static_cast<int>(out.image_counts.size());
  for (Eigen::Index i = 0; i < head.rows(); ++i) {
    for (Eigen::Index j = 0; j <= i && j < head.cols(); ++j) {
      const double a = std::clamp(head(i, j), 0.0, 1.0);
      const int bin = std::min(static_cast<int>(a * bins), bins - 1);
      auto& counts = tags[static_cast<std::size_t>(j)] == Modality::image ? out.image_counts : out.text_counts;
      ++counts[static_cast<std::size_t>(bin)];
    }
  }
}

ModalityDensity empty_density(int bins) {
  detail::require<PreconditionError>(bins >= 1, "modality_density: need at least one bin");
  ModalityDensity d;
  d.bin_edges.resize(static_cast<std::size_t>(bins) + 1);
  for (int b = 0; b <= bins; ++b) d.bin_edges[static_cast<std::size_t>(b)] = static_cast<double>(b) / bins;
  d.image_counts.assign(static_cast<std::size_t>(bins), 0);
  d.text_counts.assign(static_cast<std::size_t>(bins), 0);
  return d;
}

}  // namespace

ModalityDensity modality_density(const Matrix& head, std::span<const Modality> tags, int bins) {
  ModalityDensity d = empty_density(bins);
  add_density(head, tags, d);
  return d;
}

ModalityDensity modality_density(const AttentionRecord& record, std::span<const Modality> tags, int bins) {
  ModalityDensity d = empty_density(bins);
  for (const Matrix& head : record.heads()) add_density(head, tags, d);
  return d;
}

std::vector<int> SinkReport::sinks() const {
  std::vector<int> out;
  for (std::size_t j = 0; j < sink_flag.size(); ++j)
    if (sink_flag[j]) out.push_back(static_cast<int>(j));
  return out;
}

SinkReport detect_sinks(const Matrix& attention, double threshold_multiple, std::span<const Modality> tags) {
  detail::require<EmptyInputError>(attention.rows() > 0 && attention.cols() > 0, "detect_sinks: empty record");
  detail::require<PreconditionError>(threshold_multiple > 1.0, "detect_sinks: threshold_multiple must exceed 1");
  detail::require<ShapeError>(tags.empty() || static_cast<Eigen::Index>(tags.size()) == attention.cols(),
                              "detect_sinks: tag count differs from record length");
  SinkReport report;
  report.threshold_multiple = threshold_multiple;
  const Vector mass = attention.colwise().sum().transpose();
  report.cumulative_mass.assign(mass.data(), mass.data() + mass.size());
  report.median_mass = median_of(report.cumulative_mass);
  const double cutoff = threshold_multiple * report.median_mass;
  report.sink_flag.resize(report.cumulative_mass.size());
  for (std::size_t j = 0; j < report.cumulative_mass.size(); ++j) {
    report.sink_flag[j] = report.cumulative_mass[j] > cutoff ? 1 : 0;
  }
  report.modality.assign(tags.begin(), tags.end());
  return report;
}

SinkReport detect_sinks(const AttentionRecord& record, double threshold_multiple, std::span<const Modality> tags) {
  detail::require<EmptyInputError>(!record.empty(), "detect_sinks: empty record");
  return detect_sinks(record.mean(), threshold_multiple, tags);
}

}  // namespace vasparse
