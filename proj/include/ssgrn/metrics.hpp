#pragma once

// Confusion-matrix accuracy measures and multi-run aggregation.
// Rows are ground truth, columns are predictions; class c (1-based label)
// occupies index c - 1.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "ssgrn/data.hpp"

namespace ssgrn::metrics {

class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::size_t classes) : classes_(classes), counts_(classes * classes, 0) {}

  std::size_t classes() const { return classes_; }
  std::uint64_t total() const { return total_; }
  std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts_[truth * classes_ + pred]; }
  std::uint64_t row_sum(std::size_t truth) const;
  std::uint64_t col_sum(std::size_t pred) const;
  std::uint64_t trace() const;

  /// 0-based indices.
  void add(std::size_t truth, std::size_t pred, std::uint64_t n = 1);

 private:
  std::size_t classes_ = 0;
  std::vector<std::uint64_t> counts_;
  std::uint64_t total_ = 0;
};

/// Counts labeled truth pixels, restricted to `subset` of `split` when a
/// split is given. Predictions must be in 1..classes wherever counted.
ConfusionMatrix accumulate(const data::LabelMap& pred, const data::LabelMap& truth, std::size_t classes,
                           const data::SplitSpec* split = nullptr, data::Subset subset = data::Subset::test);

double oa(const ConfusionMatrix& cm);
/// Mean recall over classes with nonzero support; skipped classes are logged.
double aa(const ConfusionMatrix& cm);
double kappa(const ConfusionMatrix& cm);

struct RunMetrics {
  double oa = 0;
  double aa = 0;
  double kappa = 0;
};

RunMetrics evaluate(const ConfusionMatrix& cm);

struct MeanStd {
  double mean = 0;
  double std = 0;  // population
};

struct RunSummary {
  MeanStd oa, aa, kappa;
  std::size_t runs = 0;
};

MeanStd mean_std(std::span<const double> values);
RunSummary aggregate_runs(std::span<const RunMetrics> runs);

/// "mean±std" to two decimals.
std::string format_mean_std(const MeanStd& ms, double scale = 1.0);

/// "OA <mean> <std>" / "AA ..." / "Kappa ..." lines.
void write_report(std::ostream& out, const RunSummary& summary);
/// Header row "truth\\pred,1,2,...", then one row per truth class.
void write_confusion_csv(std::ostream& out, const ConfusionMatrix& cm);

}  // namespace ssgrn::metrics
