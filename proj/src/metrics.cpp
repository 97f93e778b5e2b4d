#include "ssgrn/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>

#include "ssgrn/log.hpp"

namespace ssgrn::metrics {

std::uint64_t ConfusionMatrix::row_sum(std::size_t truth) const {
  std::uint64_t s = 0;
  for (std::size_t p = 0; p < classes_; ++p) s += at(truth, p);
  return s;
}

std::uint64_t ConfusionMatrix::col_sum(std::size_t pred) const {
  std::uint64_t s = 0;
  for (std::size_t t = 0; t < classes_; ++t) s += at(t, pred);
  return s;
}

std::uint64_t ConfusionMatrix::trace() const {
  std::uint64_t s = 0;
  for (std::size_t c = 0; c < classes_; ++c) s += at(c, c);
  return s;
}

void ConfusionMatrix::add(std::size_t truth, std::size_t pred, std::uint64_t n) {
  if (truth >= classes_ || pred >= classes_) {
    throw std::out_of_range("confusion matrix index (" + std::to_string(truth) + ", " + std::to_string(pred) +
                            ") outside " + std::to_string(classes_) + " classes");
  }
  counts_[truth * classes_ + pred] += n;
  total_ += n;
}

ConfusionMatrix accumulate(const data::LabelMap& pred, const data::LabelMap& truth, std::size_t classes,
                           const data::SplitSpec* split, data::Subset subset) {
  if (pred.height != truth.height || pred.width != truth.width) {
    throw std::invalid_argument("prediction is " + std::to_string(pred.height) + "x" + std::to_string(pred.width) +
                                " but ground truth is " + std::to_string(truth.height) + "x" +
                                std::to_string(truth.width));
  }
  if (split && (split->height != truth.height || split->width != truth.width)) {
    throw std::invalid_argument("split extents do not match the ground truth");
  }
  ConfusionMatrix cm(classes);
  for (std::size_t i = 0; i < truth.labels.size(); ++i) {
    const auto t = truth.labels[i];
    if (t == 0) continue;
    if (split && split->assignment[i] != subset) continue;
    const auto p = pred.labels[i];
    if (p == 0 || p > classes) {
      throw std::invalid_argument("prediction label " + std::to_string(p) + " at pixel " + std::to_string(i) +
                                  " outside 1.." + std::to_string(classes));
    }
    if (t > classes) {
      throw std::invalid_argument("ground-truth label " + std::to_string(t) + " exceeds " +
                                  std::to_string(classes) + " classes");
    }
    cm.add(t - 1u, p - 1u);
  }
  return cm;
}

double oa(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw std::invalid_argument("OA of an empty confusion matrix");
  return static_cast<double>(cm.trace()) / static_cast<double>(cm.total());
}

double aa(const ConfusionMatrix& cm) {
  double sum = 0;
  std::size_t used = 0;
  for (std::size_t c = 0; c < cm.classes(); ++c) {
    const auto support = cm.row_sum(c);
    if (support == 0) {
      log_warning("class " + std::to_string(c + 1) + " has no evaluated pixels; excluded from AA");
      continue;
    }
    sum += static_cast<double>(cm.at(c, c)) / static_cast<double>(support);
    ++used;
  }
  if (used == 0) throw std::invalid_argument("AA of an empty confusion matrix");
  return sum / static_cast<double>(used);
}

double kappa(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw std::invalid_argument("kappa of an empty confusion matrix");
  const double n = static_cast<double>(cm.total());
  double pe = 0;
  for (std::size_t c = 0; c < cm.classes(); ++c) {
    pe += static_cast<double>(cm.row_sum(c)) * static_cast<double>(cm.col_sum(c));
  }
  pe /= n * n;
  if (pe >= 1.0) throw std::invalid_argument("kappa undefined: chance agreement is 1");
  return (oa(cm) - pe) / (1.0 - pe);
}

RunMetrics evaluate(const ConfusionMatrix& cm) { return {oa(cm), aa(cm), kappa(cm)}; }

MeanStd mean_std(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("mean_std of an empty list");
  double mean = 0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double var = 0;
  for (double v : values) var += (v - mean) * (v - mean);
  var /= static_cast<double>(values.size());
  return {mean, std::sqrt(var)};
}

RunSummary aggregate_runs(std::span<const RunMetrics> runs) {
  if (runs.empty()) throw std::invalid_argument("aggregate_runs needs at least one run");
  std::vector<double> o, a, k;
  for (const auto& r : runs) {
    o.push_back(r.oa);
    a.push_back(r.aa);
    k.push_back(r.kappa);
  }
  return {mean_std(o), mean_std(a), mean_std(k), runs.size()};
}

std::string format_mean_std(const MeanStd& ms, double scale) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f±%.2f", ms.mean * scale, ms.std * scale);
  return buf;
}

void write_report(std::ostream& out, const RunSummary& summary) {
  const auto line = [&](const char* name, const MeanStd& ms) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%s %.6f %.6f\n", name, ms.mean, ms.std);
    out << buf;
  };
  line("OA", summary.oa);
  line("AA", summary.aa);
  line("Kappa", summary.kappa);
}

void write_confusion_csv(std::ostream& out, const ConfusionMatrix& cm) {
  out << "truth\\pred";
  for (std::size_t c = 0; c < cm.classes(); ++c) out << ',' << c + 1;
  out << '\n';
  for (std::size_t t = 0; t < cm.classes(); ++t) {
    out << t + 1;
    for (std::size_t p = 0; p < cm.classes(); ++p) out << ',' << cm.at(t, p);
    out << '\n';
  }
}

}  // namespace ssgrn::metrics
