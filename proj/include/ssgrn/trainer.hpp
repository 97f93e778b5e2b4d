#pragma once

// Whole-image training loop: masked cross entropy on the train subset, SGD
// with momentum and weight decay, poly learning-rate decay.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ssgrn/data.hpp"
#include "ssgrn/network.hpp"

namespace ssgrn::train {

struct TrainConfig {
  double base_lr = 1e-3;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::size_t max_iter = 1000;
  double power = 0.9;
  std::uint64_t seed = 0;
  std::size_t eval_every = 100;  // 0 disables validation monitoring

  void validate() const;
};

/// 0-based class per pixel of the padded_h x padded_w grid; -1 outside
/// `subset`, on unlabeled pixels and in the padding.
std::vector<int> make_targets(const data::LabelMap& labels, const data::SplitSpec& split, data::Subset subset,
                              std::size_t padded_h, std::size_t padded_w);

/// Mean CE over labeled pixels of `subset`; label c maps to logit channel c - 1.
template <typename T>
Tensor<T> cross_entropy_masked(const Tensor<T>& logits, const data::LabelMap& labels, const data::SplitSpec& split,
                               data::Subset subset);

double poly_lr(double base, std::size_t iter, std::size_t max_iter, double power);

/// v <- m v + (g + wd w); w <- w - lr v. Decay applies to parameters whose
/// name ends in ".weight".
template <typename T>
class SgdOptimizer {
 public:
  SgdOptimizer(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}

  void step(ParamStore<T>& params, double lr);

  const std::map<std::string, std::vector<double>>& velocity() const { return velocity_; }

 private:
  double momentum_;
  double weight_decay_;
  std::map<std::string, std::vector<double>> velocity_;
};

bool decays(const std::string& param_name);

struct HistoryRow {
  std::size_t iter = 0;  // 1-based step just completed
  double lr = 0;
  double loss = 0;
  std::optional<double> val_oa;
};

void write_history_csv(std::ostream& out, const std::vector<HistoryRow>& history);

using ProgressFn = std::function<void(const HistoryRow&)>;

/// Runs config.max_iter steps on `model` in place. A non-finite loss or
/// gradient aborts with NonFiniteError naming the iteration.
std::vector<HistoryRow> train(ModelState& model, const data::HsiCube& cube, const data::LabelMap& labels,
                              const data::SplitSpec& split, const TrainConfig& config,
                              const ProgressFn& progress = {});

/// Argmax labels on the unpadded grid followed by OA over `subset`; nullopt
/// when the subset holds no labeled pixels.
std::optional<double> subset_accuracy(const ModelState& model, const data::HsiCube& cube,
                                      const data::LabelMap& labels, const data::SplitSpec& split,
                                      data::Subset subset);

}  // namespace ssgrn::train
