#include "ssgrn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>

#include "ssgrn/loss.hpp"
#include "ssgrn/metrics.hpp"

namespace ssgrn::train {

void TrainConfig::validate() const {
  if (!(base_lr >= 0) || !std::isfinite(base_lr)) throw std::invalid_argument("learning rate must be >= 0");
  if (!(momentum >= 0 && momentum < 1)) throw std::invalid_argument("momentum must be in [0, 1)");
  if (!(weight_decay >= 0) || !std::isfinite(weight_decay)) throw std::invalid_argument("weight decay must be >= 0");
  if (!(power > 0) || !std::isfinite(power)) throw std::invalid_argument("poly power must be positive");
}

std::vector<int> make_targets(const data::LabelMap& labels, const data::SplitSpec& split, data::Subset subset,
                              std::size_t padded_h, std::size_t padded_w) {
  if (split.height != labels.height || split.width != labels.width) {
    throw std::invalid_argument("split extents do not match the label map");
  }
  if (padded_h < labels.height || padded_w < labels.width) {
    throw std::invalid_argument("target grid smaller than the label map");
  }
  std::vector<int> t(padded_h * padded_w, -1);
  for (std::size_t r = 0; r < labels.height; ++r) {
    for (std::size_t c = 0; c < labels.width; ++c) {
      const std::size_t i = r * labels.width + c;
      if (labels.labels[i] != 0 && split.assignment[i] == subset) t[r * padded_w + c] = labels.labels[i] - 1;
    }
  }
  return t;
}

template <typename T>
Tensor<T> cross_entropy_masked(const Tensor<T>& logits, const data::LabelMap& labels, const data::SplitSpec& split,
                               data::Subset subset) {
  if (logits.rank() != 3) throw ShapeError("cross_entropy_masked: logits must be C x H x W");
  if (labels.max_label() > logits.dim(0)) {
    throw std::invalid_argument("label " + std::to_string(labels.max_label()) + " exceeds the " +
                                std::to_string(logits.dim(0)) + " logit channels");
  }
  const auto targets = make_targets(labels, split, subset, logits.dim(1), logits.dim(2));
  return masked_cross_entropy(logits, targets);
}

double poly_lr(double base, std::size_t iter, std::size_t max_iter, double power) {
  if (max_iter == 0 || iter > max_iter) {
    throw std::out_of_range("poly_lr: iteration " + std::to_string(iter) + " outside [0, " +
                            std::to_string(max_iter) + "]");
  }
  return base * std::pow(1.0 - static_cast<double>(iter) / static_cast<double>(max_iter), power);
}

bool decays(const std::string& name) {
  constexpr std::string_view suffix = ".weight";
  return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
}

template <typename T>
void SgdOptimizer<T>::step(ParamStore<T>& params, double lr) {
  for (auto& [name, w] : params.items()) {
    if (!w.has_grad()) throw std::invalid_argument("sgd: parameter '" + name + "' has no gradient");
    auto& v = velocity_[name];
    if (v.empty()) v.assign(w.numel(), 0.0);
    const double wd = decays(name) ? weight_decay_ : 0.0;
    const auto g = w.grad();
    auto data = w.data();
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] = momentum_ * v[i] + (static_cast<double>(g[i]) + wd * static_cast<double>(data[i]));
      data[i] = static_cast<T>(static_cast<double>(data[i]) - lr * v[i]);
    }
    for (const T x : data) {
      if (!std::isfinite(x)) throw NonFiniteError("sgd: parameter '" + name + "' became non-finite");
    }
  }
}

void write_history_csv(std::ostream& out, const std::vector<HistoryRow>& history) {
  out << "iter,lr,loss,val_oa\n";
  char buf[128];
  for (const auto& row : history) {
    std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g,", row.iter, row.lr, row.loss);
    out << buf;
    if (row.val_oa) {
      std::snprintf(buf, sizeof(buf), "%.6f", *row.val_oa);
      out << buf;
    }
    out << '\n';
  }
}

std::optional<double> subset_accuracy(const ModelState& model, const data::HsiCube& cube,
                                      const data::LabelMap& labels, const data::SplitSpec& split,
                                      data::Subset subset) {
  const auto pred = predict_labels(model, cube, ForwardOptions{.pool = model.config.eval_pool});
  const data::LabelMap pred_map{labels.height, labels.width, pred};
  const auto cm = metrics::accumulate(pred_map, labels, model.config.classes, &split, subset);
  if (cm.total() == 0) return std::nullopt;
  return metrics::oa(cm);
}

std::vector<HistoryRow> train(ModelState& model, const data::HsiCube& cube, const data::LabelMap& labels,
                              const data::SplitSpec& split, const TrainConfig& config, const ProgressFn& progress) {
  config.validate();
  const auto& mc = model.config;
  if (cube.height != mc.height || cube.width != mc.width || cube.bands != mc.in_bands) {
    throw std::invalid_argument("cube shape does not match the model configuration");
  }
  if (labels.height != cube.height || labels.width != cube.width) {
    throw std::invalid_argument("label map extents do not match the cube");
  }
  if (labels.max_label() > mc.classes) {
    throw std::invalid_argument("label " + std::to_string(labels.max_label()) + " exceeds the model's " +
                                std::to_string(mc.classes) + " classes");
  }
  const auto input = prepare_input<float>(cube);
  const auto targets = make_targets(labels, split, data::Subset::train, mc.padded_height(), mc.padded_width());
  if (std::none_of(targets.begin(), targets.end(), [](int t) { return t >= 0; })) {
    throw std::invalid_argument("training subset is empty");
  }

  SgdOptimizer<float> opt(config.momentum, config.weight_decay);
  std::vector<HistoryRow> history;
  history.reserve(config.max_iter);
  for (std::size_t it = 0; it < config.max_iter; ++it) {
    const double lr = poly_lr(config.base_lr, it, config.max_iter, config.power);
    model.params.zero_grad();
    double loss_value = 0;
    try {
      const auto result = model.forward(input, ForwardOptions{.pool = sagrn::PoolMode::soft});
      auto loss = total_loss(mc.variant, compute_losses(result, targets));
      loss_value = loss.item();
      loss.backward();
      opt.step(model.params, lr);
    } catch (const NonFiniteError& e) {
      throw NonFiniteError("training diverged at iteration " + std::to_string(it + 1) + ": " + e.what());
    }
    ++model.iteration;
    HistoryRow row{it + 1, lr, loss_value, std::nullopt};
    if (config.eval_every > 0 && ((it + 1) % config.eval_every == 0 || it + 1 == config.max_iter)) {
      row.val_oa = subset_accuracy(model, cube, labels, split, data::Subset::val);
    }
    history.push_back(row);
    if (progress) progress(row);
  }
  return history;
}

template Tensor<float> cross_entropy_masked(const Tensor<float>&, const data::LabelMap&, const data::SplitSpec&,
                                            data::Subset);
template Tensor<double> cross_entropy_masked(const Tensor<double>&, const data::LabelMap&, const data::SplitSpec&,
                                             data::Subset);
template class SgdOptimizer<float>;
template class SgdOptimizer<double>;

}  // namespace ssgrn::train
