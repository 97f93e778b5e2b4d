#pragma once

#include <span>

#include "ssgrn/numcore/ops.hpp"

namespace ssgrn {

/// Mean cross entropy of logits[C_n x H x W] over pixels whose target is a
/// class index (0-based); target -1 masks a pixel out.
template <typename T>
Tensor<T> masked_cross_entropy(const Tensor<T>& logits, std::span<const int> targets) {
  if (logits.rank() != 3) throw ShapeError("masked_cross_entropy: logits must be C x H x W");
  const std::size_t c = logits.dim(0), n = logits.dim(1) * logits.dim(2);
  return ops::softmax_cross_entropy(ops::reshape(logits, {c, n}), targets);
}

}  // namespace ssgrn
