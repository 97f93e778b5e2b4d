#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "ssgrn/numcore/tensor.hpp"

namespace ssgrn {

/// Uniform(-sqrt(6 / fan_in), +sqrt(6 / fan_in)); draws are taken in double
/// so float and double models built from the same seed hold the same values
/// up to rounding.
template <typename T>
Tensor<T> fan_in_uniform(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Buffer<T> values(numel_of(shape));
  for (auto& v : values) v = static_cast<T>(dist(rng));
  return Tensor<T>::from_data(std::move(shape), std::move(values), true);
}

}  // namespace ssgrn
