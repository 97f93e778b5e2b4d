#pragma once

// Shared helpers for the unit and acceptance suites: seeded random tensors
// and a central-difference gradient checker.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <random>
#include <vector>

#include "ssgrn/numcore/ops.hpp"

namespace ssgrn::testing {

template <typename T = double>
Tensor<T> random_tensor(Shape shape, std::mt19937& rng, double lo = -1.0, double hi = 1.0, bool grad = true) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Buffer<T> v(numel_of(shape));
  for (auto& x : v) x = static_cast<T>(dist(rng));
  return Tensor<T>::from_data(std::move(shape), std::move(v), grad);
}

/// Fixed random weights R so that sum(out * R) has a generic gradient.
inline Tensor<double> weighted_sum(const Tensor<double>& out, std::mt19937& rng) {
  auto r = random_tensor<double>(out.shape(), rng, -1.0, 1.0, false);
  return ops::sum(ops::mul(out, r));
}

struct GradCheck {
  double max_rel_error = 0;  // over inputs, norm-wise
  std::size_t coordinates = 0;
};

/// Compares backward() of `loss` against central differences at up to
/// `max_coords` coordinates per input (all when 0). Relative error per input:
/// |g_a - g_n| / max(|g_a|, |g_n|, floor), norms over the probed coordinates.
inline GradCheck check_gradients(const std::function<Tensor<double>()>& loss, std::vector<Tensor<double>> inputs,
                                 double step = 1e-5, std::size_t max_coords = 0, unsigned seed = 7,
                                 double floor = 1e-8) {
  for (auto& in : inputs) in.zero_grad();
  auto l = loss();
  l.backward();
  std::mt19937 rng(seed);
  GradCheck result;
  for (auto& in : inputs) {
    const std::size_t n = in.numel();
    std::vector<std::size_t> coords(n);
    for (std::size_t i = 0; i < n; ++i) coords[i] = i;
    if (max_coords > 0 && n > max_coords) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(max_coords);
    }
    const std::vector<double> analytic = in.has_grad() ? std::vector<double>(in.grad().begin(), in.grad().end())
                                                        : std::vector<double>(n, 0.0);
    double diff2 = 0, a2 = 0, n2 = 0;
    NoGradGuard no_grad;
    for (auto i : coords) {
      const double saved = in.data()[i];
      in.data()[i] = saved + step;
      const double up = loss().item();
      in.data()[i] = saved - step;
      const double down = loss().item();
      in.data()[i] = saved;
      const double numeric = (up - down) / (2 * step);
      diff2 += (analytic[i] - numeric) * (analytic[i] - numeric);
      a2 += analytic[i] * analytic[i];
      n2 += numeric * numeric;
    }
    const double denom = std::max({std::sqrt(a2), std::sqrt(n2), floor});
    result.max_rel_error = std::max(result.max_rel_error, std::sqrt(diff2) / denom);
    result.coordinates += coords.size();
  }
  return result;
}

}  // namespace ssgrn::testing
