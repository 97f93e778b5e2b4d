#pragma once

// Dense spectral graph utilities: Laplacians, Chebyshev filtering and the
// renormalized graph convolution shared by both reasoning branches.

#include <cstddef>
#include <optional>
#include <vector>

#include "ssgrn/numcore/ops.hpp"

namespace ssgrn::graph {

/// Contract bound on node count for the dense routines.
inline constexpr std::size_t kMaxNodes = 1024;

/// Chebyshev coefficients theta'_0..theta'_k.
struct SpectralFilter {
  std::vector<double> coeffs;
  std::size_t order() const { return coeffs.empty() ? 0 : coeffs.size() - 1; }
};

/// I - D^{-1/2} A D^{-1/2}. A must be square, symmetric and nonnegative.
/// Zero-degree nodes get D^{-1/2} = 0, so they map to a unit diagonal.
template <typename T>
Tensor<T> normalized_laplacian(const Tensor<T>& adjacency);

/// D^{-1/2} (A + I) D^{-1/2} with D the row sums of A + I.
template <typename T>
Tensor<T> renormalized_propagation(const Tensor<T>& adjacency);

/// T_0 = 1, T_1 = x, T_n = 2x T_{n-1} - T_{n-2}.
double chebyshev_eval(std::size_t n, double x);

/// sum_i theta'_i T_i(L_hat) X with L_hat = (2 / lambda_max) L - I.
/// lambda_max defaults to 2; std::nullopt estimates it by power iteration.
template <typename T>
Tensor<T> chebyshev_filter(const Tensor<T>& laplacian, const SpectralFilter& filter, const Tensor<T>& x,
                           std::optional<double> lambda_max = 2.0);

/// Largest |eigenvalue| of a square matrix by power iteration.
template <typename T>
double spectral_radius(const Tensor<T>& m, std::size_t max_iter = 1000, double tol = 1e-12);

/// relu(Z X W), differentiable in all three operands.
template <typename T>
Tensor<T> graph_conv(const Tensor<T>& z, const Tensor<T>& x, const Tensor<T>& w);

}  // namespace ssgrn::graph
