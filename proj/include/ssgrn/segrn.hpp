#pragma once

// Spectral graph reasoning: contiguous band groups of a downsampled feature
// map become graph nodes; reasoned nodes are recombined into channel maps.

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ssgrn/layers.hpp"

namespace ssgrn::segrn {

/// Contiguous, 0-based, half-open band ranges. When M does not divide C the
/// last group absorbs the remainder.
struct SpectralGrouping {
  std::size_t channels = 0;
  std::vector<std::pair<std::size_t, std::size_t>> ranges;

  std::size_t groups() const { return ranges.size(); }
};

SpectralGrouping group_bands(std::size_t channels, std::size_t groups);

/// Average pool with kernel = stride. Extents that are not a multiple of the
/// stride are first extended by replicating the last row/column, so the
/// output is ceil(H / stride) x ceil(W / stride).
template <typename T>
Tensor<T> spectral_downsample(const Tensor<T>& features, std::size_t stride);

/// M x (H' W'): mean of each group's band maps, flattened over space.
template <typename T>
Tensor<T> spectral_descriptors(const Tensor<T>& downsampled, const SpectralGrouping& grouping);

template <typename T>
struct SpectralOutput {
  Tensor<T> descriptors;   // M x L
  Tensor<T> adjacency;     // M x M, row-stochastic
  Tensor<T> reasoned;      // M x L
  Tensor<T> affinity;      // M x C, each row a distribution over channels
  Tensor<T> feature;       // F_se, C x H x W
};

/// Attention adjacency over spectral descriptors, graph convolution, then
/// reconstruction: A = softmax_c(rho(g_m) . eta(b_c)), F' = A^T zeta(G) as
/// C x H' x W', bilinearly resized to out_h x out_w.
template <typename T>
SpectralOutput<T> spectral_reason_and_reconstruct(const Tensor<T>& descriptors, const Tensor<T>& downsampled,
                                                  const ProjectionSet<T>& proj, std::size_t out_h,
                                                  std::size_t out_w);

/// Full branch on a backbone feature map.
template <typename T>
SpectralOutput<T> spectral_reasoning(const Tensor<T>& features, const ProjectionSet<T>& proj, std::size_t groups,
                                     std::size_t stride);

/// Descriptor length H' W' after downsampling an h x w map by `stride`.
inline std::size_t descriptor_length(std::size_t h, std::size_t w, std::size_t stride) {
  return ((h + stride - 1) / stride) * ((w + stride - 1) / stride);
}

/// CE of the branch head's logits over pixels with target >= 0.
template <typename T>
Tensor<T> segrn_loss(const Tensor<T>& logits, std::span<const int> targets);

}  // namespace ssgrn::segrn
