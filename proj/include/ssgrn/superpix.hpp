#pragma once

// Differentiable SLIC: soft pixel-to-cluster assignment with centroids
// recomputed as assignment-weighted means, so gradients reach the feature map
// through both the assignment and the centroids.

#include <cstddef>
#include <utility>
#include <vector>

#include "ssgrn/numcore/ops.hpp"

namespace ssgrn::superpix {

struct SlicConfig {
  std::size_t num_superpixels = 256;
  std::size_t iters = 5;
  double compactness = 0.5;  // weight of squared position distance, positions in [0, 1]
  double temperature = 0.1;

  void validate() const;
};

/// Soft mass below this freezes a cluster at its previous centroid.
inline constexpr double kEmptyClusterMass = 1e-8;

template <typename T>
struct SuperpixelAssignment {
  Tensor<T> soft;                  // N x K, rows sum to 1
  std::vector<std::size_t> hard;   // length N, argmax of each row
  Tensor<T> centroids;             // K x (C + 2): feature means then (row, col) in [0, 1]
};

/// Seed coordinates (row, col) in pixel units on a near-uniform grid:
/// seeds are spread over round(sqrt(K H / W)) rows as evenly as possible.
std::vector<std::pair<double, double>> grid_seed_positions(std::size_t h, std::size_t w, std::size_t k);

/// K x (C + 2) initial centroids: features read at the nearest pixel to each
/// seed (differentiable w.r.t. F), then the seed position scaled to [0, 1].
template <typename T>
Tensor<T> init_centroids_grid(const Tensor<T>& features, std::size_t k);

/// One assignment step against fixed centroids:
/// Q_jk = softmax_k(-(|f_j - c_k|^2 + compactness |p_j - p_k|^2) / temperature).
template <typename T>
Tensor<T> assign_to_centroids(const Tensor<T>& features, const Tensor<T>& centroids, const SlicConfig& config);

template <typename T>
SuperpixelAssignment<T> soft_assign_iterate(const Tensor<T>& features, const SlicConfig& config);

/// Row-wise argmax, first index wins ties.
template <typename T>
std::vector<std::size_t> hard_map(const Tensor<T>& soft);

/// Normalized (row, col) coordinates of every pixel, N x 2.
template <typename T>
Tensor<T> pixel_positions(std::size_t h, std::size_t w);

}  // namespace ssgrn::superpix
