#pragma once

// Spatial graph reasoning: superpixel descriptors, attention adjacency over
// descriptors, graph convolution, and reprojection back onto pixels.

#include <cstddef>
#include <random>
#include <span>
#include <string>

#include "ssgrn/layers.hpp"
#include "ssgrn/superpix.hpp"

namespace ssgrn::sagrn {

enum class PoolMode { soft, hard };

template <typename T>
struct DescriptorGraph {
  Tensor<T> descriptors;  // D, K x C
  Tensor<T> embedded;     // X = xi(D), K x C
  Tensor<T> adjacency;    // Z, K x K, row-stochastic
  Tensor<T> reasoned;     // G, K x C
};

template <typename T>
struct Reprojection {
  Tensor<T> affinity;  // A, K x HW, each row a distribution over pixels
  Tensor<T> feature;   // F_sa_main, C x H x W
};

/// Region means of F. Hard mode uses the argmax map, soft mode weights each
/// pixel by its assignment probability. Denominators carry +1e-8.
template <typename T>
Tensor<T> pool_descriptors(const Tensor<T>& features, const superpix::SuperpixelAssignment<T>& assignment,
                           PoolMode mode);

/// Z_ij = softmax_j(phi(d_i) . psi(d_j)).
template <typename T>
Tensor<T> attention_adjacency(const Tensor<T>& descriptors, const Projection<T>& phi, const Projection<T>& psi,
                              ops::InnerProductCounter* counter = nullptr);

/// G = relu(Z X W).
template <typename T>
Tensor<T> reason(const Tensor<T>& adjacency, const Tensor<T>& embedded, const Tensor<T>& weight);

/// A_ij = softmax over pixels of rho(g_i) . eta(f_j); F_sa_main = A^T zeta(G)
/// reshaped to C x H x W.
template <typename T>
Reprojection<T> reproject(const Tensor<T>& reasoned, const Tensor<T>& features, const Projection<T>& rho,
                          const Projection<T>& eta, const Projection<T>& zeta,
                          ops::InnerProductCounter* counter = nullptr);

template <typename T>
struct SpatialOutput {
  superpix::SuperpixelAssignment<T> assignment;
  DescriptorGraph<T> graph;
  Reprojection<T> reprojection;
};

/// Whole branch on a backbone feature map F[C x H x W].
template <typename T>
SpatialOutput<T> spatial_reasoning(const Tensor<T>& features, const ProjectionSet<T>& proj,
                                   const superpix::SlicConfig& slic, PoolMode mode,
                                   ops::InnerProductCounter* counter = nullptr);

// ---- classification heads -------------------------------------------------

struct HeadDims {
  std::size_t in_channels = 0;
  std::size_t hidden = 128;
  std::size_t classes = 0;
};

/// 3x3 conv -> GroupNorm -> ReLU -> 1x1 conv -> bilinear upsample.
template <typename T>
void declare_head(ParamStore<T>& store, const std::string& prefix, const HeadDims& dims, std::mt19937_64& rng);

/// Logits C_n x out_h x out_w.
template <typename T>
Tensor<T> head_delta(const ParamStore<T>& store, const std::string& prefix, const Tensor<T>& input,
                     std::size_t out_h, std::size_t out_w);

/// Auxiliary head on the backbone feature: same architecture as the main
/// head, its own parameters under `prefix`.
template <typename T>
Tensor<T> aux_head(const ParamStore<T>& store, const std::string& prefix, const Tensor<T>& backbone_feature,
                   std::size_t out_h, std::size_t out_w);

/// CE(main) + CE(aux), each a mean over pixels with target >= 0.
template <typename T>
Tensor<T> sagrn_loss(const Tensor<T>& main_logits, const Tensor<T>& aux_logits, std::span<const int> targets);

}  // namespace ssgrn::sagrn
