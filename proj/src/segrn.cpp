#include "ssgrn/segrn.hpp"

#include <stdexcept>

#include "ssgrn/graphspec.hpp"
#include "ssgrn/loss.hpp"

namespace ssgrn::segrn {

SpectralGrouping group_bands(std::size_t channels, std::size_t groups) {
  if (groups == 0) throw std::invalid_argument("group_bands: group count must be positive");
  if (groups > channels) {
    throw std::invalid_argument("group_bands: " + std::to_string(groups) + " groups exceed " +
                                std::to_string(channels) + " bands");
  }
  SpectralGrouping g;
  g.channels = channels;
  const std::size_t size = channels / groups;
  for (std::size_t i = 0; i < groups; ++i) {
    const std::size_t lo = i * size;
    const std::size_t hi = (i + 1 == groups) ? channels : lo + size;
    g.ranges.emplace_back(lo, hi);
  }
  return g;
}

template <typename T>
Tensor<T> spectral_downsample(const Tensor<T>& features, std::size_t stride) {
  if (features.rank() != 3) throw ShapeError("spectral_downsample: features must be C x H x W");
  if (stride == 0) throw std::invalid_argument("spectral_downsample: stride must be at least 1");
  if (stride == 1) return features;
  const std::size_t h = features.dim(1), w = features.dim(2);
  const std::size_t pad_h = (stride - h % stride) % stride, pad_w = (stride - w % stride) % stride;
  const auto padded = (pad_h || pad_w) ? ops::pad2d(features, pad_h, pad_w, ops::PadMode::replicate) : features;
  return ops::avg_pool2d(padded, stride, stride);
}

template <typename T>
Tensor<T> spectral_descriptors(const Tensor<T>& downsampled, const SpectralGrouping& grouping) {
  if (downsampled.rank() != 3) throw ShapeError("spectral_descriptors: input must be C x H x W");
  const std::size_t c = downsampled.dim(0), l = downsampled.dim(1) * downsampled.dim(2);
  if (grouping.channels != c) throw ShapeError("spectral_descriptors: grouping built for a different band count");
  const std::size_t m = grouping.groups();
  Buffer<T> avg(m * c, T(0));
  for (std::size_t i = 0; i < m; ++i) {
    const auto [lo, hi] = grouping.ranges[i];
    for (std::size_t b = lo; b < hi; ++b) avg[i * c + b] = T(1) / static_cast<T>(hi - lo);
  }
  return ops::matmul(Tensor<T>::from_data({m, c}, std::move(avg)), ops::reshape(downsampled, {c, l}));
}

template <typename T>
SpectralOutput<T> spectral_reason_and_reconstruct(const Tensor<T>& descriptors, const Tensor<T>& downsampled,
                                                  const ProjectionSet<T>& proj, std::size_t out_h,
                                                  std::size_t out_w) {
  if (downsampled.rank() != 3) throw ShapeError("spectral reconstruction: input must be C x H' x W'");
  const std::size_t c = downsampled.dim(0), hp = downsampled.dim(1), wp = downsampled.dim(2);
  const std::size_t l = hp * wp;
  if (descriptors.rank() != 2 || descriptors.dim(1) != l) {
    throw ShapeError("spectral reconstruction: descriptor length must equal H' W'");
  }
  if (proj.zeta.weight.dim(1) != l) throw ShapeError("spectral reconstruction: zeta must output H' W' values");

  SpectralOutput<T> out;
  out.descriptors = descriptors;
  out.adjacency = ops::softmax(ops::pairwise_dot(proj.phi(descriptors), proj.psi(descriptors)), 1);
  out.reasoned = graph::graph_conv(out.adjacency, proj.xi(descriptors), proj.gcn_weight);
  const auto bands = ops::reshape(downsampled, {c, l});
  out.affinity = ops::softmax(ops::pairwise_dot(proj.rho(out.reasoned), proj.eta(bands)), 1);
  const auto rebuilt = ops::matmul(ops::transpose(out.affinity), proj.zeta(out.reasoned));  // C x L
  out.feature = ops::bilinear_upsample(ops::reshape(rebuilt, {c, hp, wp}), out_h, out_w);
  return out;
}

template <typename T>
SpectralOutput<T> spectral_reasoning(const Tensor<T>& features, const ProjectionSet<T>& proj, std::size_t groups,
                                     std::size_t stride) {
  const auto down = spectral_downsample(features, stride);
  const auto grouping = group_bands(down.dim(0), groups);
  return spectral_reason_and_reconstruct(spectral_descriptors(down, grouping), down, proj, features.dim(1),
                                         features.dim(2));
}

template <typename T>
Tensor<T> segrn_loss(const Tensor<T>& logits, std::span<const int> targets) {
  return masked_cross_entropy(logits, targets);
}

#define SSGRN_INSTANTIATE_SEGRN(T)                                                                      \
  template Tensor<T> spectral_downsample(const Tensor<T>&, std::size_t);                                \
  template Tensor<T> spectral_descriptors(const Tensor<T>&, const SpectralGrouping&);                   \
  template SpectralOutput<T> spectral_reason_and_reconstruct(const Tensor<T>&, const Tensor<T>&,         \
                                                             const ProjectionSet<T>&, std::size_t,      \
                                                             std::size_t);                              \
  template SpectralOutput<T> spectral_reasoning(const Tensor<T>&, const ProjectionSet<T>&, std::size_t,  \
                                                std::size_t);                                           \
  template Tensor<T> segrn_loss(const Tensor<T>&, std::span<const int>);

SSGRN_INSTANTIATE_SEGRN(float)
SSGRN_INSTANTIATE_SEGRN(double)

#undef SSGRN_INSTANTIATE_SEGRN

}  // namespace ssgrn::segrn
