#include "ssgrn/sagrn.hpp"

#include "ssgrn/graphspec.hpp"
#include "ssgrn/loss.hpp"

namespace ssgrn::sagrn {

namespace {
constexpr double kPoolEps = 1e-8;
}

template <typename T>
Tensor<T> pool_descriptors(const Tensor<T>& features, const superpix::SuperpixelAssignment<T>& assignment,
                           PoolMode mode) {
  if (features.rank() != 3) throw ShapeError("pool_descriptors: features must be C x H x W");
  const std::size_t c = features.dim(0), n = features.dim(1) * features.dim(2);
  const auto& soft = assignment.soft;
  if (!soft.defined() || soft.rank() != 2 || soft.dim(0) != n) {
    throw ShapeError("pool_descriptors: assignment does not match the feature extent");
  }
  const std::size_t k = soft.dim(1);
  Tensor<T> weights = soft;
  if (mode == PoolMode::hard) {
    if (assignment.hard.size() != n) throw ShapeError("pool_descriptors: hard map length mismatch");
    Buffer<T> onehot(n * k, T(0));
    for (std::size_t j = 0; j < n; ++j) onehot[j * k + assignment.hard[j]] = T(1);
    weights = Tensor<T>::from_data({n, k}, std::move(onehot));
  }
  const auto pixels = ops::transpose(ops::reshape(features, {c, n}));
  const auto sums = ops::matmul(ops::transpose(weights), pixels);
  return ops::div_rows(sums, ops::add_scalar(ops::sum_cols(weights), static_cast<T>(kPoolEps)));
}

template <typename T>
Tensor<T> attention_adjacency(const Tensor<T>& descriptors, const Projection<T>& phi, const Projection<T>& psi,
                              ops::InnerProductCounter* counter) {
  return ops::softmax(ops::pairwise_dot(phi(descriptors), psi(descriptors), counter), 1);
}

template <typename T>
Tensor<T> reason(const Tensor<T>& adjacency, const Tensor<T>& embedded, const Tensor<T>& weight) {
  return graph::graph_conv(adjacency, embedded, weight);
}

template <typename T>
Reprojection<T> reproject(const Tensor<T>& reasoned, const Tensor<T>& features, const Projection<T>& rho,
                          const Projection<T>& eta, const Projection<T>& zeta, ops::InnerProductCounter* counter) {
  if (features.rank() != 3) throw ShapeError("reproject: features must be C x H x W");
  const std::size_t c = features.dim(0), h = features.dim(1), w = features.dim(2);
  const auto pixels = ops::transpose(ops::reshape(features, {c, h * w}));
  Reprojection<T> out;
  out.affinity = ops::softmax(ops::pairwise_dot(rho(reasoned), eta(pixels), counter), 1);
  const auto values = zeta(reasoned);  // K x C3
  const auto per_pixel = ops::matmul(ops::transpose(out.affinity), values);  // HW x C3
  const std::size_t c3 = values.dim(1);
  out.feature = ops::reshape(ops::transpose(per_pixel), {c3, h, w});
  return out;
}

template <typename T>
SpatialOutput<T> spatial_reasoning(const Tensor<T>& features, const ProjectionSet<T>& proj,
                                   const superpix::SlicConfig& slic, PoolMode mode,
                                   ops::InnerProductCounter* counter) {
  SpatialOutput<T> out;
  out.assignment = superpix::soft_assign_iterate(features, slic);
  auto& g = out.graph;
  g.descriptors = pool_descriptors(features, out.assignment, mode);
  g.adjacency = attention_adjacency(g.descriptors, proj.phi, proj.psi, counter);
  g.embedded = proj.xi(g.descriptors);
  g.reasoned = reason(g.adjacency, g.embedded, proj.gcn_weight);
  out.reprojection = reproject(g.reasoned, features, proj.rho, proj.eta, proj.zeta, counter);
  return out;
}

template <typename T>
void declare_head(ParamStore<T>& store, const std::string& prefix, const HeadDims& dims, std::mt19937_64& rng) {
  declare_conv(store, prefix + ".conv1", dims.in_channels, dims.hidden, 3, rng);
  declare_group_norm(store, prefix + ".gn", dims.hidden);
  declare_conv(store, prefix + ".conv2", dims.hidden, dims.classes, 1, rng);
}

template <typename T>
Tensor<T> head_delta(const ParamStore<T>& store, const std::string& prefix, const Tensor<T>& input,
                     std::size_t out_h, std::size_t out_w) {
  auto x = apply_conv(store, prefix + ".conv1", input, {.stride = 1, .padding = 1, .dilation = 1});
  x = ops::relu(apply_group_norm(store, prefix + ".gn", x));
  x = apply_conv(store, prefix + ".conv2", x);
  return ops::bilinear_upsample(x, out_h, out_w);
}

template <typename T>
Tensor<T> aux_head(const ParamStore<T>& store, const std::string& prefix, const Tensor<T>& backbone_feature,
                   std::size_t out_h, std::size_t out_w) {
  return head_delta(store, prefix, backbone_feature, out_h, out_w);
}

template <typename T>
Tensor<T> sagrn_loss(const Tensor<T>& main_logits, const Tensor<T>& aux_logits, std::span<const int> targets) {
  return ops::add(masked_cross_entropy(main_logits, targets), masked_cross_entropy(aux_logits, targets));
}

#define SSGRN_INSTANTIATE_SAGRN(T)                                                                            \
  template Tensor<T> pool_descriptors(const Tensor<T>&, const superpix::SuperpixelAssignment<T>&, PoolMode);  \
  template Tensor<T> attention_adjacency(const Tensor<T>&, const Projection<T>&, const Projection<T>&,        \
                                         ops::InnerProductCounter*);                                          \
  template Tensor<T> reason(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                            \
  template Reprojection<T> reproject(const Tensor<T>&, const Tensor<T>&, const Projection<T>&,                \
                                     const Projection<T>&, const Projection<T>&, ops::InnerProductCounter*);  \
  template SpatialOutput<T> spatial_reasoning(const Tensor<T>&, const ProjectionSet<T>&,                      \
                                              const superpix::SlicConfig&, PoolMode, ops::InnerProductCounter*); \
  template void declare_head(ParamStore<T>&, const std::string&, const HeadDims&, std::mt19937_64&);          \
  template Tensor<T> head_delta(const ParamStore<T>&, const std::string&, const Tensor<T>&, std::size_t,      \
                                std::size_t);                                                                 \
  template Tensor<T> aux_head(const ParamStore<T>&, const std::string&, const Tensor<T>&, std::size_t,        \
                              std::size_t);                                                                   \
  template Tensor<T> sagrn_loss(const Tensor<T>&, const Tensor<T>&, std::span<const int>);

SSGRN_INSTANTIATE_SAGRN(float)
SSGRN_INSTANTIATE_SAGRN(double)

#undef SSGRN_INSTANTIATE_SAGRN

}  // namespace ssgrn::sagrn
