#pragma once

// Named-parameter registry and the parameterized layers built on numcore.

#include <cstddef>
#include <map>
#include <random>
#include <stdexcept>
#include <string>

#include "ssgrn/numcore/init.hpp"
#include "ssgrn/numcore/ops.hpp"

namespace ssgrn {

template <typename T>
class ParamStore {
 public:
  using Map = std::map<std::string, Tensor<T>>;

  Tensor<T>& add(const std::string& name, Tensor<T> value) {
    auto [it, inserted] = params_.emplace(name, std::move(value));
    if (!inserted) throw std::invalid_argument("duplicate parameter name: " + name);
    it->second.set_requires_grad(true);
    return it->second;
  }

  const Tensor<T>& get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("unknown parameter: " + name);
    return it->second;
  }

  Tensor<T>& get(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("unknown parameter: " + name);
    return it->second;
  }

  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  std::size_t size() const { return params_.size(); }
  const Map& items() const { return params_; }
  Map& items() { return params_; }

  void zero_grad() {
    for (auto& [name, t] : params_) t.zero_grad();
  }

 private:
  Map params_;
};

/// GroupNorm group count: 8 when it divides the channels, else the largest
/// divisor not above 8.
inline std::size_t gn_groups(std::size_t channels) {
  for (std::size_t g = 8; g > 1; --g) {
    if (channels % g == 0) return g;
  }
  return 1;
}

/// Row-wise affine map, x[n x in] -> [n x out]; the node-set form of a 1x1 conv.
template <typename T>
struct Projection {
  Tensor<T> weight;  // in x out
  Tensor<T> bias;    // out

  Tensor<T> operator()(const Tensor<T>& x) const { return ops::linear(x, weight, bias); }

  static void declare(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out,
                      std::mt19937_64& rng) {
    store.add(name + ".weight", fan_in_uniform<T>({in, out}, in, rng));
    store.add(name + ".bias", Tensor<T>::zeros({out}));
  }

  static Projection bind(const ParamStore<T>& store, const std::string& name) {
    return {store.get(name + ".weight"), store.get(name + ".bias")};
  }
};

/// Embedding (phi, psi, rho, eta), integration (xi), reconstruction (zeta)
/// projections plus the graph-convolution weight of one reasoning branch.
template <typename T>
struct ProjectionSet {
  Projection<T> phi, psi, rho, eta, xi, zeta;
  Tensor<T> gcn_weight;  // node width x node width

  /// node_width: descriptor length; embed: attention embedding width.
  static void declare(ParamStore<T>& store, const std::string& prefix, std::size_t node_width, std::size_t embed,
                      std::mt19937_64& rng) {
    for (const char* n : {"phi", "psi", "rho", "eta"}) {
      Projection<T>::declare(store, prefix + "." + n, node_width, embed, rng);
    }
    Projection<T>::declare(store, prefix + ".xi", node_width, node_width, rng);
    store.add(prefix + ".gcn.weight", fan_in_uniform<T>({node_width, node_width}, node_width, rng));
    Projection<T>::declare(store, prefix + ".zeta", node_width, node_width, rng);
  }

  static ProjectionSet bind(const ParamStore<T>& store, const std::string& prefix) {
    ProjectionSet p;
    p.phi = Projection<T>::bind(store, prefix + ".phi");
    p.psi = Projection<T>::bind(store, prefix + ".psi");
    p.rho = Projection<T>::bind(store, prefix + ".rho");
    p.eta = Projection<T>::bind(store, prefix + ".eta");
    p.xi = Projection<T>::bind(store, prefix + ".xi");
    p.zeta = Projection<T>::bind(store, prefix + ".zeta");
    p.gcn_weight = store.get(prefix + ".gcn.weight");
    return p;
  }
};

template <typename T>
void declare_conv(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out, std::size_t k,
                  std::mt19937_64& rng) {
  store.add(name + ".weight", fan_in_uniform<T>({out, in, k, k}, in * k * k, rng));
  store.add(name + ".bias", Tensor<T>::zeros({out}));
}

template <typename T>
Tensor<T> apply_conv(const ParamStore<T>& store, const std::string& name, const Tensor<T>& x,
                     ops::Conv2dParams params = {}) {
  return ops::conv2d(x, store.get(name + ".weight"), store.get(name + ".bias"), params);
}

template <typename T>
void declare_group_norm(ParamStore<T>& store, const std::string& name, std::size_t channels) {
  store.add(name + ".gamma", Tensor<T>::full({channels}, T(1)));
  store.add(name + ".beta", Tensor<T>::zeros({channels}));
}

template <typename T>
Tensor<T> apply_group_norm(const ParamStore<T>& store, const std::string& name, const Tensor<T>& x) {
  return ops::group_norm(x, gn_groups(x.dim(0)), store.get(name + ".gamma"), store.get(name + ".beta"));
}

}  // namespace ssgrn
