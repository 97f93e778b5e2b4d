#pragma once

// Dense row-major tensor with a reverse-mode autodiff tape.
//
// A Tensor is a cheap handle onto shared storage. Ops record a TapeNode on
// their output when any input requires a gradient; backward() walks the
// recorded DAG once in reverse topological order.

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <new>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ssgrn/error.hpp"

namespace ssgrn {

using Shape = std::vector<std::size_t>;

enum class DType { f32, f64 };

template <typename T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

inline std::size_t numel_of(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

/// Process-wide switch consulted by every op; ops record no tape while it is
/// off. Use NoGradGuard rather than flipping it by hand.
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

inline bool grad_enabled() { return grad_mode_flag(); }

class NoGradGuard {
 public:
  NoGradGuard() : previous_(grad_mode_flag()) { grad_mode_flag() = false; }
  ~NoGradGuard() { grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// 64-byte aligned storage. Vectorized kernels peel a data-dependent number
/// of leading elements on unaligned input, which changes summation order
/// between allocations; fixed alignment keeps results bit-reproducible.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t alignment{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

template <typename T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

template <typename T>
struct TensorImpl;

/// One recorded op. `backward` receives the gradient flowing into the op's
/// output and accumulates into the inputs it captured.
template <typename T>
struct TapeNode {
  const char* op = "";
  std::vector<std::shared_ptr<TensorImpl<T>>> inputs;
  std::function<void(std::span<const T>)> backward;
};

template <typename T>
struct TensorImpl {
  Shape shape;
  Buffer<T> data;
  Buffer<T> grad;  // empty until something accumulates into it
  bool requires_grad = false;
  std::unique_ptr<TapeNode<T>> node;  // null for leaves

  Buffer<T>& grad_buffer() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    return grad;
  }
};

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(std::shared_ptr<TensorImpl<T>> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return from_data(shape, Buffer<T>(numel_of(shape), T(0)), requires_grad);
  }

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    return from_data(shape, Buffer<T>(numel_of(shape), value), requires_grad);
  }

  template <typename Alloc>
    requires(!std::is_same_v<Alloc, AlignedAllocator<T>>)
  static Tensor from_data(Shape shape, const std::vector<T, Alloc>& data, bool requires_grad = false) {
    return from_data(std::move(shape), Buffer<T>(data.begin(), data.end()), requires_grad);
  }

  static Tensor from_data(Shape shape, Buffer<T> data, bool requires_grad = false) {
    if (shape.empty()) throw ShapeError("tensor shape must have at least one extent");
    for (auto e : shape) {
      if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
    }
    if (numel_of(shape) != data.size()) {
      throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                       shape_str(shape));
    }
    auto impl = std::make_shared<TensorImpl<T>>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return from_data({1}, {value}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const { return impl_->shape; }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t numel() const { return impl_->data.size(); }
  static constexpr DType dtype() { return dtype_of<T>(); }

  std::span<T> data() { return impl_->data; }
  std::span<const T> data() const { return impl_->data; }
  const Buffer<T>& values() const { return impl_->data; }

  T item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return impl_->data[0];
  }

  T& at(std::size_t i) { return impl_->data.at(i); }
  T at(std::size_t i) const { return impl_->data.at(i); }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on) { impl_->requires_grad = on; }
  bool is_leaf() const { return !impl_->node; }

  bool has_grad() const { return impl_->grad.size() == impl_->data.size(); }
  std::span<const T> grad() const { return impl_->grad; }
  std::span<T> grad_mut() { return impl_->grad_buffer(); }
  void zero_grad() { impl_->grad.clear(); }

  /// New leaf holding a copy of the values, detached from any tape.
  Tensor detach() const { return from_data(shape(), impl_->data, false); }

  Tensor clone() const { return from_data(shape(), impl_->data, requires_grad()); }

  const std::shared_ptr<TensorImpl<T>>& impl() const { return impl_; }

  /// Populates d(this)/d(leaf) in every reachable requires_grad leaf.
  /// Gradients accumulate (sum over paths and over repeated calls on
  /// different roots). The recorded graph is released afterwards.
  void backward() {
    if (numel() != 1) {
      throw ShapeError("backward() requires a scalar root, got " + shape_str(shape()));
    }
    if (!requires_grad()) return;

    // Iterative post-order DFS gives a topological order (inputs first).
    // Owning references: releasing a node's tape may drop the last other
    // reference to its inputs.
    std::vector<std::shared_ptr<TensorImpl<T>>> order;
    std::unordered_set<TensorImpl<T>*> seen;
    std::vector<std::pair<std::shared_ptr<TensorImpl<T>>, std::size_t>> stack;
    stack.emplace_back(impl_, 0);
    seen.insert(impl_.get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (node->node && next < node->node->inputs.size()) {
        auto child = node->node->inputs[next++];
        if (child->requires_grad && seen.insert(child.get()).second) stack.emplace_back(std::move(child), 0);
        continue;
      }
      order.push_back(std::move(node));
      stack.pop_back();
    }

    impl_->grad_buffer()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      TensorImpl<T>* node = it->get();
      if (!node->node) continue;
      if (node->grad.size() == node->data.size()) node->node->backward(node->grad);
      node->node.reset();
      node->grad.clear();
      node->grad.shrink_to_fit();
    }
  }

 private:
  std::shared_ptr<TensorImpl<T>> impl_;
};

template <typename T>
void check_finite(std::span<const T> values, const char* op) {
  for (T v : values) {
    if (!std::isfinite(v)) throw NonFiniteError(std::string("non-finite value produced by ") + op);
  }
}

/// Wraps a freshly computed buffer as an op output. A tape node is attached
/// only when grad mode is on and some input requires a gradient.
template <typename T>
Tensor<T> make_result(const char* op, Shape shape, Buffer<T> data,
                      std::initializer_list<Tensor<T>> inputs,
                      std::function<void(std::span<const T>)> backward) {
  check_finite<T>(data, op);
  auto out = Tensor<T>::from_data(std::move(shape), std::move(data));
  if (!grad_enabled()) return out;
  bool track = false;
  for (const auto& in : inputs) track = track || in.requires_grad();
  if (!track) return out;
  auto node = std::make_unique<TapeNode<T>>();
  node->op = op;
  for (const auto& in : inputs) node->inputs.push_back(in.impl());
  node->backward = std::move(backward);
  out.impl()->node = std::move(node);
  out.set_requires_grad(true);
  return out;
}

}  // namespace ssgrn
