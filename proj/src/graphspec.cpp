#include "ssgrn/graphspec.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace ssgrn::graph {
namespace {

template <typename T>
std::size_t check_square(const Tensor<T>& m, const char* op) {
  if (!m.defined() || m.rank() != 2 || m.dim(0) != m.dim(1)) {
    throw ShapeError(std::string(op) + ": expected a square matrix");
  }
  if (m.dim(0) > kMaxNodes) throw ShapeError(std::string(op) + ": node count exceeds dense limit");
  return m.dim(0);
}

template <typename T>
void check_nonnegative(const Tensor<T>& a, const char* op) {
  for (T v : a.data()) {
    if (v < T(0)) throw std::invalid_argument(std::string(op) + ": adjacency has a negative entry");
  }
}

template <typename T>
void check_symmetric(const Tensor<T>& a, std::size_t k, const char* op) {
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i + 1; j < k; ++j) {
      const T x = a.data()[i * k + j], y = a.data()[j * k + i];
      const T tol = T(1e-12) * std::max<T>({T(1), std::abs(x), std::abs(y)});
      if (std::abs(x - y) > tol) throw std::invalid_argument(std::string(op) + ": adjacency is not symmetric");
    }
  }
}

template <typename T>
Buffer<T> inv_sqrt_degree(const Buffer<T>& a, std::size_t k) {
  Buffer<T> d(k, T(0));
  for (std::size_t i = 0; i < k; ++i) {
    T deg = 0;
    for (std::size_t j = 0; j < k; ++j) deg += a[i * k + j];
    d[i] = deg > T(0) ? T(1) / std::sqrt(deg) : T(0);
  }
  return d;
}

}  // namespace

template <typename T>
Tensor<T> normalized_laplacian(const Tensor<T>& adjacency) {
  const std::size_t k = check_square(adjacency, "normalized_laplacian");
  check_nonnegative(adjacency, "normalized_laplacian");
  check_symmetric(adjacency, k, "normalized_laplacian");
  const auto& a = adjacency.values();
  const auto d = inv_sqrt_degree(a, k);
  Buffer<T> out(k * k);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j)
      out[i * k + j] = (i == j ? T(1) : T(0)) - d[i] * a[i * k + j] * d[j];
  return Tensor<T>::from_data({k, k}, std::move(out));
}

template <typename T>
Tensor<T> renormalized_propagation(const Tensor<T>& adjacency) {
  const std::size_t k = check_square(adjacency, "renormalized_propagation");
  check_nonnegative(adjacency, "renormalized_propagation");
  Buffer<T> a_hat = adjacency.values();
  for (std::size_t i = 0; i < k; ++i) a_hat[i * k + i] += T(1);
  const auto d = inv_sqrt_degree(a_hat, k);
  Buffer<T> out(k * k);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] = d[i] * a_hat[i * k + j] * d[j];
  return Tensor<T>::from_data({k, k}, std::move(out));
}

double chebyshev_eval(std::size_t n, double x) {
  if (n == 0) return 1.0;
  double prev = 1.0, cur = x;
  for (std::size_t i = 2; i <= n; ++i) {
    const double next = 2.0 * x * cur - prev;
    prev = cur;
    cur = next;
  }
  return cur;
}

template <typename T>
double spectral_radius(const Tensor<T>& m, std::size_t max_iter, double tol) {
  const std::size_t k = check_square(m, "spectral_radius");
  // Deterministic, non-symmetric start vector avoids orthogonality to the
  // dominant eigenvector in the usual cases.
  std::vector<double> v(k), next(k);
  for (std::size_t i = 0; i < k; ++i) v[i] = 1.0 + 0.1 * std::sin(static_cast<double>(i + 1));
  double estimate = 0.0;
  for (std::size_t it = 0; it < max_iter; ++it) {
    double norm_v = 0;
    for (double x : v) norm_v += x * x;
    norm_v = std::sqrt(norm_v);
    if (norm_v == 0.0) return 0.0;
    for (auto& x : v) x /= norm_v;
    for (std::size_t i = 0; i < k; ++i) {
      double acc = 0;
      for (std::size_t j = 0; j < k; ++j) acc += static_cast<double>(m.data()[i * k + j]) * v[j];
      next[i] = acc;
    }
    double norm_next = 0;
    for (double x : next) norm_next += x * x;
    norm_next = std::sqrt(norm_next);
    const bool converged = std::abs(norm_next - estimate) <= tol * std::max(1.0, norm_next);
    estimate = norm_next;
    v.swap(next);
    if (converged && it > 2) break;
  }
  return estimate;
}

template <typename T>
Tensor<T> chebyshev_filter(const Tensor<T>& laplacian, const SpectralFilter& filter, const Tensor<T>& x,
                           std::optional<double> lambda_max) {
  const std::size_t k = check_square(laplacian, "chebyshev_filter");
  if (x.rank() != 2 || x.dim(0) != k) throw ShapeError("chebyshev_filter: signal rows must equal node count");
  if (filter.coeffs.empty()) throw std::invalid_argument("chebyshev_filter: filter has no coefficients");
  for (double c : filter.coeffs) {
    if (!std::isfinite(c)) throw std::invalid_argument("chebyshev_filter: non-finite coefficient");
  }
  const double lam = lambda_max ? *lambda_max : spectral_radius(laplacian);
  if (!(lam > 0.0)) throw std::invalid_argument("chebyshev_filter: lambda_max must be positive");

  // L_hat is treated as a constant; the filter is differentiable in x only.
  Buffer<T> scaled(k * k);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j)
      scaled[i * k + j] = static_cast<T>(2.0 / lam) * laplacian.data()[i * k + j] - (i == j ? T(1) : T(0));
  const auto l_hat = Tensor<T>::from_data({k, k}, std::move(scaled));

  Tensor<T> t_prev = x;
  Tensor<T> out = ops::scale(t_prev, static_cast<T>(filter.coeffs[0]));
  if (filter.coeffs.size() == 1) return out;
  Tensor<T> t_cur = ops::matmul(l_hat, t_prev);
  out = ops::add(out, ops::scale(t_cur, static_cast<T>(filter.coeffs[1])));
  for (std::size_t i = 2; i < filter.coeffs.size(); ++i) {
    Tensor<T> t_next = ops::sub(ops::scale(ops::matmul(l_hat, t_cur), T(2)), t_prev);
    out = ops::add(out, ops::scale(t_next, static_cast<T>(filter.coeffs[i])));
    t_prev = t_cur;
    t_cur = t_next;
  }
  return out;
}

template <typename T>
Tensor<T> graph_conv(const Tensor<T>& z, const Tensor<T>& x, const Tensor<T>& w) {
  if (z.rank() != 2 || z.dim(0) != z.dim(1)) throw ShapeError("graph_conv: Z must be square");
  return ops::relu(ops::matmul(ops::matmul(z, x), w));
}

#define SSGRN_INSTANTIATE_GRAPH(T)                                                                \
  template Tensor<T> normalized_laplacian(const Tensor<T>&);                                      \
  template Tensor<T> renormalized_propagation(const Tensor<T>&);                                  \
  template Tensor<T> chebyshev_filter(const Tensor<T>&, const SpectralFilter&, const Tensor<T>&,  \
                                      std::optional<double>);                                     \
  template double spectral_radius(const Tensor<T>&, std::size_t, double);                         \
  template Tensor<T> graph_conv(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);

SSGRN_INSTANTIATE_GRAPH(float)
SSGRN_INSTANTIATE_GRAPH(double)

#undef SSGRN_INSTANTIATE_GRAPH

}  // namespace ssgrn::graph
