#include "ssgrn/numcore/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace ssgrn::ops {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
void require_rank(const Tensor<T>& t, std::size_t rank, const char* op) {
  if (!t.defined()) throw ShapeError(std::string(op) + ": undefined tensor");
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(t.shape()));
  }
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

// Gradient sink for `t`, or nullptr when t does not want one.
template <typename T>
T* grad_of(const std::shared_ptr<TensorImpl<T>>& t) {
  return t->requires_grad ? t->grad_buffer().data() : nullptr;
}

}  // namespace

// ---- elementwise ----------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  Buffer<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  auto ai = a.impl(), bi = b.impl();
  return make_result<T>("add", a.shape(), std::move(out), {a, b}, [ai, bi](std::span<const T> g) {
    if (T* ga = grad_of(ai)) for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    if (T* gb = grad_of(bi)) for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  Buffer<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  auto ai = a.impl(), bi = b.impl();
  return make_result<T>("sub", a.shape(), std::move(out), {a, b}, [ai, bi](std::span<const T> g) {
    if (T* ga = grad_of(ai)) for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    if (T* gb = grad_of(bi)) for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  Buffer<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  auto ai = a.impl(), bi = b.impl();
  return make_result<T>("mul", a.shape(), std::move(out), {a, b}, [ai, bi](std::span<const T> g) {
    if (T* ga = grad_of(ai)) for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bi->data[i];
    if (T* gb = grad_of(bi)) for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ai->data[i];
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  Buffer<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * factor;
  auto ai = a.impl();
  return make_result<T>("scale", a.shape(), std::move(out), {a}, [ai, factor](std::span<const T> g) {
    if (T* ga = grad_of(ai)) for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
  });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T offset) {
  Buffer<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + offset;
  auto ai = a.impl();
  return make_result<T>("add_scalar", a.shape(), std::move(out), {a}, [ai](std::span<const T> g) {
    if (T* ga = grad_of(ai)) for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Buffer<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(x.data()[i], T(0));
  auto xi = x.impl();
  return make_result<T>("relu", x.shape(), std::move(out), {x}, [xi](std::span<const T> g) {
    if (T* gx = grad_of(xi)) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (xi->data[i] > T(0)) gx[i] += g[i];
      }
    }
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (numel_of(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  auto ai = a.impl();
  return make_result<T>("reshape", std::move(shape), a.values(), {a}, [ai](std::span<const T> g) {
    if (T* ga = grad_of(ai)) for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  require_rank(a, 2, "transpose");
  const std::size_t n = a.dim(0), c = a.dim(1);
  Buffer<T> out(a.numel());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * n + i] = a.data()[i * c + j];
  auto ai = a.impl();
  return make_result<T>("transpose", {c, n}, std::move(out), {a}, [ai, n, c](std::span<const T> g) {
    if (T* ga = grad_of(ai)) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * n + i];
    }
  });
}

template <typename T>
Tensor<T> add_row_vector(const Tensor<T>& m, const Tensor<T>& v) {
  require_rank(m, 2, "add_row_vector");
  const std::size_t n = m.dim(0), c = m.dim(1);
  if (v.numel() != c) throw ShapeError("add_row_vector: vector length must equal column count");
  Buffer<T> out(m.numel());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = m.data()[i * c + j] + v.data()[j];
  auto mi = m.impl(), vi = v.impl();
  return make_result<T>("add_row_vector", m.shape(), std::move(out), {m, v},
                        [mi, vi, n, c](std::span<const T> g) {
                          if (T* gm = grad_of(mi)) for (std::size_t i = 0; i < g.size(); ++i) gm[i] += g[i];
                          if (T* gv = grad_of(vi)) {
                            for (std::size_t i = 0; i < n; ++i)
                              for (std::size_t j = 0; j < c; ++j) gv[j] += g[i * c + j];
                          }
                        });
}

template <typename T>
Tensor<T> add_col_vector(const Tensor<T>& m, const Tensor<T>& u) {
  require_rank(m, 2, "add_col_vector");
  const std::size_t n = m.dim(0), c = m.dim(1);
  if (u.numel() != n) throw ShapeError("add_col_vector: vector length must equal row count");
  Buffer<T> out(m.numel());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = m.data()[i * c + j] + u.data()[i];
  auto mi = m.impl(), ui = u.impl();
  return make_result<T>("add_col_vector", m.shape(), std::move(out), {m, u},
                        [mi, ui, n, c](std::span<const T> g) {
                          if (T* gm = grad_of(mi)) for (std::size_t i = 0; i < g.size(); ++i) gm[i] += g[i];
                          if (T* gu = grad_of(ui)) {
                            for (std::size_t i = 0; i < n; ++i)
                              for (std::size_t j = 0; j < c; ++j) gu[i] += g[i * c + j];
                          }
                        });
}

template <typename T>
Tensor<T> div_rows(const Tensor<T>& m, const Tensor<T>& v) {
  require_rank(m, 2, "div_rows");
  const std::size_t n = m.dim(0), c = m.dim(1);
  if (v.numel() != n) throw ShapeError("div_rows: divisor length must equal row count");
  Buffer<T> out(m.numel());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = m.data()[i * c + j] / v.data()[i];
  auto mi = m.impl(), vi = v.impl();
  return make_result<T>("div_rows", m.shape(), std::move(out), {m, v},
                        [mi, vi, n, c](std::span<const T> g) {
                          T* gm = grad_of(mi);
                          T* gv = grad_of(vi);
                          for (std::size_t i = 0; i < n; ++i) {
                            const T inv = T(1) / vi->data[i];
                            T acc = 0;
                            for (std::size_t j = 0; j < c; ++j) {
                              if (gm) gm[i * c + j] += g[i * c + j] * inv;
                              acc += g[i * c + j] * mi->data[i * c + j];
                            }
                            if (gv) gv[i] -= acc * inv * inv;
                          }
                        });
}

template <typename T>
Tensor<T> concat_cols(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a, 2, "concat_cols");
  require_rank(b, 2, "concat_cols");
  if (a.dim(0) != b.dim(0)) throw ShapeError("concat_cols: row counts differ");
  const std::size_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1), c = ca + cb;
  Buffer<T> out(n * c);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(a.data().begin() + i * ca, ca, out.begin() + i * c);
    std::copy_n(b.data().begin() + i * cb, cb, out.begin() + i * c + ca);
  }
  auto ai = a.impl(), bi = b.impl();
  return make_result<T>("concat_cols", {n, c}, std::move(out), {a, b},
                        [ai, bi, n, ca, cb, c](std::span<const T> g) {
                          T* ga = grad_of(ai);
                          T* gb = grad_of(bi);
                          for (std::size_t i = 0; i < n; ++i) {
                            if (ga) for (std::size_t j = 0; j < ca; ++j) ga[i * ca + j] += g[i * c + j];
                            if (gb) for (std::size_t j = 0; j < cb; ++j) gb[i * cb + j] += g[i * c + ca + j];
                          }
                        });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& m, std::span<const std::size_t> rows) {
  require_rank(m, 2, "gather_rows");
  const std::size_t c = m.dim(1);
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  Buffer<T> out(idx.size() * c);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= m.dim(0)) throw ShapeError("gather_rows: row index out of range");
    std::copy_n(m.data().begin() + idx[r] * c, c, out.begin() + r * c);
  }
  auto mi = m.impl();
  return make_result<T>("gather_rows", {idx.size(), c}, std::move(out), {m},
                        [mi, idx, c](std::span<const T> g) {
                          if (T* gm = grad_of(mi)) {
                            for (std::size_t r = 0; r < idx.size(); ++r)
                              for (std::size_t j = 0; j < c; ++j) gm[idx[r] * c + j] += g[r * c + j];
                          }
                        });
}

// ---- reductions -----------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T acc = 0;
  for (T v : a.data()) acc += v;
  auto ai = a.impl();
  return make_result<T>("sum", {1}, {acc}, {a}, [ai](std::span<const T> g) {
    if (T* ga = grad_of(ai)) for (std::size_t i = 0; i < ai->data.size(); ++i) ga[i] += g[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <typename T>
Tensor<T> sum_cols(const Tensor<T>& m) {
  require_rank(m, 2, "sum_cols");
  const std::size_t n = m.dim(0), c = m.dim(1);
  Buffer<T> out(c, T(0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] += m.data()[i * c + j];
  auto mi = m.impl();
  return make_result<T>("sum_cols", {c}, std::move(out), {m}, [mi, n, c](std::span<const T> g) {
    if (T* gm = grad_of(mi)) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) gm[i * c + j] += g[j];
    }
  });
}

template <typename T>
Tensor<T> row_sq_norm(const Tensor<T>& m) {
  require_rank(m, 2, "row_sq_norm");
  const std::size_t n = m.dim(0), c = m.dim(1);
  Buffer<T> out(n, T(0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i] += m.data()[i * c + j] * m.data()[i * c + j];
  auto mi = m.impl();
  return make_result<T>("row_sq_norm", {n}, std::move(out), {m}, [mi, n, c](std::span<const T> g) {
    if (T* gm = grad_of(mi)) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) gm[i * c + j] += T(2) * mi->data[i * c + j] * g[i];
    }
  });
}

// ---- linear algebra -------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner extents differ, " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  Buffer<T> out(m * n);
  MatMap<T>(out.data(), m, n).noalias() =
      ConstMatMap<T>(a.data().data(), m, k) * ConstMatMap<T>(b.data().data(), k, n);
  auto ai = a.impl(), bi = b.impl();
  return make_result<T>("matmul", {m, n}, std::move(out), {a, b},
                        [ai, bi, m, k, n](std::span<const T> g) {
                          ConstMatMap<T> gc(g.data(), m, n);
                          if (T* ga = grad_of(ai)) {
                            MatMap<T>(ga, m, k).noalias() += gc * ConstMatMap<T>(bi->data.data(), k, n).transpose();
                          }
                          if (T* gb = grad_of(bi)) {
                            MatMap<T>(gb, k, n).noalias() += ConstMatMap<T>(ai->data.data(), m, k).transpose() * gc;
                          }
                        });
}

template <typename T>
Tensor<T> pairwise_dot(const Tensor<T>& a, const Tensor<T>& b, InnerProductCounter* counter) {
  require_rank(a, 2, "pairwise_dot");
  require_rank(b, 2, "pairwise_dot");
  const std::size_t n = a.dim(0), m = b.dim(0), d = a.dim(1);
  if (b.dim(1) != d) throw ShapeError("pairwise_dot: embedding widths differ");
  Buffer<T> out(n * m);
  if (counter) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        T acc = 0;
        for (std::size_t t = 0; t < d; ++t) acc += a.data()[i * d + t] * b.data()[j * d + t];
        out[i * m + j] = acc;
        ++counter->count;
      }
    }
  } else {
    MatMap<T>(out.data(), n, m).noalias() =
        ConstMatMap<T>(a.data().data(), n, d) * ConstMatMap<T>(b.data().data(), m, d).transpose();
  }
  auto ai = a.impl(), bi = b.impl();
  return make_result<T>("pairwise_dot", {n, m}, std::move(out), {a, b},
                        [ai, bi, n, m, d](std::span<const T> g) {
                          ConstMatMap<T> gc(g.data(), n, m);
                          if (T* ga = grad_of(ai)) {
                            MatMap<T>(ga, n, d).noalias() += gc * ConstMatMap<T>(bi->data.data(), m, d);
                          }
                          if (T* gb = grad_of(bi)) {
                            MatMap<T>(gb, m, d).noalias() += gc.transpose() * ConstMatMap<T>(ai->data.data(), n, d);
                          }
                        });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  auto y = matmul(x, w);
  return b.defined() ? add_row_vector(y, b) : y;
}

// ---- normalization --------------------------------------------------------

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  if (axis >= x.rank()) throw ShapeError("softmax: axis out of range for " + shape_str(x.shape()));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t n = x.dim(axis);
  check_finite<T>(x.data(), "softmax input");

  Buffer<T> out(x.numel());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, x.data()[base + i * inner]);
      T z = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const T e = std::exp(x.data()[base + i * inner] - mx);
        out[base + i * inner] = e;
        z += e;
      }
      for (std::size_t i = 0; i < n; ++i) out[base + i * inner] /= z;
    }
  }
  auto xi = x.impl();
  auto y = std::make_shared<Buffer<T>>(out);
  return make_result<T>("softmax", x.shape(), std::move(out), {x},
                        [xi, y, outer, inner, n](std::span<const T> g) {
                          T* gx = grad_of(xi);
                          if (!gx) return;
                          const auto& yv = *y;
                          for (std::size_t o = 0; o < outer; ++o) {
                            for (std::size_t in = 0; in < inner; ++in) {
                              const std::size_t base = o * n * inner + in;
                              T dot = 0;
                              for (std::size_t i = 0; i < n; ++i) dot += g[base + i * inner] * yv[base + i * inner];
                              for (std::size_t i = 0; i < n; ++i) {
                                const std::size_t p = base + i * inner;
                                gx[p] += yv[p] * (g[p] - dot);
                              }
                            }
                          }
                        });
}

template <typename T>
Tensor<T> group_norm(const Tensor<T>& x, std::size_t groups, const Tensor<T>& gamma,
                     const Tensor<T>& beta, T eps) {
  require_rank(x, 3, "group_norm");
  const std::size_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
  if (groups == 0 || c % groups != 0) {
    throw ShapeError("group_norm: " + std::to_string(c) + " channels not divisible into " +
                     std::to_string(groups) + " groups");
  }
  if (gamma.numel() != c || beta.numel() != c) throw ShapeError("group_norm: affine length must equal channels");
  const std::size_t per_group = (c / groups) * hw;

  Buffer<T> xhat(x.numel());
  Buffer<T> inv_std(groups);
  Buffer<T> out(x.numel());
  for (std::size_t gi = 0; gi < groups; ++gi) {
    const T* src = x.data().data() + gi * per_group;
    T mu = 0;
    for (std::size_t i = 0; i < per_group; ++i) mu += src[i];
    mu /= static_cast<T>(per_group);
    T var = 0;
    for (std::size_t i = 0; i < per_group; ++i) var += (src[i] - mu) * (src[i] - mu);
    var /= static_cast<T>(per_group);
    inv_std[gi] = T(1) / std::sqrt(var + eps);
    for (std::size_t i = 0; i < per_group; ++i) xhat[gi * per_group + i] = (src[i] - mu) * inv_std[gi];
  }
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t p = 0; p < hw; ++p)
      out[ch * hw + p] = gamma.data()[ch] * xhat[ch * hw + p] + beta.data()[ch];

  auto xi = x.impl(), gi_ = gamma.impl(), bi = beta.impl();
  return make_result<T>(
      "group_norm", x.shape(), std::move(out), {x, gamma, beta},
      [xi, gi_, bi, xhat = std::move(xhat), inv_std = std::move(inv_std), groups, c, hw,
       per_group](std::span<const T> g) {
        T* gg = grad_of(gi_);
        T* gb = grad_of(bi);
        for (std::size_t ch = 0; ch < c; ++ch) {
          for (std::size_t p = 0; p < hw; ++p) {
            if (gg) gg[ch] += g[ch * hw + p] * xhat[ch * hw + p];
            if (gb) gb[ch] += g[ch * hw + p];
          }
        }
        T* gx = grad_of(xi);
        if (!gx) return;
        const std::size_t ch_per_group = c / groups;
        Buffer<T> dxhat(per_group);
        for (std::size_t grp = 0; grp < groups; ++grp) {
          T mean_d = 0, mean_dx = 0;
          for (std::size_t i = 0; i < per_group; ++i) {
            const std::size_t flat = grp * per_group + i;
            const std::size_t ch = grp * ch_per_group + i / hw;
            dxhat[i] = g[flat] * gi_->data[ch];
            mean_d += dxhat[i];
            mean_dx += dxhat[i] * xhat[flat];
          }
          mean_d /= static_cast<T>(per_group);
          mean_dx /= static_cast<T>(per_group);
          for (std::size_t i = 0; i < per_group; ++i) {
            const std::size_t flat = grp * per_group + i;
            gx[flat] += inv_std[grp] * (dxhat[i] - mean_d - xhat[flat] * mean_dx);
          }
        }
      });
}

// ---- convolution ----------------------------------------------------------

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 Conv2dParams params) {
  require_rank(input, 3, "conv2d");
  require_rank(weight, 4, "conv2d");
  const std::size_t cin = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::size_t cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  if (weight.dim(1) != cin) throw ShapeError("conv2d: weight input channels do not match input");
  if (bias.defined() && bias.numel() != cout) throw ShapeError("conv2d: bias length must equal output channels");
  if (params.stride == 0 || params.dilation == 0) throw ShapeError("conv2d: stride and dilation must be positive");
  const auto s = static_cast<long>(params.stride), p = static_cast<long>(params.padding),
             d = static_cast<long>(params.dilation);
  const long oh_l = (static_cast<long>(h) + 2 * p - d * (static_cast<long>(kh) - 1) - 1) / s + 1;
  const long ow_l = (static_cast<long>(w) + 2 * p - d * (static_cast<long>(kw) - 1) - 1) / s + 1;
  if (oh_l <= 0 || ow_l <= 0 || static_cast<long>(h) + 2 * p - d * (static_cast<long>(kh) - 1) - 1 < 0 ||
      static_cast<long>(w) + 2 * p - d * (static_cast<long>(kw) - 1) - 1 < 0) {
    throw ShapeError("conv2d: non-positive output extent for input " + shape_str(input.shape()));
  }
  const auto oh = static_cast<std::size_t>(oh_l), ow = static_cast<std::size_t>(ow_l);
  const std::size_t patch = cin * kh * kw, opix = oh * ow;

  // cols[patch x opix]; out-of-image taps are zero.
  auto cols = std::make_shared<Buffer<T>>(patch * opix, T(0));
  const T* src = input.data().data();
  for (std::size_t c = 0; c < cin; ++c) {
    for (std::size_t ky = 0; ky < kh; ++ky) {
      for (std::size_t kx = 0; kx < kw; ++kx) {
        T* row = cols->data() + ((c * kh + ky) * kw + kx) * opix;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const long iy = static_cast<long>(oy) * s - p + static_cast<long>(ky) * d;
          if (iy < 0 || iy >= static_cast<long>(h)) continue;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const long ix = static_cast<long>(ox) * s - p + static_cast<long>(kx) * d;
            if (ix < 0 || ix >= static_cast<long>(w)) continue;
            row[oy * ow + ox] = src[(c * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)];
          }
        }
      }
    }
  }

  Buffer<T> out(cout * opix);
  MatMap<T> om(out.data(), cout, opix);
  om.noalias() = ConstMatMap<T>(weight.data().data(), cout, patch) * ConstMatMap<T>(cols->data(), patch, opix);
  if (bias.defined()) {
    for (std::size_t o = 0; o < cout; ++o) om.row(o).array() += bias.data()[o];
  }

  auto ii = input.impl(), wi = weight.impl();
  auto bi = bias.defined() ? bias.impl() : nullptr;
  auto backward = [ii, wi, bi, cols, cin, h, w, cout, kh, kw, oh, ow, s, p, d, patch,
                   opix](std::span<const T> g) {
    ConstMatMap<T> gm(g.data(), cout, opix);
    if (T* gw = grad_of(wi)) {
      MatMap<T>(gw, cout, patch).noalias() += gm * ConstMatMap<T>(cols->data(), patch, opix).transpose();
    }
    if (bi) {
      if (T* gb = grad_of(bi)) {
        for (std::size_t o = 0; o < cout; ++o) gb[o] += gm.row(o).sum();
      }
    }
    if (T* gi = grad_of(ii)) {
      Buffer<T> gcols(patch * opix);
      MatMap<T>(gcols.data(), patch, opix).noalias() =
          ConstMatMap<T>(wi->data.data(), cout, patch).transpose() * gm;
      for (std::size_t c = 0; c < cin; ++c) {
        for (std::size_t ky = 0; ky < kh; ++ky) {
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const T* row = gcols.data() + ((c * kh + ky) * kw + kx) * opix;
            for (std::size_t oy = 0; oy < oh; ++oy) {
              const long iy = static_cast<long>(oy) * s - p + static_cast<long>(ky) * d;
              if (iy < 0 || iy >= static_cast<long>(h)) continue;
              for (std::size_t ox = 0; ox < ow; ++ox) {
                const long ix = static_cast<long>(ox) * s - p + static_cast<long>(kx) * d;
                if (ix < 0 || ix >= static_cast<long>(w)) continue;
                gi[(c * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)] += row[oy * ow + ox];
              }
            }
          }
        }
      }
    }
  };
  if (bias.defined()) {
    return make_result<T>("conv2d", {cout, oh, ow}, std::move(out), {input, weight, bias}, std::move(backward));
  }
  return make_result<T>("conv2d", {cout, oh, ow}, std::move(out), {input, weight}, std::move(backward));
}

// ---- pooling, padding, resampling ----------------------------------------

template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& x, std::size_t kernel, std::size_t stride) {
  require_rank(x, 3, "max_pool2d");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (kernel == 0 || stride == 0) throw ShapeError("max_pool2d: kernel and stride must be positive");
  if (kernel > h || kernel > w) throw ShapeError("max_pool2d: window larger than input " + shape_str(x.shape()));
  const std::size_t oh = (h - kernel) / stride + 1, ow = (w - kernel) / stride + 1;
  Buffer<T> out(c * oh * ow);
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = (ch * h + oy * stride) * w + ox * stride;
        for (std::size_t ky = 0; ky < kernel; ++ky) {
          for (std::size_t kx = 0; kx < kernel; ++kx) {
            const std::size_t idx = (ch * h + oy * stride + ky) * w + ox * stride + kx;
            if (x.data()[idx] > x.data()[best]) best = idx;
          }
        }
        const std::size_t o = (ch * oh + oy) * ow + ox;
        out[o] = x.data()[best];
        argmax[o] = best;
      }
    }
  }
  auto xi = x.impl();
  return make_result<T>("max_pool2d", {c, oh, ow}, std::move(out), {x},
                        [xi, argmax = std::move(argmax)](std::span<const T> g) {
                          if (T* gx = grad_of(xi)) {
                            for (std::size_t o = 0; o < g.size(); ++o) gx[argmax[o]] += g[o];
                          }
                        });
}

template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& x, std::size_t kernel, std::size_t stride) {
  require_rank(x, 3, "avg_pool2d");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (kernel == 0 || stride == 0) throw ShapeError("avg_pool2d: kernel and stride must be positive");
  if (kernel > h || kernel > w) throw ShapeError("avg_pool2d: window larger than input " + shape_str(x.shape()));
  const std::size_t oh = (h - kernel) / stride + 1, ow = (w - kernel) / stride + 1;
  const T inv = T(1) / static_cast<T>(kernel * kernel);
  Buffer<T> out(c * oh * ow);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        T acc = 0;
        for (std::size_t ky = 0; ky < kernel; ++ky)
          for (std::size_t kx = 0; kx < kernel; ++kx)
            acc += x.data()[(ch * h + oy * stride + ky) * w + ox * stride + kx];
        out[(ch * oh + oy) * ow + ox] = acc * inv;
      }
    }
  }
  auto xi = x.impl();
  return make_result<T>("avg_pool2d", {c, oh, ow}, std::move(out), {x},
                        [xi, c, h, w, oh, ow, kernel, stride, inv](std::span<const T> g) {
                          T* gx = grad_of(xi);
                          if (!gx) return;
                          for (std::size_t ch = 0; ch < c; ++ch)
                            for (std::size_t oy = 0; oy < oh; ++oy)
                              for (std::size_t ox = 0; ox < ow; ++ox) {
                                const T v = g[(ch * oh + oy) * ow + ox] * inv;
                                for (std::size_t ky = 0; ky < kernel; ++ky)
                                  for (std::size_t kx = 0; kx < kernel; ++kx)
                                    gx[(ch * h + oy * stride + ky) * w + ox * stride + kx] += v;
                              }
                        });
}

template <typename T>
Tensor<T> pad2d(const Tensor<T>& x, std::size_t bottom, std::size_t right, PadMode mode) {
  require_rank(x, 3, "pad2d");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t oh = h + bottom, ow = w + right;
  // Source flat index per output element, or npos for zero fill.
  constexpr std::size_t npos = static_cast<std::size_t>(-1);
  std::vector<std::size_t> src(c * oh * ow, npos);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xx = 0; xx < ow; ++xx) {
        std::size_t sy = y, sx = xx;
        if (mode == PadMode::zero && (y >= h || xx >= w)) continue;
        sy = std::min(sy, h - 1);
        sx = std::min(sx, w - 1);
        src[(ch * oh + y) * ow + xx] = (ch * h + sy) * w + sx;
      }
    }
  }
  Buffer<T> out(src.size(), T(0));
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i] != npos) out[i] = x.data()[src[i]];
  }
  auto xi = x.impl();
  return make_result<T>("pad2d", {c, oh, ow}, std::move(out), {x}, [xi, src = std::move(src)](std::span<const T> g) {
    if (T* gx = grad_of(xi)) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (src[i] != npos) gx[src[i]] += g[i];
      }
    }
  });
}

namespace {

struct Tap {
  std::size_t lo, hi;
  double frac;  // weight of hi
};

std::vector<Tap> bilinear_taps(std::size_t in, std::size_t out) {
  std::vector<Tap> taps(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * ratio - 0.5;
    if (src < 0) src = 0;
    auto lo = static_cast<std::size_t>(src);
    if (lo > in - 1) lo = in - 1;
    const std::size_t hi = std::min(lo + 1, in - 1);
    taps[i] = {lo, hi, src - static_cast<double>(lo)};
    if (hi == lo) taps[i].frac = 0.0;
  }
  return taps;
}

}  // namespace

template <typename T>
Tensor<T> bilinear_upsample(const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
  require_rank(x, 3, "bilinear_upsample");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (out_h < h || out_w < w) throw ShapeError("bilinear_upsample: output must not be smaller than input");
  const auto ty = bilinear_taps(h, out_h);
  const auto tx = bilinear_taps(w, out_w);
  Buffer<T> out(c * out_h * out_w);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const T* s = x.data().data() + ch * h * w;
    for (std::size_t y = 0; y < out_h; ++y) {
      const T fy = static_cast<T>(ty[y].frac);
      for (std::size_t xx = 0; xx < out_w; ++xx) {
        const T fx = static_cast<T>(tx[xx].frac);
        const T top = s[ty[y].lo * w + tx[xx].lo] * (T(1) - fx) + s[ty[y].lo * w + tx[xx].hi] * fx;
        const T bot = s[ty[y].hi * w + tx[xx].lo] * (T(1) - fx) + s[ty[y].hi * w + tx[xx].hi] * fx;
        out[(ch * out_h + y) * out_w + xx] = top * (T(1) - fy) + bot * fy;
      }
    }
  }
  auto xi = x.impl();
  return make_result<T>("bilinear_upsample", {c, out_h, out_w}, std::move(out), {x},
                        [xi, ty, tx, c, h, w, out_h, out_w](std::span<const T> g) {
                          T* gx = grad_of(xi);
                          if (!gx) return;
                          for (std::size_t ch = 0; ch < c; ++ch) {
                            T* d = gx + ch * h * w;
                            for (std::size_t y = 0; y < out_h; ++y) {
                              const T fy = static_cast<T>(ty[y].frac);
                              for (std::size_t xx = 0; xx < out_w; ++xx) {
                                const T fx = static_cast<T>(tx[xx].frac);
                                const T v = g[(ch * out_h + y) * out_w + xx];
                                d[ty[y].lo * w + tx[xx].lo] += v * (T(1) - fy) * (T(1) - fx);
                                d[ty[y].lo * w + tx[xx].hi] += v * (T(1) - fy) * fx;
                                d[ty[y].hi * w + tx[xx].lo] += v * fy * (T(1) - fx);
                                d[ty[y].hi * w + tx[xx].hi] += v * fy * fx;
                              }
                            }
                          }
                        });
}

// ---- loss -----------------------------------------------------------------

template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> targets) {
  require_rank(logits, 2, "softmax_cross_entropy");
  const std::size_t c = logits.dim(0), n = logits.dim(1);
  if (targets.size() != n) throw ShapeError("softmax_cross_entropy: one target per column required");
  std::vector<int> tgt(targets.begin(), targets.end());
  std::size_t selected = 0;
  for (int t : tgt) {
    if (t >= static_cast<int>(c)) throw std::invalid_argument("softmax_cross_entropy: target class out of range");
    if (t >= 0) ++selected;
  }
  if (selected == 0) throw std::invalid_argument("softmax_cross_entropy: no labeled pixel selected");

  const T* z = logits.data().data();
  auto probs = std::make_shared<Buffer<T>>(c * n, T(0));
  T total = 0;
  for (std::size_t j = 0; j < n; ++j) {
    if (tgt[j] < 0) continue;
    T mx = z[j];
    for (std::size_t k = 1; k < c; ++k) mx = std::max(mx, z[k * n + j]);
    T denom = 0;
    for (std::size_t k = 0; k < c; ++k) denom += std::exp(z[k * n + j] - mx);
    const T lse = mx + std::log(denom);
    total += lse - z[static_cast<std::size_t>(tgt[j]) * n + j];
    for (std::size_t k = 0; k < c; ++k) (*probs)[k * n + j] = std::exp(z[k * n + j] - lse);
  }
  const T inv = T(1) / static_cast<T>(selected);
  auto li = logits.impl();
  return make_result<T>("softmax_cross_entropy", {1}, {total * inv}, {logits},
                        [li, probs, tgt = std::move(tgt), c, n, inv](std::span<const T> g) {
                          T* gl = grad_of(li);
                          if (!gl) return;
                          for (std::size_t j = 0; j < n; ++j) {
                            if (tgt[j] < 0) continue;
                            for (std::size_t k = 0; k < c; ++k) {
                              T v = (*probs)[k * n + j];
                              if (static_cast<int>(k) == tgt[j]) v -= T(1);
                              gl[k * n + j] += g[0] * inv * v;
                            }
                          }
                        });
}

#define SSGRN_INSTANTIATE_OPS(T)                                                                     \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> scale(const Tensor<T>&, T);                                                    \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                               \
  template Tensor<T> relu(const Tensor<T>&);                                                        \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                              \
  template Tensor<T> transpose(const Tensor<T>&);                                                   \
  template Tensor<T> add_row_vector(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> add_col_vector(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> div_rows(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> concat_cols(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> gather_rows(const Tensor<T>&, std::span<const std::size_t>);                   \
  template Tensor<T> sum(const Tensor<T>&);                                                         \
  template Tensor<T> mean(const Tensor<T>&);                                                        \
  template Tensor<T> sum_cols(const Tensor<T>&);                                                    \
  template Tensor<T> row_sq_norm(const Tensor<T>&);                                                 \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> pairwise_dot(const Tensor<T>&, const Tensor<T>&, InnerProductCounter*);        \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                  \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t);                                        \
  template Tensor<T> group_norm(const Tensor<T>&, std::size_t, const Tensor<T>&, const Tensor<T>&, T); \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Conv2dParams);    \
  template Tensor<T> max_pool2d(const Tensor<T>&, std::size_t, std::size_t);                        \
  template Tensor<T> avg_pool2d(const Tensor<T>&, std::size_t, std::size_t);                        \
  template Tensor<T> pad2d(const Tensor<T>&, std::size_t, std::size_t, PadMode);                    \
  template Tensor<T> bilinear_upsample(const Tensor<T>&, std::size_t, std::size_t);                 \
  template Tensor<T> softmax_cross_entropy(const Tensor<T>&, std::span<const int>);

SSGRN_INSTANTIATE_OPS(float)
SSGRN_INSTANTIATE_OPS(double)

#undef SSGRN_INSTANTIATE_OPS

}  // namespace ssgrn::ops
