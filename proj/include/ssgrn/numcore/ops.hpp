#pragma once

// Differentiable layer library. Every op is a pure function of its inputs,
// validates shapes, rejects non-finite results, and records its backward
// rule on the tape. All loops run in a fixed order on the calling thread, so
// results are bit-reproducible run to run.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "ssgrn/numcore/tensor.hpp"

namespace ssgrn::ops {

// ---- elementwise and reshaping -------------------------------------------

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T offset);
template <typename T> Tensor<T> relu(const Tensor<T>& x);

/// Copy with a new shape of equal element count.
template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);
template <typename T> Tensor<T> transpose(const Tensor<T>& a);

/// m[n x c] + v[c] broadcast over rows.
template <typename T> Tensor<T> add_row_vector(const Tensor<T>& m, const Tensor<T>& v);
/// m[n x c] + u[n] broadcast over columns.
template <typename T> Tensor<T> add_col_vector(const Tensor<T>& m, const Tensor<T>& u);
/// m[n x c] / v[n], row i divided by v_i.
template <typename T> Tensor<T> div_rows(const Tensor<T>& m, const Tensor<T>& v);

template <typename T> Tensor<T> concat_cols(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> gather_rows(const Tensor<T>& m, std::span<const std::size_t> rows);

// ---- reductions -----------------------------------------------------------

template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);
/// Column sums of m[n x c] -> [c].
template <typename T> Tensor<T> sum_cols(const Tensor<T>& m);
/// Squared L2 norm of each row of m[n x c] -> [n].
template <typename T> Tensor<T> row_sq_norm(const Tensor<T>& m);

// ---- linear algebra -------------------------------------------------------

template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// Counts inner products evaluated by pairwise_dot when attached.
struct InnerProductCounter {
  std::uint64_t count = 0;
};

/// logits_ij = <a_i, b_j> for a[n x d], b[m x d]. With a counter attached the
/// products are evaluated one pair at a time and each one is counted.
template <typename T>
Tensor<T> pairwise_dot(const Tensor<T>& a, const Tensor<T>& b, InnerProductCounter* counter = nullptr);

/// x[n x in] * w[in x out] + b[out].
template <typename T> Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);

// ---- normalization and activations ----------------------------------------

/// Softmax along `axis`, max-subtracted.
template <typename T> Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);

/// x[C x H x W]; moments per group over (C/groups) x H x W; then per-channel
/// affine gamma[C], beta[C].
template <typename T>
Tensor<T> group_norm(const Tensor<T>& x, std::size_t groups, const Tensor<T>& gamma,
                     const Tensor<T>& beta, T eps = T(1e-5));

// ---- spatial ops on C x H x W ---------------------------------------------

struct Conv2dParams {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t dilation = 1;
};

/// Cross-correlation of input[C_in x H x W] with weight[C_out x C_in x k x k]
/// plus bias[C_out]. An undefined bias tensor means no bias.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 Conv2dParams params = {});

/// Ties route the gradient to the first maximal element in row-major order.
template <typename T> Tensor<T> max_pool2d(const Tensor<T>& x, std::size_t kernel = 2, std::size_t stride = 2);
template <typename T> Tensor<T> avg_pool2d(const Tensor<T>& x, std::size_t kernel, std::size_t stride);

enum class PadMode { zero, replicate };

/// Pads the bottom and right edges only.
template <typename T>
Tensor<T> pad2d(const Tensor<T>& x, std::size_t bottom, std::size_t right, PadMode mode);

/// Half-pixel-centred bilinear resize (source coordinate (i + 0.5) * in / out - 0.5,
/// clamped at the borders). Output extents must not be smaller than input.
template <typename T>
Tensor<T> bilinear_upsample(const Tensor<T>& x, std::size_t out_h, std::size_t out_w);

// ---- losses ---------------------------------------------------------------

/// Mean over selected columns of -log softmax(logits[:, j])[target_j] for
/// logits[C x N]. Columns with target < 0 are ignored.
/// Throws std::invalid_argument if nothing is selected.
template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> targets);

}  // namespace ssgrn::ops
