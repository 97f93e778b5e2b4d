#include "ssgrn/superpix.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace ssgrn::superpix {

void SlicConfig::validate() const {
  if (num_superpixels < 1) throw std::invalid_argument("slic: superpixel count must be at least 1");
  if (iters < 1) throw std::invalid_argument("slic: iteration count must be at least 1");
  if (!(compactness >= 0.0)) throw std::invalid_argument("slic: compactness must be nonnegative");
  if (!(temperature > 0.0)) throw std::invalid_argument("slic: temperature must be positive");
}

namespace {

double normalized_coord(double v, std::size_t extent) {
  return extent > 1 ? v / static_cast<double>(extent - 1) : 0.0;
}

template <typename T>
Tensor<T> pixels_by_channels(const Tensor<T>& features) {
  if (features.rank() != 3) throw ShapeError("superpix: features must be C x H x W");
  const std::size_t c = features.dim(0), n = features.dim(1) * features.dim(2);
  return ops::transpose(ops::reshape(features, {c, n}));
}

// Constant K x (C + 2) multiplier scaling the two position columns.
template <typename T>
Tensor<T> position_weights(std::size_t rows, std::size_t feat, double factor) {
  Buffer<T> w(rows * (feat + 2), T(1));
  for (std::size_t r = 0; r < rows; ++r) {
    w[r * (feat + 2) + feat] = static_cast<T>(factor);
    w[r * (feat + 2) + feat + 1] = static_cast<T>(factor);
  }
  return Tensor<T>::from_data({rows, feat + 2}, std::move(w));
}

template <typename T>
Tensor<T> soft_assignment(const Tensor<T>& pixels_aug, const Tensor<T>& centroids, std::size_t feat,
                          const SlicConfig& config) {
  const double s = std::sqrt(config.compactness);
  const auto cent_aug = ops::mul(centroids, position_weights<T>(centroids.dim(0), feat, s));
  auto dist = ops::scale(ops::pairwise_dot(pixels_aug, cent_aug), T(-2));
  dist = ops::add_row_vector(dist, ops::row_sq_norm(cent_aug));
  dist = ops::add_col_vector(dist, ops::row_sq_norm(pixels_aug));
  return ops::softmax(ops::scale(dist, static_cast<T>(-1.0 / config.temperature)), 1);
}

}  // namespace

std::vector<std::pair<double, double>> grid_seed_positions(std::size_t h, std::size_t w, std::size_t k) {
  if (h == 0 || w == 0) throw ShapeError("grid seeding: empty image");
  if (k < 1 || k > h * w) {
    throw std::invalid_argument("grid seeding: superpixel count " + std::to_string(k) + " exceeds pixel count " +
                                std::to_string(h * w));
  }
  auto rows = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(k * h) / static_cast<double>(w))));
  rows = std::clamp<std::size_t>(rows, 1, std::min(k, h));
  std::vector<std::pair<double, double>> seeds;
  seeds.reserve(k);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t in_row = k / rows + (r < k % rows ? 1 : 0);
    const double y = (static_cast<double>(r) + 0.5) * static_cast<double>(h) / static_cast<double>(rows) - 0.5;
    for (std::size_t c = 0; c < in_row; ++c) {
      const double x = (static_cast<double>(c) + 0.5) * static_cast<double>(w) / static_cast<double>(in_row) - 0.5;
      seeds.emplace_back(y, x);
    }
  }
  return seeds;
}

template <typename T>
Tensor<T> pixel_positions(std::size_t h, std::size_t w) {
  Buffer<T> pos(h * w * 2);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      pos[(y * w + x) * 2] = static_cast<T>(normalized_coord(static_cast<double>(y), h));
      pos[(y * w + x) * 2 + 1] = static_cast<T>(normalized_coord(static_cast<double>(x), w));
    }
  }
  return Tensor<T>::from_data({h * w, 2}, std::move(pos));
}

template <typename T>
Tensor<T> init_centroids_grid(const Tensor<T>& features, std::size_t k) {
  if (features.rank() != 3) throw ShapeError("init_centroids_grid: features must be C x H x W");
  const std::size_t h = features.dim(1), w = features.dim(2);
  const auto seeds = grid_seed_positions(h, w, k);
  std::vector<std::size_t> idx(k);
  Buffer<T> pos(k * 2);
  for (std::size_t i = 0; i < k; ++i) {
    const auto [y, x] = seeds[i];
    const auto py = static_cast<std::size_t>(std::clamp<long>(std::lround(y), 0, static_cast<long>(h) - 1));
    const auto px = static_cast<std::size_t>(std::clamp<long>(std::lround(x), 0, static_cast<long>(w) - 1));
    idx[i] = py * w + px;
    pos[i * 2] = static_cast<T>(normalized_coord(y, h));
    pos[i * 2 + 1] = static_cast<T>(normalized_coord(x, w));
  }
  const auto feats = ops::gather_rows(pixels_by_channels(features), std::span<const std::size_t>(idx));
  return ops::concat_cols(feats, Tensor<T>::from_data({k, 2}, std::move(pos)));
}

template <typename T>
Tensor<T> assign_to_centroids(const Tensor<T>& features, const Tensor<T>& centroids, const SlicConfig& config) {
  config.validate();
  const std::size_t c = features.dim(0), h = features.dim(1), w = features.dim(2);
  if (centroids.rank() != 2 || centroids.dim(1) != c + 2) {
    throw ShapeError("assign_to_centroids: centroids must be K x (C + 2)");
  }
  const double s = std::sqrt(config.compactness);
  const auto pixels_aug =
      ops::concat_cols(pixels_by_channels(features), ops::scale(pixel_positions<T>(h, w), static_cast<T>(s)));
  return soft_assignment(pixels_aug, centroids, c, config);
}

template <typename T>
SuperpixelAssignment<T> soft_assign_iterate(const Tensor<T>& features, const SlicConfig& config) {
  config.validate();
  if (features.rank() != 3) throw ShapeError("soft_assign_iterate: features must be C x H x W");
  const std::size_t c = features.dim(0), h = features.dim(1), w = features.dim(2);
  const std::size_t k = config.num_superpixels;
  const double s = std::sqrt(config.compactness);

  const auto pix = pixels_by_channels(features);
  const auto pos = pixel_positions<T>(h, w);
  const auto pixels = ops::concat_cols(pix, pos);
  const auto pixels_aug = ops::concat_cols(pix, ops::scale(pos, static_cast<T>(s)));

  Tensor<T> centroids = init_centroids_grid(features, k);
  Tensor<T> soft;
  for (std::size_t it = 0; it < config.iters; ++it) {
    soft = soft_assignment(pixels_aug, centroids, c, config);
    const auto mass = ops::sum_cols(soft);
    auto updated = ops::div_rows(ops::matmul(ops::transpose(soft), pixels),
                                 ops::add_scalar(mass, static_cast<T>(kEmptyClusterMass)));
    Buffer<T> keep(k * (c + 2), T(1));
    bool any_empty = false;
    for (std::size_t i = 0; i < k; ++i) {
      if (static_cast<double>(mass.data()[i]) < kEmptyClusterMass) {
        any_empty = true;
        std::fill_n(keep.begin() + static_cast<std::ptrdiff_t>(i * (c + 2)), c + 2, T(0));
      }
    }
    if (any_empty) {
      Buffer<T> drop(keep.size());
      for (std::size_t i = 0; i < keep.size(); ++i) drop[i] = T(1) - keep[i];
      updated = ops::add(ops::mul(updated, Tensor<T>::from_data({k, c + 2}, std::move(keep))),
                         ops::mul(centroids, Tensor<T>::from_data({k, c + 2}, std::move(drop))));
    }
    centroids = updated;
  }
  SuperpixelAssignment<T> out;
  out.hard = hard_map(soft);
  out.soft = std::move(soft);
  out.centroids = std::move(centroids);
  return out;
}

template <typename T>
std::vector<std::size_t> hard_map(const Tensor<T>& soft) {
  if (!soft.defined() || soft.rank() != 2) throw std::invalid_argument("hard_map: expected an N x K matrix");
  const std::size_t n = soft.dim(0), k = soft.dim(1);
  std::vector<std::size_t> labels(n, 0);
  for (std::size_t j = 0; j < n; ++j) {
    const T* row = soft.data().data() + j * k;
    std::size_t best = 0;
    for (std::size_t i = 1; i < k; ++i) {
      if (row[i] > row[best]) best = i;
    }
    labels[j] = best;
  }
  return labels;
}

#define SSGRN_INSTANTIATE_SUPERPIX(T)                                                            \
  template Tensor<T> pixel_positions<T>(std::size_t, std::size_t);                              \
  template Tensor<T> init_centroids_grid(const Tensor<T>&, std::size_t);                        \
  template Tensor<T> assign_to_centroids(const Tensor<T>&, const Tensor<T>&, const SlicConfig&); \
  template SuperpixelAssignment<T> soft_assign_iterate(const Tensor<T>&, const SlicConfig&);    \
  template std::vector<std::size_t> hard_map(const Tensor<T>&);

SSGRN_INSTANTIATE_SUPERPIX(float)
SSGRN_INSTANTIATE_SUPERPIX(double)

#undef SSGRN_INSTANTIATE_SUPERPIX

}  // namespace ssgrn::superpix
