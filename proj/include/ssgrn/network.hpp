#pragma once

// Backbone, branch wiring and fusion for the four model variants, plus the
// checkpoint format and complexity accounting.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>

#include "ssgrn/data.hpp"
#include "ssgrn/layers.hpp"
#include "ssgrn/sagrn.hpp"
#include "ssgrn/segrn.hpp"

namespace ssgrn {

enum class Variant { fcn, sagrn, segrn, ssgrn };

const char* variant_name(Variant v);
Variant parse_variant(const std::string& name);

struct ModelConfig {
  std::size_t in_bands = 0;
  std::size_t height = 0;  // input image extent before even-padding
  std::size_t width = 0;
  std::array<std::size_t, 3> widths{64, 128, 256};
  std::size_t descriptors = 256;           // K
  std::size_t spectral_descriptors = 256;  // M, capped at the feature channel count
  std::size_t classes = 0;
  Variant variant = Variant::ssgrn;
  superpix::SlicConfig slic{};
  std::size_t spectral_stride = 4;
  std::size_t head_hidden = 128;
  sagrn::PoolMode eval_pool = sagrn::PoolMode::soft;

  void validate() const;

  bool has_spatial() const { return variant == Variant::sagrn || variant == Variant::ssgrn; }
  bool has_spectral() const { return variant == Variant::segrn || variant == Variant::ssgrn; }

  std::size_t padded_height() const { return height + height % 2; }
  std::size_t padded_width() const { return width + width % 2; }
  std::size_t feature_height() const { return padded_height() / 2; }
  std::size_t feature_width() const { return padded_width() / 2; }
  std::size_t feature_channels() const { return widths[2]; }
  std::size_t spatial_embed() const;
  std::size_t spectral_groups() const;
  std::size_t spectral_length() const;
  std::size_t spectral_embed() const;

  /// `key=value` lines in a fixed order.
  std::string serialize() const;
  /// Inverse of serialize(); unknown keys are an error.
  static ModelConfig parse(const std::map<std::string, std::string>& kv);
};

struct ForwardOptions {
  sagrn::PoolMode pool = sagrn::PoolMode::soft;
  ops::InnerProductCounter* counter = nullptr;
};

template <typename T>
struct ForwardResult {
  Tensor<T> feature;  // backbone F
  std::optional<sagrn::SpatialOutput<T>> spatial;
  std::optional<segrn::SpectralOutput<T>> spectral;
  Tensor<T> fused;
  std::map<std::string, Tensor<T>> logits;  // fcn | sa_main | sa_aux | se | fused
  Variant variant = Variant::ssgrn;

  /// Logits of the head used for prediction by this variant.
  const Tensor<T>& prediction_logits() const;
};

template <typename T>
struct ComponentLosses {
  std::optional<Tensor<T>> sa;     // main + aux
  std::optional<Tensor<T>> se;
  std::optional<Tensor<T>> fused;
  std::optional<Tensor<T>> fcn;
};

/// Holds configuration, named parameters and the iteration counter. The
/// float instantiation is the training/checkpoint type; double is used for
/// gradient checks.
template <typename T>
class Model {
 public:
  Model() = default;
  Model(ModelConfig config, std::uint64_t seed);

  template <typename U>
  static Model cast_from(const Model<U>& other) {
    Model m;
    m.config = other.config;
    m.iteration = other.iteration;
    for (const auto& [name, t] : other.params.items()) {
      Buffer<T> values(t.values().begin(), t.values().end());
      m.params.add(name, Tensor<T>::from_data(t.shape(), std::move(values), true));
    }
    return m;
  }

  /// image: C_in x padded_height x padded_width.
  ForwardResult<T> forward(const Tensor<T>& image, const ForwardOptions& options = {}) const;

  Tensor<T> backbone_forward(const Tensor<T>& image) const;

  ModelConfig config;
  ParamStore<T> params;
  std::uint64_t iteration = 0;
};

using ModelState = Model<float>;

/// F_sa_main + F_se + F.
template <typename T>
Tensor<T> fuse(const Tensor<T>& spatial, const Tensor<T>& spectral, const Tensor<T>& feature);

/// Per-head masked cross entropies for the variant; targets are 0-based
/// class indices per padded pixel, -1 to ignore.
template <typename T>
ComponentLosses<T> compute_losses(const ForwardResult<T>& result, std::span<const int> targets);

/// ssgrn: sa + se + fused; sagrn: sa; segrn: se; fcn: fcn.
template <typename T>
Tensor<T> total_loss(Variant variant, const ComponentLosses<T>& losses);

/// Standardized cube as C x H x W, zero-padded at the bottom/right to even extents.
template <typename T>
Tensor<T> prepare_input(const data::HsiCube& cube);

/// Per-pixel argmax class (1-based) on the unpadded image grid.
template <typename T>
std::vector<std::uint16_t> predict_labels(const Model<T>& model, const data::HsiCube& cube,
                                          const ForwardOptions& options);

std::size_t count_params(const ModelState& state);

/// Inner products evaluated by spatial attention: K^2 (adjacency) + N K (reprojection).
std::uint64_t count_attention_ops(std::uint64_t k, std::uint64_t n);

// ---- checkpoint ---------------------------------------------------------------

void write_checkpoint(std::ostream& out, const ModelState& state);
ModelState read_checkpoint(std::istream& in);
void save_checkpoint(const ModelState& state, const std::filesystem::path& path);
ModelState load_checkpoint(const std::filesystem::path& path);

}  // namespace ssgrn
