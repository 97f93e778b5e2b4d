#include "ssgrn/network.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "binio.hpp"
#include "ssgrn/loss.hpp"

namespace ssgrn {

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::fcn: return "fcn";
    case Variant::sagrn: return "sagrn";
    case Variant::segrn: return "segrn";
    case Variant::ssgrn: return "ssgrn";
  }
  return "?";
}

Variant parse_variant(const std::string& name) {
  if (name == "fcn") return Variant::fcn;
  if (name == "sagrn") return Variant::sagrn;
  if (name == "segrn") return Variant::segrn;
  if (name == "ssgrn") return Variant::ssgrn;
  throw std::invalid_argument("unknown model variant '" + name + "' (expected fcn|sagrn|segrn|ssgrn)");
}

// ---- config -----------------------------------------------------------------

void ModelConfig::validate() const {
  if (in_bands == 0) throw std::invalid_argument("model: in_bands must be positive");
  if (height == 0 || width == 0) throw std::invalid_argument("model: image extents must be positive");
  if (height < 2 || width < 2) throw std::invalid_argument("model: image must be at least 2x2");
  for (auto w : widths) {
    if (w == 0) throw std::invalid_argument("model: channel widths must be positive");
  }
  if (classes == 0) throw std::invalid_argument("model: class count must be positive");
  if (head_hidden == 0) throw std::invalid_argument("model: head width must be positive");
  if (has_spatial()) {
    slic.validate();
    if (descriptors == 0 || descriptors > feature_height() * feature_width()) {
      throw std::invalid_argument("model: descriptor count " + std::to_string(descriptors) +
                                  " must be in [1, " + std::to_string(feature_height() * feature_width()) + "]");
    }
  }
  if (has_spectral()) {
    if (spectral_descriptors == 0) throw std::invalid_argument("model: spectral descriptor count must be positive");
    if (spectral_stride == 0) throw std::invalid_argument("model: spectral stride must be positive");
  }
}

std::size_t ModelConfig::spatial_embed() const { return std::max<std::size_t>(1, feature_channels() / 4); }

std::size_t ModelConfig::spectral_groups() const { return std::min(spectral_descriptors, feature_channels()); }

std::size_t ModelConfig::spectral_length() const {
  return segrn::descriptor_length(feature_height(), feature_width(), spectral_stride);
}

std::size_t ModelConfig::spectral_embed() const { return std::max<std::size_t>(1, spectral_length() / 4); }

namespace {

std::string fmt_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw std::invalid_argument("config key '" + key + "': expected an unsigned integer, got '" + v + "'");
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw std::invalid_argument("config key '" + key + "': expected a number, got '" + v + "'");
  }
  return out;
}

}  // namespace

std::string ModelConfig::serialize() const {
  std::ostringstream os;
  os << "variant=" << variant_name(variant) << '\n'
     << "in_bands=" << in_bands << '\n'
     << "height=" << height << '\n'
     << "width=" << width << '\n'
     << "widths=" << widths[0] << ',' << widths[1] << ',' << widths[2] << '\n'
     << "classes=" << classes << '\n'
     << "descriptors=" << descriptors << '\n'
     << "spectral_descriptors=" << spectral_descriptors << '\n'
     << "spectral_stride=" << spectral_stride << '\n'
     << "head_hidden=" << head_hidden << '\n'
     << "slic_iters=" << slic.iters << '\n'
     << "slic_compactness=" << fmt_double(slic.compactness) << '\n'
     << "slic_temperature=" << fmt_double(slic.temperature) << '\n'
     << "eval_pool=" << (eval_pool == sagrn::PoolMode::hard ? "hard" : "soft") << '\n';
  return os.str();
}

ModelConfig ModelConfig::parse(const std::map<std::string, std::string>& kv) {
  ModelConfig c;
  for (const auto& [key, value] : kv) {
    if (key == "variant") c.variant = parse_variant(value);
    else if (key == "in_bands") c.in_bands = to_size(key, value);
    else if (key == "height") c.height = to_size(key, value);
    else if (key == "width") c.width = to_size(key, value);
    else if (key == "widths") {
      std::istringstream ss(value);
      std::string part;
      std::size_t i = 0;
      while (std::getline(ss, part, ',')) {
        if (i >= 3) throw std::invalid_argument("config key 'widths': expected three values");
        c.widths[i++] = to_size(key, part);
      }
      if (i != 3) throw std::invalid_argument("config key 'widths': expected three values");
    } else if (key == "classes") c.classes = to_size(key, value);
    else if (key == "descriptors") c.descriptors = to_size(key, value);
    else if (key == "spectral_descriptors") c.spectral_descriptors = to_size(key, value);
    else if (key == "spectral_stride") c.spectral_stride = to_size(key, value);
    else if (key == "head_hidden") c.head_hidden = to_size(key, value);
    else if (key == "slic_iters") c.slic.iters = to_size(key, value);
    else if (key == "slic_compactness") c.slic.compactness = to_double(key, value);
    else if (key == "slic_temperature") c.slic.temperature = to_double(key, value);
    else if (key == "eval_pool") {
      if (value == "soft") c.eval_pool = sagrn::PoolMode::soft;
      else if (value == "hard") c.eval_pool = sagrn::PoolMode::hard;
      else throw std::invalid_argument("config key 'eval_pool': expected soft|hard");
    } else {
      throw std::invalid_argument("unknown model config key '" + key + "'");
    }
  }
  c.slic.num_superpixels = c.descriptors;
  return c;
}

// ---- model --------------------------------------------------------------------

template <typename T>
Model<T>::Model(ModelConfig cfg, std::uint64_t seed) : config(std::move(cfg)) {
  config.slic.num_superpixels = config.descriptors;
  config.validate();
  std::mt19937_64 rng(seed);
  const auto& w = config.widths;
  declare_conv(params, "backbone.block1.conv", config.in_bands, w[0], 3, rng);
  declare_group_norm(params, "backbone.block1.gn", w[0]);
  declare_conv(params, "backbone.block2.conv", w[0], w[1], 3, rng);
  declare_group_norm(params, "backbone.block2.gn", w[1]);
  declare_conv(params, "backbone.block3.conv", w[1], w[2], 3, rng);
  declare_group_norm(params, "backbone.block3.gn", w[2]);

  const sagrn::HeadDims head{config.feature_channels(), config.head_hidden, config.classes};
  if (config.variant == Variant::fcn) sagrn::declare_head(params, "head.fcn", head, rng);
  if (config.has_spatial()) {
    ProjectionSet<T>::declare(params, "sagrn", config.feature_channels(), config.spatial_embed(), rng);
    sagrn::declare_head(params, "head.sa_main", head, rng);
    sagrn::declare_head(params, "head.sa_aux", head, rng);
  }
  if (config.has_spectral()) {
    ProjectionSet<T>::declare(params, "segrn", config.spectral_length(), config.spectral_embed(), rng);
    sagrn::declare_head(params, "head.se", head, rng);
  }
  if (config.variant == Variant::ssgrn) sagrn::declare_head(params, "head.fused", head, rng);
}

template <typename T>
Tensor<T> Model<T>::backbone_forward(const Tensor<T>& image) const {
  if (image.rank() != 3 || image.dim(0) != config.in_bands) {
    throw ShapeError("backbone: expected " + std::to_string(config.in_bands) + " input bands, got " +
                     shape_str(image.shape()));
  }
  const ops::Conv2dParams same{.stride = 1, .padding = 1, .dilation = 1};
  auto x = ops::relu(apply_group_norm(params, "backbone.block1.gn", apply_conv(params, "backbone.block1.conv", image, same)));
  x = ops::max_pool2d(x, 2, 2);
  x = ops::relu(apply_group_norm(params, "backbone.block2.gn", apply_conv(params, "backbone.block2.conv", x, same)));
  x = ops::relu(apply_group_norm(params, "backbone.block3.gn", apply_conv(params, "backbone.block3.conv", x, same)));
  return x;
}

template <typename T>
ForwardResult<T> Model<T>::forward(const Tensor<T>& image, const ForwardOptions& options) const {
  const std::size_t oh = config.padded_height(), ow = config.padded_width();
  if (image.rank() != 3 || image.dim(1) != oh || image.dim(2) != ow) {
    throw ShapeError("model expects a " + std::to_string(config.in_bands) + "x" + std::to_string(oh) + "x" +
                     std::to_string(ow) + " input, got " + shape_str(image.shape()));
  }
  ForwardResult<T> r;
  r.variant = config.variant;
  r.feature = backbone_forward(image);
  if (config.variant == Variant::fcn) r.logits["fcn"] = sagrn::head_delta(params, "head.fcn", r.feature, oh, ow);
  if (config.has_spatial()) {
    r.spatial = sagrn::spatial_reasoning(r.feature, ProjectionSet<T>::bind(params, "sagrn"), config.slic,
                                         options.pool, options.counter);
    r.logits["sa_main"] = sagrn::head_delta(params, "head.sa_main", r.spatial->reprojection.feature, oh, ow);
    r.logits["sa_aux"] = sagrn::aux_head(params, "head.sa_aux", r.feature, oh, ow);
  }
  if (config.has_spectral()) {
    r.spectral = segrn::spectral_reasoning(r.feature, ProjectionSet<T>::bind(params, "segrn"),
                                           config.spectral_groups(), config.spectral_stride);
    r.logits["se"] = sagrn::head_delta(params, "head.se", r.spectral->feature, oh, ow);
  }
  if (config.variant == Variant::ssgrn) {
    r.fused = fuse(r.spatial->reprojection.feature, r.spectral->feature, r.feature);
    r.logits["fused"] = sagrn::head_delta(params, "head.fused", r.fused, oh, ow);
  }
  return r;
}

template <typename T>
const Tensor<T>& ForwardResult<T>::prediction_logits() const {
  switch (variant) {
    case Variant::fcn: return logits.at("fcn");
    case Variant::sagrn: return logits.at("sa_main");
    case Variant::segrn: return logits.at("se");
    case Variant::ssgrn: return logits.at("fused");
  }
  throw std::logic_error("unknown variant");
}

template <typename T>
Tensor<T> fuse(const Tensor<T>& spatial, const Tensor<T>& spectral, const Tensor<T>& feature) {
  if (spatial.shape() != feature.shape() || spectral.shape() != feature.shape()) {
    throw ShapeError("fuse: branch outputs must share the backbone feature shape");
  }
  return ops::add(ops::add(spatial, spectral), feature);
}

template <typename T>
ComponentLosses<T> compute_losses(const ForwardResult<T>& result, std::span<const int> targets) {
  ComponentLosses<T> l;
  const auto has = [&](const char* k) { return result.logits.count(k) != 0; };
  if (has("fcn")) l.fcn = masked_cross_entropy(result.logits.at("fcn"), targets);
  if (has("sa_main") && has("sa_aux")) {
    l.sa = sagrn::sagrn_loss(result.logits.at("sa_main"), result.logits.at("sa_aux"), targets);
  }
  if (has("se")) l.se = segrn::segrn_loss(result.logits.at("se"), targets);
  if (has("fused")) l.fused = masked_cross_entropy(result.logits.at("fused"), targets);
  return l;
}

template <typename T>
Tensor<T> total_loss(Variant variant, const ComponentLosses<T>& losses) {
  const auto need = [](const std::optional<Tensor<T>>& t, const char* what) -> const Tensor<T>& {
    if (!t) throw std::invalid_argument(std::string("total_loss: missing ") + what + " loss");
    return *t;
  };
  switch (variant) {
    case Variant::fcn: return need(losses.fcn, "fcn");
    case Variant::sagrn: return need(losses.sa, "spatial");
    case Variant::segrn: return need(losses.se, "spectral");
    case Variant::ssgrn:
      return ops::add(ops::add(need(losses.sa, "spatial"), need(losses.se, "spectral")), need(losses.fused, "fused"));
  }
  throw std::logic_error("unknown variant");
}

template <typename T>
Tensor<T> prepare_input(const data::HsiCube& cube) {
  const auto std_cube = data::standardize(cube);
  Buffer<T> values(std_cube.values.begin(), std_cube.values.end());
  auto t = Tensor<T>::from_data({cube.bands, cube.height, cube.width}, std::move(values));
  if (cube.height % 2 || cube.width % 2) t = ops::pad2d(t, cube.height % 2, cube.width % 2, ops::PadMode::zero);
  return t;
}

template <typename T>
std::vector<std::uint16_t> predict_labels(const Model<T>& model, const data::HsiCube& cube,
                                          const ForwardOptions& options) {
  if (cube.bands != model.config.in_bands || cube.height != model.config.height ||
      cube.width != model.config.width) {
    throw std::invalid_argument("cube is " + std::to_string(cube.height) + "x" + std::to_string(cube.width) + "x" +
                                std::to_string(cube.bands) + " but the model was built for " +
                                std::to_string(model.config.height) + "x" + std::to_string(model.config.width) +
                                "x" + std::to_string(model.config.in_bands));
  }
  NoGradGuard no_grad;
  const auto result = model.forward(prepare_input<T>(cube), options);
  const auto& logits = result.prediction_logits();
  const std::size_t c = logits.dim(0), ph = logits.dim(1), pw = logits.dim(2);
  std::vector<std::uint16_t> out(cube.height * cube.width);
  for (std::size_t r = 0; r < cube.height; ++r) {
    for (std::size_t col = 0; col < cube.width; ++col) {
      std::size_t best = 0;
      for (std::size_t k = 1; k < c; ++k) {
        if (logits.data()[(k * ph + r) * pw + col] > logits.data()[(best * ph + r) * pw + col]) best = k;
      }
      out[r * cube.width + col] = static_cast<std::uint16_t>(best + 1);
    }
  }
  return out;
}

std::size_t count_params(const ModelState& state) {
  std::size_t n = 0;
  for (const auto& [name, t] : state.params.items()) n += t.numel();
  return n;
}

std::uint64_t count_attention_ops(std::uint64_t k, std::uint64_t n) { return k * k + n * k; }

// ---- checkpoint ---------------------------------------------------------------

namespace {
constexpr const char* kCheckpointMagic = "SSGRNCKPT 1";
}

void write_checkpoint(std::ostream& out, const ModelState& state) {
  out << kCheckpointMagic << '\n' << state.config.serialize() << "iteration=" << state.iteration << "\n\n";
  out << state.params.size() << '\n';
  for (const auto& [name, t] : state.params.items()) {
    if (name.size() > 0xFFFF) throw std::invalid_argument("parameter name too long: " + name);
    binio::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    out.put(static_cast<char>(t.rank()));
    for (auto e : t.shape()) binio::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e));
    for (float v : t.data()) binio::put_f32(out, v);
  }
}

ModelState read_checkpoint(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kCheckpointMagic) throw FormatError("bad checkpoint magic");
  std::map<std::string, std::string> kv;
  std::uint64_t iteration = 0;
  bool terminated = false;
  while (std::getline(in, line)) {
    if (line.empty()) {
      terminated = true;
      break;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("checkpoint config line without '=': " + line);
    const auto key = line.substr(0, eq), value = line.substr(eq + 1);
    if (key == "iteration") {
      iteration = to_size(key, value);
    } else {
      kv[key] = value;
    }
  }
  if (!terminated) throw FormatError("truncated checkpoint config block");

  ModelConfig config;
  try {
    config = ModelConfig::parse(kv);
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("checkpoint config: ") + e.what());
  }
  ModelState state(config, 0);
  state.iteration = iteration;

  if (!std::getline(in, line)) throw FormatError("truncated checkpoint: missing parameter count");
  std::size_t count = 0;
  try {
    count = to_size("parameter count", line);
  } catch (const std::invalid_argument& e) {
    throw FormatError(e.what());
  }
  if (count != state.params.size()) {
    throw FormatError("checkpoint holds " + std::to_string(count) + " parameters, configuration expects " +
                      std::to_string(state.params.size()));
  }
  for (std::size_t i = 0; i < count; ++i) {
    const auto len = binio::get_le<std::uint16_t>(in, "parameter name length");
    std::string name(len, '\0');
    in.read(name.data(), len);
    if (in.gcount() != len) throw FormatError("truncated payload while reading parameter name");
    if (!state.params.contains(name)) throw FormatError("unexpected parameter '" + name + "'");
    auto& t = state.params.get(name);
    const int rank = in.get();
    if (rank == std::char_traits<char>::eof()) throw FormatError("truncated payload while reading rank");
    Shape shape;
    for (int r = 0; r < rank; ++r) shape.push_back(binio::get_le<std::uint32_t>(in, "extent"));
    if (shape != t.shape()) {
      throw FormatError("parameter '" + name + "' has shape " + shape_str(shape) + ", expected " +
                        shape_str(t.shape()));
    }
    for (auto& v : t.data()) {
      v = binio::get_f32(in, "parameter payload");
      if (!std::isfinite(v)) throw FormatError("parameter '" + name + "' holds a non-finite value");
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after checkpoint");
  return state;
}

void save_checkpoint(const ModelState& state, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  write_checkpoint(out, state);
  out.flush();
  if (!out) throw std::runtime_error("write to '" + path.string() + "' failed");
}

ModelState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  return read_checkpoint(in);
}

#define SSGRN_INSTANTIATE_NETWORK(T)                                                                  \
  template class Model<T>;                                                                            \
  template struct ForwardResult<T>;                                                                   \
  template Tensor<T> fuse(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                      \
  template ComponentLosses<T> compute_losses(const ForwardResult<T>&, std::span<const int>);          \
  template Tensor<T> total_loss(Variant, const ComponentLosses<T>&);                                  \
  template Tensor<T> prepare_input<T>(const data::HsiCube&);                                          \
  template std::vector<std::uint16_t> predict_labels(const Model<T>&, const data::HsiCube&,           \
                                                     const ForwardOptions&);

SSGRN_INSTANTIATE_NETWORK(float)
SSGRN_INSTANTIATE_NETWORK(double)

#undef SSGRN_INSTANTIATE_NETWORK

}  // namespace ssgrn
