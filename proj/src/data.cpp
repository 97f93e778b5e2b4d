#include "ssgrn/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

#include "binio.hpp"
#include "ssgrn/error.hpp"
#include "ssgrn/log.hpp"

namespace ssgrn::data {

void HsiCube::validate() const {
  if (height == 0 || width == 0 || bands == 0) throw std::invalid_argument("cube extents must be positive");
  if (values.size() != height * width * bands) throw std::invalid_argument("cube payload size mismatch");
  for (float v : values) {
    if (!std::isfinite(v)) throw std::invalid_argument("cube contains a non-finite value");
  }
}

std::uint16_t LabelMap::max_label() const {
  return labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end());
}

void LabelMap::validate() const {
  if (height == 0 || width == 0) throw std::invalid_argument("label map extents must be positive");
  if (labels.size() != height * width) throw std::invalid_argument("label map payload size mismatch");
}

const char* subset_name(Subset s) {
  switch (s) {
    case Subset::train: return "train";
    case Subset::val: return "val";
    case Subset::test: return "test";
    case Subset::none: break;
  }
  return "none";
}

std::size_t SplitSpec::count(Subset s) const {
  return static_cast<std::size_t>(std::count(assignment.begin(), assignment.end(), s));
}

namespace {

std::vector<std::string> read_header(std::istream& in, const char* magic, std::size_t fields) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError(std::string("missing ") + magic + " header");
  std::istringstream ss(line);
  std::vector<std::string> tokens;
  for (std::string t; ss >> t;) tokens.push_back(t);
  if (tokens.empty() || tokens[0] != magic) throw FormatError(std::string("bad magic, expected ") + magic);
  if (tokens.size() != fields) throw FormatError(std::string("malformed ") + magic + " header");
  if (tokens[1] != "1") throw FormatError(std::string("unsupported ") + magic + " version " + tokens[1]);
  return tokens;
}

std::size_t parse_extent(const std::string& token, const char* what) {
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(token, &pos);
  } catch (const std::exception&) {
    throw FormatError(std::string("invalid ") + what + " '" + token + "'");
  }
  if (pos != token.size() || v == 0) throw FormatError(std::string("invalid ") + what + " '" + token + "'");
  return static_cast<std::size_t>(v);
}

void expect_end(std::istream& in, const char* what) {
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError(std::string("trailing bytes after ") + what);
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  return in;
}

void finish_write(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw std::runtime_error("write to '" + path.string() + "' failed");
}

// Standard normal via Box-Muller on raw mt19937_64 output, so scenes are
// identical across standard libraries.
double unit_uniform(std::mt19937_64& rng) {
  return (static_cast<double>(rng() >> 11) + 0.5) * (1.0 / 9007199254740992.0);
}

double standard_normal(std::mt19937_64& rng) {
  const double u1 = unit_uniform(rng), u2 = unit_uniform(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace

// ---- cube -------------------------------------------------------------------

void write_cube(std::ostream& out, const HsiCube& cube) {
  cube.validate();
  out << "HSICUBE 1 " << cube.height << ' ' << cube.width << ' ' << cube.bands << '\n';
  for (float v : cube.values) binio::put_f32(out, v);
}

HsiCube read_cube(std::istream& in) {
  const auto tok = read_header(in, "HSICUBE", 5);
  HsiCube cube;
  cube.height = parse_extent(tok[2], "height");
  cube.width = parse_extent(tok[3], "width");
  cube.bands = parse_extent(tok[4], "band count");
  cube.values.resize(cube.height * cube.width * cube.bands);
  for (auto& v : cube.values) {
    v = binio::get_f32(in, "cube");
    if (!std::isfinite(v)) throw FormatError("cube contains a non-finite value");
  }
  expect_end(in, "cube payload");
  return cube;
}

void save_cube(const HsiCube& cube, const std::filesystem::path& path) {
  auto out = open_out(path);
  write_cube(out, cube);
  finish_write(out, path);
}

HsiCube load_cube(const std::filesystem::path& path) {
  auto in = open_in(path);
  return read_cube(in);
}

// ---- labels -----------------------------------------------------------------

void write_labels(std::ostream& out, const LabelMap& labels) {
  labels.validate();
  out << "LABELS 1 " << labels.height << ' ' << labels.width << '\n';
  for (auto v : labels.labels) binio::put_le<std::uint16_t>(out, v);
}

LabelMap read_labels(std::istream& in) {
  const auto tok = read_header(in, "LABELS", 4);
  LabelMap map;
  map.height = parse_extent(tok[2], "height");
  map.width = parse_extent(tok[3], "width");
  map.labels.resize(map.height * map.width);
  for (auto& v : map.labels) v = binio::get_le<std::uint16_t>(in, "labels");
  expect_end(in, "label payload");
  return map;
}

void save_labels(const LabelMap& labels, const std::filesystem::path& path) {
  auto out = open_out(path);
  write_labels(out, labels);
  finish_write(out, path);
}

LabelMap load_labels(const std::filesystem::path& path) {
  auto in = open_in(path);
  return read_labels(in);
}

// ---- split ------------------------------------------------------------------

void write_split(std::ostream& out, const SplitSpec& split, const LabelMap& labels) {
  if (split.height != labels.height || split.width != labels.width) {
    throw std::invalid_argument("split and label map extents differ");
  }
  for (std::size_t r = 0; r < split.height; ++r) {
    for (std::size_t c = 0; c < split.width; ++c) {
      const Subset s = split.assignment[r * split.width + c];
      if (s == Subset::none) continue;
      out << r << ' ' << c << ' ' << labels.at(r, c) << ' ' << subset_name(s) << '\n';
    }
  }
}

SplitSpec read_split(std::istream& in, const LabelMap& labels) {
  SplitSpec split;
  split.height = labels.height;
  split.width = labels.width;
  split.assignment.assign(labels.height * labels.width, Subset::none);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::size_t r = 0, c = 0, cls = 0;
    std::string which;
    if (!(ss >> r >> c >> cls >> which)) {
      throw FormatError("split line " + std::to_string(lineno) + ": expected '<row> <col> <class> <subset>'");
    }
    if (r >= labels.height || c >= labels.width) {
      throw FormatError("split line " + std::to_string(lineno) + ": pixel outside the label map");
    }
    if (labels.at(r, c) == 0 || labels.at(r, c) != cls) {
      throw FormatError("split line " + std::to_string(lineno) + ": class does not match the label map");
    }
    Subset s = Subset::none;
    if (which == "train") s = Subset::train;
    else if (which == "val") s = Subset::val;
    else if (which == "test") s = Subset::test;
    else throw FormatError("split line " + std::to_string(lineno) + ": unknown subset '" + which + "'");
    split.assignment[r * labels.width + c] = s;
  }
  return split;
}

void save_split(const SplitSpec& split, const LabelMap& labels, const std::filesystem::path& path) {
  auto out = open_out(path);
  write_split(out, split, labels);
  finish_write(out, path);
}

SplitSpec load_split(const std::filesystem::path& path, const LabelMap& labels) {
  auto in = open_in(path);
  return read_split(in, labels);
}

std::vector<ClassCount> read_counts(std::istream& in) {
  std::vector<ClassCount> counts;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ss(line);
    unsigned long cls = 0;
    ClassCount cc;
    if (!(ss >> cls)) continue;
    if (!(ss >> cc.train >> cc.val) || cls == 0 || cls > 65535) {
      throw FormatError("counts line " + std::to_string(lineno) + ": expected '<class_id> <train> <val>'");
    }
    cc.class_id = static_cast<std::uint16_t>(cls);
    counts.push_back(cc);
  }
  return counts;
}

std::vector<ClassCount> load_counts(const std::filesystem::path& path) {
  auto in = open_in(path);
  return read_counts(in);
}

std::vector<ClassCount> default_counts(const LabelMap& labels) {
  std::vector<bool> present(static_cast<std::size_t>(labels.max_label()) + 1, false);
  for (auto v : labels.labels) present[v] = true;
  std::vector<ClassCount> counts;
  for (std::size_t c = 1; c < present.size(); ++c) {
    if (present[c]) counts.push_back({static_cast<std::uint16_t>(c), 80, 20});
  }
  return counts;
}

// ---- processing ---------------------------------------------------------------

HsiCube standardize(const HsiCube& cube) {
  cube.validate();
  HsiCube out = cube;
  const std::size_t n = cube.height * cube.width;
  for (std::size_t b = 0; b < cube.bands; ++b) {
    const float* src = cube.values.data() + b * n;
    double mean = 0;
    for (std::size_t i = 0; i < n; ++i) mean += src[i];
    mean /= static_cast<double>(n);
    double var = 0;
    for (std::size_t i = 0; i < n; ++i) var += (src[i] - mean) * (src[i] - mean);
    const double sd = std::sqrt(var / static_cast<double>(n));
    const double inv = sd > 1e-12 ? 1.0 / sd : 0.0;
    float* dst = out.values.data() + b * n;
    for (std::size_t i = 0; i < n; ++i) dst[i] = static_cast<float>((src[i] - mean) * inv);
  }
  return out;
}

SplitSpec make_split(const LabelMap& labels, std::span<const ClassCount> counts, std::uint64_t seed) {
  labels.validate();
  std::map<std::uint16_t, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < labels.labels.size(); ++i) {
    if (labels.labels[i] != 0) members[labels.labels[i]].push_back(i);
  }
  SplitSpec split;
  split.height = labels.height;
  split.width = labels.width;
  split.seed = seed;
  split.requested.assign(counts.begin(), counts.end());
  split.assignment.assign(labels.labels.size(), Subset::none);

  std::map<std::uint16_t, ClassCount> request;
  for (const auto& c : counts) {
    if (!members.count(c.class_id)) {
      throw std::invalid_argument("class " + std::to_string(c.class_id) + " is absent from the label map");
    }
    request[c.class_id] = c;
  }

  std::mt19937_64 rng(seed);
  for (auto& [cls, pixels] : members) {
    for (std::size_t i = pixels.size(); i > 1; --i) {
      std::swap(pixels[i - 1], pixels[static_cast<std::size_t>(rng() % i)]);
    }
    std::size_t train = 0, val = 0;
    if (auto it = request.find(cls); it != request.end()) {
      train = it->second.train;
      val = it->second.val;
    }
    if (train + val > pixels.size()) {
      log_warning("class " + std::to_string(cls) + " has " + std::to_string(pixels.size()) +
                  " pixels, fewer than the requested " + std::to_string(train) + " train + " +
                  std::to_string(val) + " val; clamping");
      train = std::min(train, pixels.size());
      val = std::min(val, pixels.size() - train);
    }
    for (std::size_t i = 0; i < pixels.size(); ++i) {
      split.assignment[pixels[i]] = i < train ? Subset::train : (i < train + val ? Subset::val : Subset::test);
    }
  }
  return split;
}

std::pair<HsiCube, LabelMap> synth_scene(std::size_t height, std::size_t width, std::size_t bands,
                                         std::size_t classes, double noise_sigma, std::uint64_t seed) {
  if (classes < 1 || classes > 16) throw std::invalid_argument("synth_scene: classes must be in [1, 16]");
  if (height == 0 || width == 0 || bands == 0) throw std::invalid_argument("synth_scene: extents must be positive");
  if (!(noise_sigma >= 0.0)) throw std::invalid_argument("synth_scene: noise sigma must be nonnegative");
  std::mt19937_64 rng(seed);

  // Three jittered-grid sites per class; site classes are a shuffled cycle.
  const std::size_t wanted = classes * 3;
  const auto grid_rows = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(wanted))));
  const std::size_t grid_cols = (wanted + grid_rows - 1) / grid_rows;
  const std::size_t n_sites = grid_rows * grid_cols;
  std::vector<double> sy(n_sites), sx(n_sites);
  std::vector<std::uint16_t> site_class(n_sites);
  for (std::size_t r = 0; r < grid_rows; ++r) {
    for (std::size_t c = 0; c < grid_cols; ++c) {
      const std::size_t i = r * grid_cols + c;
      sy[i] = (static_cast<double>(r) + 0.2 + 0.6 * unit_uniform(rng)) * static_cast<double>(height) /
              static_cast<double>(grid_rows);
      sx[i] = (static_cast<double>(c) + 0.2 + 0.6 * unit_uniform(rng)) * static_cast<double>(width) /
              static_cast<double>(grid_cols);
      site_class[i] = static_cast<std::uint16_t>(i % classes + 1);
    }
  }
  for (std::size_t i = n_sites; i > 1; --i) std::swap(site_class[i - 1], site_class[static_cast<std::size_t>(rng() % i)]);

  // Smooth signature: offset plus three low-frequency sinusoids over the band axis.
  std::vector<std::vector<double>> signature(classes, std::vector<double>(bands));
  for (auto& sig : signature) {
    const double offset = 0.3 + 0.4 * unit_uniform(rng);
    double amp[3], freq[3], phase[3];
    for (int k = 0; k < 3; ++k) {
      amp[k] = 0.05 + 0.15 * unit_uniform(rng);
      freq[k] = 0.3 + 1.7 * unit_uniform(rng);
      phase[k] = 2.0 * std::numbers::pi * unit_uniform(rng);
    }
    for (std::size_t b = 0; b < bands; ++b) {
      const double t = static_cast<double>(b) / static_cast<double>(std::max<std::size_t>(bands, 1));
      double v = offset;
      for (int k = 0; k < 3; ++k) v += amp[k] * std::sin(2.0 * std::numbers::pi * freq[k] * t + phase[k]);
      sig[b] = v;
    }
  }

  LabelMap labels{height, width, std::vector<std::uint16_t>(height * width)};
  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < n_sites; ++i) {
        const double dy = static_cast<double>(r) + 0.5 - sy[i], dx = static_cast<double>(c) + 0.5 - sx[i];
        const double d = dy * dy + dx * dx;
        if (d < best_d) {
          best_d = d;
          best = i;
        }
      }
      labels.labels[r * width + c] = site_class[best];
    }
  }

  HsiCube cube{height, width, bands, std::vector<float>(height * width * bands)};
  for (std::size_t p = 0; p < height * width; ++p) {
    const auto& sig = signature[labels.labels[p] - 1u];
    for (std::size_t b = 0; b < bands; ++b) {
      const double noise = noise_sigma > 0.0 ? noise_sigma * standard_normal(rng) : 0.0;
      cube.values[b * height * width + p] = static_cast<float>(sig[b] + noise);
    }
  }
  return {std::move(cube), std::move(labels)};
}

}  // namespace ssgrn::data
