#pragma once

// Hyperspectral cube, label map and split storage; per-class random splits;
// synthetic scenes for desk-scale runs.
//
// File formats (little-endian payloads):
//   cube   "HSICUBE 1 <H> <W> <C>\n" + C*H*W f32, band-major then row-major
//   labels "LABELS 1 <H> <W>\n"      + H*W u16, 0 = unlabeled
//   split  text, one "<row> <col> <class> <train|val|test>" line per pixel
//   counts text, one "<class_id> <train> <val>" line per class

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace ssgrn::data {

struct HsiCube {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t bands = 0;
  std::vector<float> values;  // bands x height x width

  float at(std::size_t band, std::size_t row, std::size_t col) const {
    return values[(band * height + row) * width + col];
  }
  void validate() const;
};

struct LabelMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint16_t> labels;  // row-major

  std::uint16_t at(std::size_t row, std::size_t col) const { return labels[row * width + col]; }
  std::uint16_t max_label() const;
  void validate() const;
};

enum class Subset : std::uint8_t { none, train, val, test };

const char* subset_name(Subset s);

struct ClassCount {
  std::uint16_t class_id = 0;
  std::size_t train = 0;
  std::size_t val = 0;
};

struct SplitSpec {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<Subset> assignment;  // row-major
  std::uint64_t seed = 0;
  std::vector<ClassCount> requested;

  std::size_t count(Subset s) const;
};

// ---- I/O -------------------------------------------------------------------

void write_cube(std::ostream& out, const HsiCube& cube);
HsiCube read_cube(std::istream& in);
void save_cube(const HsiCube& cube, const std::filesystem::path& path);
HsiCube load_cube(const std::filesystem::path& path);

void write_labels(std::ostream& out, const LabelMap& labels);
LabelMap read_labels(std::istream& in);
void save_labels(const LabelMap& labels, const std::filesystem::path& path);
LabelMap load_labels(const std::filesystem::path& path);

/// Pixels with Subset::none are not written.
void write_split(std::ostream& out, const SplitSpec& split, const LabelMap& labels);
SplitSpec read_split(std::istream& in, const LabelMap& labels);
void save_split(const SplitSpec& split, const LabelMap& labels, const std::filesystem::path& path);
SplitSpec load_split(const std::filesystem::path& path, const LabelMap& labels);

std::vector<ClassCount> read_counts(std::istream& in);
std::vector<ClassCount> load_counts(const std::filesystem::path& path);
/// (80 train, 20 val) for every class present in `labels`.
std::vector<ClassCount> default_counts(const LabelMap& labels);

// ---- processing ------------------------------------------------------------

/// Per-band zero mean, unit (population) variance; bands whose standard
/// deviation is below 1e-12 become all zeros.
HsiCube standardize(const HsiCube& cube);

/// Per class, in ascending class order: seeded Fisher-Yates shuffle of the
/// class's pixels in row-major order; the first `train` go to train, the
/// next `val` to val, the rest to test. Requests above the class population
/// are clamped with a warning. Classes without a request go entirely to test.
SplitSpec make_split(const LabelMap& labels, std::span<const ClassCount> counts, std::uint64_t seed);

/// Jittered-grid Voronoi label map, one smooth random spectral signature per
/// class, pixel = signature + N(0, noise_sigma^2). Every pixel is labeled.
std::pair<HsiCube, LabelMap> synth_scene(std::size_t height, std::size_t width, std::size_t bands,
                                         std::size_t classes, double noise_sigma, std::uint64_t seed);

}  // namespace ssgrn::data
