#include "ssgrn/pixmap.hpp"

#include <algorithm>
#include <fstream>
#include <ostream>
#include <stdexcept>
#include <string>

namespace ssgrn::pixmap {

const std::array<Rgb, 16> kPalette{{
    {230, 25, 75},   {60, 180, 75},   {255, 225, 25},  {0, 130, 200},
    {245, 130, 48},  {145, 30, 180},  {70, 240, 240},  {240, 50, 230},
    {210, 245, 60},  {250, 190, 212}, {0, 128, 128},   {220, 190, 255},
    {170, 110, 40},  {255, 250, 200}, {128, 0, 0},     {170, 255, 195},
}};

Rgb class_color(std::uint16_t label) {
  if (label == 0) return {0, 0, 0};
  return kPalette[(label - 1u) % kPalette.size()];
}

namespace {

void check_extent(std::size_t height, std::size_t width, std::size_t n) {
  if (height == 0 || width == 0) throw std::invalid_argument("pixmap extents must be positive");
  if (n != height * width) {
    throw std::invalid_argument("pixmap expects " + std::to_string(height * width) + " samples, got " +
                                std::to_string(n));
  }
}

template <typename Fn>
void save_with(const std::filesystem::path& path, Fn&& fn) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  fn(out);
  out.flush();
  if (!out) throw std::runtime_error("write to '" + path.string() + "' failed");
}

}  // namespace

void write_ppm(std::ostream& out, std::size_t height, std::size_t width, std::span<const std::uint16_t> labels) {
  check_extent(height, width, labels.size());
  out << "P6 " << width << ' ' << height << " 255\n";
  for (auto l : labels) {
    const auto c = class_color(l);
    out.write(reinterpret_cast<const char*>(c.data()), 3);
  }
}

void save_ppm(const std::filesystem::path& path, std::size_t height, std::size_t width,
              std::span<const std::uint16_t> labels) {
  save_with(path, [&](std::ostream& out) { write_ppm(out, height, width, labels); });
}

void write_pgm(std::ostream& out, std::size_t height, std::size_t width, std::span<const std::uint16_t> values) {
  check_extent(height, width, values.size());
  const unsigned maxval = std::max<unsigned>(1, *std::max_element(values.begin(), values.end()));
  out << "P5 " << width << ' ' << height << ' ' << maxval << '\n';
  for (auto v : values) {
    if (maxval < 256) {
      out.put(static_cast<char>(v));
    } else {
      out.put(static_cast<char>(v >> 8));
      out.put(static_cast<char>(v & 0xFF));
    }
  }
}

void save_pgm(const std::filesystem::path& path, std::size_t height, std::size_t width,
              std::span<const std::uint16_t> values) {
  save_with(path, [&](std::ostream& out) { write_pgm(out, height, width, values); });
}

}  // namespace ssgrn::pixmap
