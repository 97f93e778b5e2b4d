#pragma once

// Binary netpbm writers for classification maps (P6) and index maps (P5).

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>

namespace ssgrn::pixmap {

using Rgb = std::array<std::uint8_t, 3>;

/// Class c (1-based) is drawn as kPalette[(c - 1) % 16]; label 0 is black.
extern const std::array<Rgb, 16> kPalette;

Rgb class_color(std::uint16_t label);

/// "P6 <W> <H> 255\n" followed by RGB triples, row-major.
void write_ppm(std::ostream& out, std::size_t height, std::size_t width, std::span<const std::uint16_t> labels);
void save_ppm(const std::filesystem::path& path, std::size_t height, std::size_t width,
              std::span<const std::uint16_t> labels);

/// "P5 <W> <H> <maxval>\n"; one byte per sample when maxval < 256, else two
/// bytes big-endian as the format requires. maxval = max(1, max sample).
void write_pgm(std::ostream& out, std::size_t height, std::size_t width, std::span<const std::uint16_t> values);
void save_pgm(const std::filesystem::path& path, std::size_t height, std::size_t width,
              std::span<const std::uint16_t> values);

}  // namespace ssgrn::pixmap
