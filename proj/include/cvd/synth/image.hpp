#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace cvd {

using Rgb = std::array<std::uint8_t, 3>;

/// 8-bit interleaved RGB raster, row-major.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  Image() = default;
  Image(int w, int h, Rgb fill = {0, 0, 0});

  Rgb get(int row, int col) const;
  void set(int row, int col, Rgb c);
  bool operator==(const Image& other) const = default;
};

/// Binary PPM (P6, maxval 255).
void write_ppm(const Image& img, const std::filesystem::path& path);
Image read_ppm(const std::filesystem::path& path);

/// Circular shift of columns: out(c) = in((c + shift) mod width).
Image roll_columns(const Image& img, int shift);
/// Clockwise rotation by quarter turns (square images only for odd counts).
Image rotate_quarter_turns(const Image& img, int quarter_turns);
Image mirror_columns(const Image& img);

/// Number of pixels whose RGB triples differ.
std::int64_t pixel_mismatches(const Image& a, const Image& b);

}  // namespace cvd
