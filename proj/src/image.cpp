#include "cvd/synth/image.hpp"

#include <cctype>
#include <fstream>
#include <stdexcept>

namespace cvd {

Image::Image(int w, int h, Rgb fill) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3) {
  if (w < 0 || h < 0) throw std::invalid_argument("Image: negative size");
  for (std::size_t i = 0; i < rgb.size(); i += 3) {
    rgb[i] = fill[0];
    rgb[i + 1] = fill[1];
    rgb[i + 2] = fill[2];
  }
}

Rgb Image::get(int row, int col) const {
  const auto i = (static_cast<std::size_t>(row) * width + col) * 3;
  return {rgb[i], rgb[i + 1], rgb[i + 2]};
}

void Image::set(int row, int col, Rgb c) {
  const auto i = (static_cast<std::size_t>(row) * width + col) * 3;
  rgb[i] = c[0];
  rgb[i + 1] = c[1];
  rgb[i + 2] = c[2];
}

void write_ppm(const Image& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

namespace {

int read_header_int(std::istream& in, const std::string& name) {
  int c = in.peek();
  while (c != EOF) {
    if (std::isspace(c)) {
      in.get();
    } else if (c == '#') {
      std::string skip;
      std::getline(in, skip);
    } else {
      break;
    }
    c = in.peek();
  }
  int value = -1;
  if (!(in >> value)) throw std::runtime_error("malformed PPM header in " + name);
  return value;
}

}  // namespace

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open raster " + path.string());
  std::string magic(2, '\0');
  in.read(magic.data(), 2);
  if (magic != "P6") throw std::runtime_error("not a binary PPM (P6): " + path.string());
  const int w = read_header_int(in, path.string());
  const int h = read_header_int(in, path.string());
  const int maxval = read_header_int(in, path.string());
  if (w <= 0 || h <= 0 || maxval != 255) throw std::runtime_error("unsupported PPM geometry in " + path.string());
  in.get();  // single whitespace before the raster
  Image img(w, h);
  in.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.rgb.size())) {
    throw std::runtime_error("truncated PPM raster in " + path.string());
  }
  return img;
}

Image roll_columns(const Image& img, int shift) {
  Image out(img.width, img.height);
  if (img.width == 0) return out;
  const int s = ((shift % img.width) + img.width) % img.width;
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c) out.set(r, c, img.get(r, (c + s) % img.width));
  return out;
}

Image rotate_quarter_turns(const Image& img, int quarter_turns) {
  const int q = ((quarter_turns % 4) + 4) % 4;
  if (q % 2 == 1 && img.width != img.height) throw std::invalid_argument("rotate_quarter_turns: image not square");
  Image out(img.width, img.height);
  const int n = img.width, m = img.height;
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < n; ++c) {
      int sr = r, sc = c;
      // Clockwise: output (r, c) reads input (n-1-c, r) for one quarter turn.
      if (q == 1) {
        sr = n - 1 - c;
        sc = r;
      } else if (q == 2) {
        sr = m - 1 - r;
        sc = n - 1 - c;
      } else if (q == 3) {
        sr = c;
        sc = m - 1 - r;
      }
      out.set(r, c, img.get(sr, sc));
    }
  return out;
}

Image mirror_columns(const Image& img) {
  Image out(img.width, img.height);
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c) out.set(r, c, img.get(r, img.width - 1 - c));
  return out;
}

std::int64_t pixel_mismatches(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height) return std::int64_t{a.width} * a.height + 1;
  std::int64_t bad = 0;
  for (std::size_t i = 0; i < a.rgb.size(); i += 3) {
    bad += a.rgb[i] != b.rgb[i] || a.rgb[i + 1] != b.rgb[i + 1] || a.rgb[i + 2] != b.rgb[i + 2];
  }
  return bad;
}

}  // namespace cvd
