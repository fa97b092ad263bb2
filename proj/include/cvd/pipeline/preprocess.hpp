#pragma once

#include "cvd/core/tensor.hpp"
#include "cvd/synth/image.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

namespace cvd {

/// Planar float copy of an RGB raster, values in [0, 255].
struct Planar {
  int width = 0, height = 0;
  std::vector<double> data;  // [3, height, width]

  double& at(int ch, int r, int c) { return data[(static_cast<std::size_t>(ch) * height + r) * width + c]; }
  double at(int ch, int r, int c) const { return data[(static_cast<std::size_t>(ch) * height + r) * width + c]; }
};

inline Planar to_planar(const Image& img, int row_begin = 0, int row_end = -1) {
  if (row_end < 0) row_end = img.height;
  Planar p{img.width, row_end - row_begin, {}};
  p.data.resize(3 * static_cast<std::size_t>(p.width) * p.height);
  for (int r = 0; r < p.height; ++r)
    for (int c = 0; c < p.width; ++c) {
      const Rgb px = img.get(r + row_begin, c);
      for (int ch = 0; ch < 3; ++ch) p.at(ch, r, c) = px[static_cast<std::size_t>(ch)];
    }
  return p;
}

/// Bilinear resampling with half-pixel centers and edge clamping.
inline Planar resize_bilinear(const Planar& src, int out_h, int out_w) {
  if (src.width == out_w && src.height == out_h) return src;
  if (src.width < 1 || src.height < 1 || out_w < 1 || out_h < 1) throw std::invalid_argument("resize_bilinear: empty image");
  Planar out{out_w, out_h, std::vector<double>(3 * static_cast<std::size_t>(out_w) * out_h)};
  const double sy = static_cast<double>(src.height) / out_h, sx = static_cast<double>(src.width) / out_w;
  auto axis = [](double pos, int n, int& i0, int& i1, double& f) {
    pos = std::clamp(pos, 0.0, static_cast<double>(n - 1));
    i0 = static_cast<int>(std::floor(pos));
    i1 = std::min(i0 + 1, n - 1);
    f = pos - i0;
  };
  for (int r = 0; r < out_h; ++r) {
    int y0, y1;
    double fy;
    axis((r + 0.5) * sy - 0.5, src.height, y0, y1, fy);
    for (int c = 0; c < out_w; ++c) {
      int x0, x1;
      double fx;
      axis((c + 0.5) * sx - 0.5, src.width, x0, x1, fx);
      for (int ch = 0; ch < 3; ++ch) {
        const double top = src.at(ch, y0, x0) * (1 - fx) + src.at(ch, y0, x1) * fx;
        const double bot = src.at(ch, y1, x0) * (1 - fx) + src.at(ch, y1, x1) * fx;
        out.at(ch, r, c) = top * (1 - fy) + bot * fy;
      }
    }
  }
  return out;
}

/// [3,H,W] tensor with values v / 127.5 - 1.
template <typename Scalar>
Tensor<Scalar> to_tensor(const Planar& p) {
  Tensor<Scalar> t(Shape{3, p.height, p.width});
  for (std::size_t i = 0; i < p.data.size(); ++i) {
    t[static_cast<Index>(i)] = static_cast<Scalar>(p.data[i] / 127.5 - 1.0);
  }
  return t;
}

/// Street: crop crop_frac of the rows at top and bottom, resize to H x 2H.
template <typename Scalar>
Tensor<Scalar> preprocess_street(const Image& street, int size, double crop_frac) {
  if (street.width < 1 || street.height < 1) throw std::invalid_argument("preprocess: empty panorama");
  const int crop = static_cast<int>(std::lround(street.height * crop_frac));
  if (2 * crop >= street.height) throw std::invalid_argument("preprocess: crop removes the whole panorama");
  return to_tensor<Scalar>(resize_bilinear(to_planar(street, crop, street.height - crop), size, 2 * size));
}

template <typename Scalar>
Tensor<Scalar> preprocess_sat(const Image& sat, int size) {
  if (sat.width < 1 || sat.height < 1) throw std::invalid_argument("preprocess: empty overhead raster");
  return to_tensor<Scalar>(resize_bilinear(to_planar(sat), size, size));
}

template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> preprocess_pair(const Image& street, const Image& sat, int size,
                                                          double crop_frac) {
  return {preprocess_street<Scalar>(street, size, crop_frac), preprocess_sat<Scalar>(sat, size)};
}

}  // namespace cvd
