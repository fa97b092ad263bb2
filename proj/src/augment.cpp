#include "cvd/pipeline/augment.hpp"

#include "cvd/core/random.hpp"
#include "cvd/pipeline/config.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cvd {

ImagePair aug_sync_flip(const Image& street, const Image& sat, std::mt19937_64& rng, double p) {
  if (uniform01(rng) < p) return {mirror_columns(street), mirror_columns(sat)};
  return {street, sat};
}

ImagePair sync_rotate(const Image& street, const Image& sat, int quarter_turns) {
  if (street.width % 4 != 0) throw std::invalid_argument("sync_rotate: panorama width must be divisible by 4");
  const int q = ((quarter_turns % 4) + 4) % 4;
  return {roll_columns(street, q * street.width / 4), rotate_quarter_turns(sat, -q)};
}

ImagePair aug_sync_rotate(const Image& street, const Image& sat, std::mt19937_64& rng) {
  return sync_rotate(street, sat, static_cast<int>(uniform_int(rng, 0, 3)));
}

Image grid_dropout(const Image& img, std::mt19937_64& rng, int cell, double ratio) {
  if (cell < 1 || ratio < 0 || ratio > 1) throw std::invalid_argument("grid_dropout: need cell >= 1, ratio in [0,1]");
  Image out = img;
  const int hole = static_cast<int>(std::lround(cell * ratio));
  if (hole == 0) return out;
  const int oy = static_cast<int>(uniform_int(rng, 0, cell - 1));
  const int ox = static_cast<int>(uniform_int(rng, 0, cell - 1));
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c) {
      if ((r + oy) % cell < hole && (c + ox) % cell < hole) out.set(r, c, {0, 0, 0});
    }
  return out;
}

Image coarse_dropout(const Image& img, std::mt19937_64& rng, int max_holes, int max_size) {
  if (max_holes < 0 || max_size < 1) throw std::invalid_argument("coarse_dropout: need max_holes >= 0, max_size >= 1");
  Image out = img;
  if (max_holes == 0 || img.width == 0 || img.height == 0) return out;
  const int holes = static_cast<int>(uniform_int(rng, 1, max_holes));
  for (int k = 0; k < holes; ++k) {
    const int h = static_cast<int>(uniform_int(rng, 1, std::min(max_size, img.height)));
    const int w = static_cast<int>(uniform_int(rng, 1, std::min(max_size, img.width)));
    const int r0 = static_cast<int>(uniform_int(rng, 0, img.height - h));
    const int c0 = static_cast<int>(uniform_int(rng, 0, img.width - w));
    for (int r = r0; r < r0 + h; ++r)
      for (int c = c0; c < c0 + w; ++c) out.set(r, c, {0, 0, 0});
  }
  return out;
}

JitterFactors draw_jitter(std::mt19937_64& rng, double strength) {
  if (!(strength >= 0 && strength < 1)) throw std::invalid_argument("color_jitter: strength must lie in [0,1)");
  JitterFactors f;
  f.brightness = uniform_real(rng, 1 - strength, 1 + strength);
  f.contrast = uniform_real(rng, 1 - strength, 1 + strength);
  f.saturation = uniform_real(rng, 1 - strength, 1 + strength);
  return f;
}

Image apply_jitter(const Image& img, const JitterFactors& f) {
  if (f.brightness == 1 && f.contrast == 1 && f.saturation == 1) return img;
  Image out = img;
  const std::size_t n = img.rgb.size() / 3;
  double mean_gray = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto* p = &img.rgb[3 * i];
    mean_gray += (0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]) * f.brightness;
  }
  mean_gray = n ? mean_gray / static_cast<double>(n) : 0;
  for (std::size_t i = 0; i < n; ++i) {
    double v[3];
    for (int ch = 0; ch < 3; ++ch) v[ch] = img.rgb[3 * i + static_cast<std::size_t>(ch)] * f.brightness;
    for (double& x : v) x = (x - mean_gray) * f.contrast + mean_gray;
    const double gray = 0.299 * v[0] + 0.587 * v[1] + 0.114 * v[2];
    for (int ch = 0; ch < 3; ++ch) {
      const double x = (v[ch] - gray) * f.saturation + gray;
      out.rgb[3 * i + static_cast<std::size_t>(ch)] = static_cast<std::uint8_t>(std::clamp(std::lround(x), 0L, 255L));
    }
  }
  return out;
}

Image color_jitter(const Image& img, std::mt19937_64& rng, double strength) {
  return apply_jitter(img, draw_jitter(rng, strength));
}

ImagePair augment_pair(const Image& street, const Image& sat, const AugmentConfig& cfg, std::mt19937_64& rng) {
  ImagePair out{street, sat};
  if (cfg.sync_flip) out = aug_sync_flip(out.first, out.second, rng);
  if (cfg.sync_rotate) out = aug_sync_rotate(out.first, out.second, rng);
  for (Image* img : {&out.first, &out.second}) {
    if (cfg.grid_dropout) *img = grid_dropout(*img, rng, cfg.grid_cell, cfg.grid_ratio);
    if (cfg.coarse_dropout) *img = coarse_dropout(*img, rng, cfg.coarse_max_holes, cfg.coarse_max_size);
    if (cfg.color_jitter > 0) *img = color_jitter(*img, rng, cfg.color_jitter);
  }
  return out;
}

}  // namespace cvd
