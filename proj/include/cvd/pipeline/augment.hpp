#pragma once

#include "cvd/synth/image.hpp"

#include <random>
#include <utility>

namespace cvd {

using ImagePair = std::pair<Image, Image>;  // (street panorama, overhead)

/// With probability p: reverse panorama columns and mirror the overhead
/// east-west, together.
ImagePair aug_sync_flip(const Image& street, const Image& sat, std::mt19937_64& rng, double p = 0.5);

/// Applies a heading change of quarter_turns * 90 degrees to both views:
/// panorama columns roll by a quarter width per turn and the overhead
/// rotates counter-clockwise.
ImagePair sync_rotate(const Image& street, const Image& sat, int quarter_turns);
/// Draws theta from {0, 90, 180, 270} and applies sync_rotate.
ImagePair aug_sync_rotate(const Image& street, const Image& sat, std::mt19937_64& rng);

/// Zeroes a square of side ratio * cell in every cell x cell tile, at a
/// random grid offset; the zeroed fraction is about ratio^2.
Image grid_dropout(const Image& img, std::mt19937_64& rng, int cell, double ratio);
/// Zeroes up to max_holes random squares with sides in [1, max_size].
Image coarse_dropout(const Image& img, std::mt19937_64& rng, int max_holes, int max_size);

struct JitterFactors {
  double brightness = 1, contrast = 1, saturation = 1;
};
JitterFactors draw_jitter(std::mt19937_64& rng, double strength);
Image apply_jitter(const Image& img, const JitterFactors& f);
/// Random brightness, contrast and saturation factors in [1-s, 1+s].
Image color_jitter(const Image& img, std::mt19937_64& rng, double strength);

struct AugmentConfig;
/// Training-time augmentation of one pair, in a fixed order: sync flip,
/// sync rotate, then per-view dropout and color jitter.
ImagePair augment_pair(const Image& street, const Image& sat, const AugmentConfig& cfg, std::mt19937_64& rng);

}  // namespace cvd
