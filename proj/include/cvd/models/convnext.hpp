#pragma once

#include "cvd/models/layers.hpp"

#include <array>
#include <string>

namespace cvd {

struct ConvNeXtConfig {
  std::array<Index, 4> stage_blocks{1, 1, 3, 1};
  std::array<Index, 4> stage_channels{16, 32, 64, 128};
  Index patch_size = 4;
  Index dw_kernel = 7;
  Index expansion = 4;
  Index embed_dim = 64;

  void validate() const {
    if (patch_size != 4) throw std::invalid_argument("ConvNeXtConfig: patch_size must be 4");
    if (expansion != 4) throw std::invalid_argument("ConvNeXtConfig: expansion must be 4");
    if (dw_kernel < 1 || dw_kernel % 2 == 0) throw std::invalid_argument("ConvNeXtConfig: dw_kernel must be odd");
    if (embed_dim < 1) throw std::invalid_argument("ConvNeXtConfig: embed_dim must be positive");
    for (int i = 0; i < 4; ++i) {
      if (stage_blocks[i] < 0) throw std::invalid_argument("ConvNeXtConfig: negative block count");
      if (stage_channels[i] < 1) throw std::invalid_argument("ConvNeXtConfig: channels must be positive");
    }
  }
};

namespace convnext_names {
inline std::string block(int stage, Index j) {
  return "stages." + std::to_string(stage) + ".blocks." + std::to_string(j);
}
inline std::string downsample(int stage) { return "downsample." + std::to_string(stage); }
}  // namespace convnext_names

template <typename Scalar>
ParamSet<Scalar> init_convnext(const ConvNeXtConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ParamBuilder<Scalar> b(seed);
  const auto& ch = cfg.stage_channels;
  b.weight("stem.conv.weight", {ch[0], 3, cfg.patch_size, cfg.patch_size});
  b.norm("stem.norm", ch[0]);
  for (int s = 0; s < 4; ++s) {
    if (s > 0) {
      const auto ds = convnext_names::downsample(s);
      b.norm(ds + ".norm", ch[s - 1]);
      b.conv(ds + ".conv", {ch[s], ch[s - 1], 2, 2});
    }
    const Index c = ch[s];
    for (Index j = 0; j < cfg.stage_blocks[s]; ++j) {
      const auto name = convnext_names::block(s, j);
      b.conv(name + ".dw", {c, 1, cfg.dw_kernel, cfg.dw_kernel});
      b.norm(name + ".norm", c);
      b.conv(name + ".pw1", {cfg.expansion * c, c, 1, 1});
      b.conv(name + ".pw2", {c, cfg.expansion * c, 1, 1});
    }
  }
  b.norm("head.norm", ch[3]);
  b.dense("head.linear", cfg.embed_dim, ch[3]);
  return b.take();
}

/// Non-overlapping 4x4 patch embedding followed by channel layer norm.
template <typename Scalar>
Var<Scalar> patchify_stem(Var<Scalar> image, const BoundParams<Scalar>& p, const std::string& prefix = "stem") {
  const auto& k = p(prefix + ".conv.weight").shape();
  const Shape& s = image.shape();
  if (s.size() != 3) throw ShapeError("patchify_stem: expected [3,H,W], got " + shape_string(s));
  const Index patch = k[2];
  if (s[1] % patch != 0 || s[2] % patch != 0) {
    throw ShapeError("patchify_stem: H and W must be divisible by " + std::to_string(patch) + ", got " +
                     shape_string(s));
  }
  auto y = conv2d(image, p(prefix + ".conv.weight"), {.stride = patch, .padding = 0, .groups = 1});
  return channel_norm(p, prefix + ".norm", y);
}

/// Inverted bottleneck: x + pw2(gelu(pw1(norm(dw(x))))).
template <typename Scalar>
Var<Scalar> convnext_block(Var<Scalar> x, const BoundParams<Scalar>& p, const std::string& prefix) {
  const auto& dw = p(prefix + ".dw.weight").shape();
  if (x.value().rank() != 3 || x.dim(0) != dw[0]) {
    throw ShapeError("convnext_block: input " + shape_string(x.shape()) + " does not match block width " +
                     std::to_string(dw[0]));
  }
  const Index c = dw[0];
  auto y = conv_bias(p, prefix + ".dw", x, {.stride = 1, .padding = dw[2] / 2, .groups = c});
  y = channel_norm(p, prefix + ".norm", y);
  y = gelu(conv_bias(p, prefix + ".pw1", y));
  y = conv_bias(p, prefix + ".pw2", y);
  return x + y;
}

/// Unit-norm embedding of one image. Works for any H, W divisible by 32.
template <typename Scalar>
Var<Scalar> convnext_encode(Var<Scalar> image, const ConvNeXtConfig& cfg, const BoundParams<Scalar>& p) {
  const Shape& s = image.shape();
  if (s.size() != 3 || s[0] != 3) throw ShapeError("convnext_encode: expected [3,H,W], got " + shape_string(s));
  const Index need = cfg.patch_size * 8;
  if (s[1] % need != 0 || s[2] % need != 0) {
    throw ShapeError("convnext_encode: H and W must be divisible by " + std::to_string(need) +
                     " (patch stride times three stride-2 downsamplers), got " + shape_string(s));
  }
  auto x = patchify_stem(image, p, "stem");
  for (int st = 0; st < 4; ++st) {
    if (st > 0) {
      const auto ds = convnext_names::downsample(st);
      x = conv_bias(p, ds + ".conv", channel_norm(p, ds + ".norm", x), {.stride = 2});
    }
    for (Index j = 0; j < cfg.stage_blocks[st]; ++j) x = convnext_block(x, p, convnext_names::block(st, j));
  }
  auto f = vector_norm(p, "head.norm", global_avg_pool(x));
  auto e = dense(p, "head.linear", reshape(f, {1, f.size()}));
  return l2_normalize(reshape(e, {e.size()}));
}

}  // namespace cvd
