#pragma once

#include "cvd/models/layers.hpp"

#include <array>
#include <cmath>
#include <optional>
#include <set>
#include <string>

namespace cvd {

struct GCViTConfig {
  std::array<Index, 4> stage_depths{1, 1, 1, 1};
  Index window = 4;
  std::array<Index, 4> heads{1, 2, 4, 8};
  std::array<Index, 4> stage_channels{16, 32, 64, 128};
  Index mlp_expansion = 4;
  Index num_classes = 3;
  /// Side of the square working resolution: overhead images are
  /// image_size x image_size, panoramas image_size x 2*image_size.
  Index image_size = 64;

  Index stage_side(int stage) const { return image_size / (4 * (Index{1} << stage)); }
  Index stage_window(int stage) const { return std::min(window, stage_side(stage)); }
  /// Downsample units in the stage's global token generator.
  Index generator_units(int stage) const { return log2_exact(stage_side(stage) / stage_window(stage)); }

  bool size_ok(Index side) const {
    if (side < 32 || side % 32 != 0) return false;
    for (int s = 0; s < 4; ++s) {
      const Index n = side / (4 * (Index{1} << s));
      const Index b = std::min(window, n);
      if (n % b != 0 || !is_power_of_two(n / b)) return false;
    }
    return true;
  }

  Index nearest_valid_size(Index side) const {
    Index best = -1;
    for (Index c = 32; c <= 8192; c += 32) {
      if (size_ok(c) && (best < 0 || std::abs(c - side) < std::abs(best - side))) best = c;
    }
    return best;
  }

  void validate() const {
    if (window < 1) throw std::invalid_argument("GCViTConfig: window must be positive");
    if (mlp_expansion != 4) throw std::invalid_argument("GCViTConfig: mlp_expansion must be 4");
    if (num_classes < 2) throw std::invalid_argument("GCViTConfig: num_classes must be at least 2");
    for (int s = 0; s < 4; ++s) {
      if (stage_depths[s] < 0) throw std::invalid_argument("GCViTConfig: negative stage depth");
      if (heads[s] < 1 || stage_channels[s] % heads[s] != 0) {
        throw std::invalid_argument("GCViTConfig: stage " + std::to_string(s) + " channels not divisible by heads");
      }
      if (s > 0 && stage_channels[s] != 2 * stage_channels[s - 1]) {
        throw std::invalid_argument("GCViTConfig: each stage must double the channel count");
      }
    }
    if (!size_ok(image_size)) {
      throw std::invalid_argument("GCViTConfig: image_size " + std::to_string(image_size) +
                                  " incompatible with window " + std::to_string(window) + "; nearest valid is " +
                                  std::to_string(nearest_valid_size(image_size)));
    }
  }
};

// ---------------------------------------------------------------------------
// Windows and tokens.

namespace detail {

inline std::pair<IndexMap, IndexMap> window_maps(Index c, Index h, Index w, Index b) {
  auto part = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(c * h * w));
  auto merge = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(c * h * w));
  const Index nx = w / b, t_count = b * b;
  for (Index ch = 0; ch < c; ++ch)
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x) {
        const Index win = (y / b) * nx + (x / b);
        const Index t = (y % b) * b + (x % b);
        const Index dst = (win * t_count + t) * c + ch;
        const Index src = (ch * h + y) * w + x;
        (*part)[static_cast<std::size_t>(dst)] = src;
        (*merge)[static_cast<std::size_t>(src)] = dst;
      }
  return {IndexMap(std::move(part)), IndexMap(std::move(merge))};
}

inline void check_windows(const Shape& s, Index b, const char* op) {
  if (s.size() != 3) throw ShapeError(std::string(op) + ": expected [C,H,W], got " + shape_string(s));
  if (b < 1 || s[1] % b != 0 || s[2] % b != 0) {
    throw ShapeError(std::string(op) + ": spatial extents of " + shape_string(s) + " not divisible by window " +
                     std::to_string(b));
  }
}

}  // namespace detail

/// [C,H,W] -> [nW, b*b, C]; windows row-major over the grid, tokens
/// row-major inside a window.
template <typename Scalar>
Var<Scalar> window_partition(Var<Scalar> x, Index b) {
  const Shape& s = x.shape();
  detail::check_windows(s, b, "window_partition");
  const Index nw = (s[1] / b) * (s[2] / b);
  return gather(x, {nw, b * b, s[0]}, detail::window_maps(s[0], s[1], s[2], b).first);
}

template <typename Scalar>
Var<Scalar> window_merge(Var<Scalar> windows, Index c, Index h, Index w) {
  const Shape& s = windows.shape();
  if (s.size() != 3 || s[2] != c) throw ShapeError("window_merge: expected [nW,T,C], got " + shape_string(s));
  const auto b = static_cast<Index>(std::lround(std::sqrt(static_cast<double>(s[1]))));
  if (b * b != s[1]) throw ShapeError("window_merge: token count " + std::to_string(s[1]) + " is not square");
  detail::check_windows({c, h, w}, b, "window_merge");
  if ((h / b) * (w / b) != s[0]) throw ShapeError("window_merge: window count does not tile the target extent");
  return gather(windows, {c, h, w}, detail::window_maps(c, h, w, b).second);
}

/// Query tokens [b*b, C] for one stage: k halving units until side == b.
template <typename Scalar>
Var<Scalar> global_token_generator(Var<Scalar> x, Index b, const BoundParams<Scalar>& p, const std::string& prefix) {
  const Shape& s = x.shape();
  if (s.size() != 3 || s[1] != s[2]) {
    throw ShapeError("global_token_generator: expected a square [C,H,W], got " + shape_string(s));
  }
  if (s[1] % b != 0 || !is_power_of_two(s[1] / b)) {
    throw ShapeError("global_token_generator: side " + std::to_string(s[1]) + " over window " + std::to_string(b) +
                     " is not a power of two");
  }
  const Index units = log2_exact(s[1] / b);
  const Index c = s[0];
  for (Index u = 0; u < units; ++u) {
    const auto name = prefix + ".units." + std::to_string(u);
    x = gelu(conv_bias(p, name + ".dw", x, {.stride = 2, .padding = 1, .groups = c}));
    x = conv_bias(p, name + ".pw", x);
  }
  return reshape(window_partition(x, b), {b * b, c});
}

// ---------------------------------------------------------------------------
// Attention.

/// [B,T,C] -> [B*heads, T, C/heads].
template <typename Scalar>
Var<Scalar> split_heads(Var<Scalar> x, Index heads) {
  const Shape& s = x.shape();
  if (s.size() != 3 || heads < 1 || s[2] % heads != 0) {
    throw ShapeError("split_heads: " + shape_string(s) + " cannot be split into " + std::to_string(heads) + " heads");
  }
  const Index d = s[2] / heads;
  auto y = permute(reshape(x, {s[0], s[1], heads, d}), {0, 2, 1, 3});
  return reshape(y, {s[0] * heads, s[1], d});
}

template <typename Scalar>
Var<Scalar> merge_heads(Var<Scalar> x, Index heads) {
  const Shape& s = x.shape();
  if (s.size() != 3 || s[0] % heads != 0) throw ShapeError("merge_heads: bad shape " + shape_string(s));
  auto y = permute(reshape(x, {s[0] / heads, heads, s[1], s[2]}), {0, 2, 1, 3});
  return reshape(y, {s[0] / heads, s[1], heads * s[2]});
}

/// softmax(q k^T / sqrt(s) + bias) v, batched over axis 0.
template <typename Scalar>
Var<Scalar> scaled_dot_attention(Var<Scalar> q, Var<Scalar> k, Var<Scalar> v, std::optional<Var<Scalar>> bias,
                                 Scalar s) {
  if (!(s > Scalar(0))) throw std::invalid_argument("attention: scaling must be positive");
  if (k.value().rank() != 3 || v.value().rank() != 3 || k.dim(1) != v.dim(1)) {
    throw ShapeError("attention: keys " + shape_string(k.shape()) + " and values " + shape_string(v.shape()) +
                     " must be [B,T',d] with matching T'");
  }
  auto logits = scale(matmul(q, k, false, true), Scalar(1) / std::sqrt(s));
  if (bias) logits = logits + *bias;
  return matmul(softmax(logits, -1), v);
}

/// Index of the bias for query token i and key token j of a b x b window
/// inside a table built for window side wt (b <= wt).
inline Index relpos_offset(Index i, Index j, Index b, Index wt) {
  const Index dy = i / b - j / b + wt - 1;
  const Index dx = i % b - j % b + wt - 1;
  return dy * (2 * wt - 1) + dx;
}

/// Expands a [heads, (2wt-1)^2] table to [nW*heads, b*b, b*b] logits bias.
template <typename Scalar>
Var<Scalar> relpos_bias(Var<Scalar> table, Index b, Index windows) {
  const Shape& s = table.shape();
  if (s.size() != 2) throw ShapeError("relpos_bias: table must be [heads, (2w-1)^2]");
  const Index heads = s[0];
  const auto side = static_cast<Index>(std::lround(std::sqrt(static_cast<double>(s[1]))));
  if (side * side != s[1] || side % 2 == 0) throw ShapeError("relpos_bias: table width is not (2w-1)^2");
  const Index wt = (side + 1) / 2;
  if (b > wt) throw ShapeError("relpos_bias: window " + std::to_string(b) + " exceeds table window " + std::to_string(wt));
  const Index t = b * b;
  auto index = std::make_shared<std::vector<Index>>();
  index->reserve(static_cast<std::size_t>(windows * heads * t * t));
  for (Index n = 0; n < windows; ++n)
    for (Index h = 0; h < heads; ++h)
      for (Index i = 0; i < t; ++i)
        for (Index j = 0; j < t; ++j) index->push_back(h * s[1] + relpos_offset(i, j, b, wt));
  return gather(table, {windows * heads, t, t}, IndexMap(std::move(index)));
}

/// Multi-head attention before the output projection. q is [Bq,T,C] with
/// Bq either B or 1 (one query set repeated for every window); k, v are
/// [B,T',C]; bias is [B*heads, T, T'].
template <typename Scalar>
Var<Scalar> multi_head_attention(Var<Scalar> q, Var<Scalar> k, Var<Scalar> v, Index heads,
                                 std::optional<Var<Scalar>> bias, Scalar s) {
  if (k.value().rank() != 3 || v.value().rank() != 3 || q.value().rank() != 3) {
    throw ShapeError("multi_head_attention: q, k, v must be rank 3");
  }
  const Index batch = k.dim(0);
  if (q.dim(0) != batch && q.dim(0) != 1) throw ShapeError("multi_head_attention: query batch must be 1 or match keys");
  auto qh = split_heads(q, heads);
  if (q.dim(0) != batch) {
    const Index block = qh.size();
    auto index = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(block * batch));
    for (Index i = 0; i < block * batch; ++i) (*index)[static_cast<std::size_t>(i)] = i % block;
    qh = gather(qh, {batch * heads, qh.dim(1), qh.dim(2)}, IndexMap(std::move(index)));
  }
  auto o = scaled_dot_attention(qh, split_heads(k, heads), split_heads(v, heads), bias, s);
  return merge_heads(o, heads);
}

/// Global query attention: queries g_q [T,C] shared by every window,
/// keys/values [B,T',C] from each window. Output [B,T,C] before projection.
template <typename Scalar>
Var<Scalar> global_attention(Var<Scalar> g_q, Var<Scalar> k, Var<Scalar> v, Index heads,
                             std::optional<Var<Scalar>> bias, Scalar s) {
  if (g_q.value().rank() != 2) throw ShapeError("global_attention: g_q must be [T,C]");
  return multi_head_attention(reshape(g_q, {1, g_q.dim(0), g_q.dim(1)}), k, v, heads, bias, s);
}

namespace detail {

template <typename Scalar>
Var<Scalar> rows(Var<Scalar> x) {
  return reshape(x, {x.dim(0) * x.dim(1), x.dim(2)});
}

template <typename Scalar>
Var<Scalar> project_out(const BoundParams<Scalar>& p, const std::string& prefix, Var<Scalar> o) {
  const Shape s = o.shape();
  return reshape(dense(p, prefix + ".proj", rows(o)), s);
}

}  // namespace detail

/// Windowed self-attention with relative position bias on [nW, b*b, C].
template <typename Scalar>
Var<Scalar> local_attention(Var<Scalar> tokens, const BoundParams<Scalar>& p, const std::string& prefix,
                            Index heads) {
  const Shape s = tokens.shape();
  if (s.size() != 3) throw ShapeError("local_attention: expected [nW,T,C], got " + shape_string(s));
  const Index c = s[2];
  const auto b = static_cast<Index>(std::lround(std::sqrt(static_cast<double>(s[1]))));
  auto qkv = dense(p, prefix + ".qkv", detail::rows(tokens));
  auto q = reshape(slice(qkv, 1, 0, c), s);
  auto k = reshape(slice(qkv, 1, c, 2 * c), s);
  auto v = reshape(slice(qkv, 1, 2 * c, 3 * c), s);
  auto bias = relpos_bias(p(prefix + ".relpos"), b, s[0]);
  auto o = multi_head_attention(q, k, v, heads, std::optional<Var<Scalar>>(bias), static_cast<Scalar>(c / heads));
  return detail::project_out(p, prefix, o);
}

/// Attention whose queries are the stage's global tokens [b*b, C].
template <typename Scalar>
Var<Scalar> global_attention_layer(Var<Scalar> tokens, Var<Scalar> g_q, const BoundParams<Scalar>& p,
                                   const std::string& prefix, Index heads) {
  const Shape s = tokens.shape();
  if (s.size() != 3) throw ShapeError("global_attention_layer: expected [nW,T,C], got " + shape_string(s));
  const Index c = s[2];
  if (g_q.shape() != Shape{s[1], c}) {
    throw ShapeError("global_attention_layer: global tokens " + shape_string(g_q.shape()) + " do not match windows " +
                     shape_string(s));
  }
  const auto b = static_cast<Index>(std::lround(std::sqrt(static_cast<double>(s[1]))));
  auto kv = dense(p, prefix + ".kv", detail::rows(tokens));
  auto k = reshape(slice(kv, 1, 0, c), s);
  auto v = reshape(slice(kv, 1, c, 2 * c), s);
  auto bias = relpos_bias(p(prefix + ".relpos"), b, s[0]);
  auto o = global_attention(g_q, k, v, heads, std::optional<Var<Scalar>>(bias), static_cast<Scalar>(c / heads));
  return detail::project_out(p, prefix, o);
}

/// Pre-norm transformer block on a square [C,H,W] map. g_q selects the
/// global variant when present.
template <typename Scalar>
Var<Scalar> gcvit_block(Var<Scalar> x, std::optional<Var<Scalar>> g_q, const BoundParams<Scalar>& p,
                        const std::string& prefix, Index heads, Index b) {
  const Index c = x.dim(0), h = x.dim(1), w = x.dim(2);
  auto t = window_partition(channel_norm(p, prefix + ".norm1", x), b);
  auto a = g_q ? global_attention_layer(t, *g_q, p, prefix + ".attn", heads)
               : local_attention(t, p, prefix + ".attn", heads);
  x = x + window_merge(a, c, h, w);
  auto m = gelu(conv_bias(p, prefix + ".mlp.fc1", channel_norm(p, prefix + ".norm2", x)));
  return x + conv_bias(p, prefix + ".mlp.fc2", m);
}

namespace gcvit_names {
inline std::string stage(int s) { return "stages." + std::to_string(s); }
inline std::string block(int s, Index j, bool global) {
  return stage(s) + ".blocks." + std::to_string(j) + (global ? ".global" : ".local");
}
}  // namespace gcvit_names

/// Parameters of one GCViT branch; every name starts with `prefix`.
template <typename Scalar>
ParamSet<Scalar> init_gcvit(const GCViTConfig& cfg, std::uint64_t seed, const std::string& prefix = "") {
  cfg.validate();
  ParamBuilder<Scalar> pb(seed);
  const auto& ch = cfg.stage_channels;
  const Index table = (2 * cfg.window - 1) * (2 * cfg.window - 1);
  pb.conv(prefix + "stem.conv", {ch[0], 3, 4, 4});
  pb.norm(prefix + "stem.norm", ch[0]);
  for (int s = 0; s < 4; ++s) {
    const Index c = ch[s];
    const auto st = prefix + gcvit_names::stage(s);
    if (s > 0) {
      pb.norm(st + ".downsample.norm", ch[s - 1]);
      pb.conv(st + ".downsample.conv", {c, ch[s - 1], 2, 2});
    }
    for (Index u = 0; u < cfg.generator_units(s); ++u) {
      const auto name = st + ".gen.units." + std::to_string(u);
      pb.conv(name + ".dw", {c, 1, 3, 3});
      pb.conv(name + ".pw", {c, c, 1, 1});
    }
    for (Index j = 0; j < cfg.stage_depths[s]; ++j) {
      for (bool global : {false, true}) {
        const auto name = prefix + gcvit_names::block(s, j, global);
        pb.norm(name + ".norm1", c);
        pb.dense(name + (global ? ".attn.kv" : ".attn.qkv"), (global ? 2 : 3) * c, c);
        pb.zeros(name + ".attn.relpos", {cfg.heads[s], table});
        pb.dense(name + ".attn.proj", c, c);
        pb.norm(name + ".norm2", c);
        pb.conv(name + ".mlp.fc1", {cfg.mlp_expansion * c, c, 1, 1});
        pb.conv(name + ".mlp.fc2", {c, cfg.mlp_expansion * c, 1, 1});
      }
    }
  }
  pb.norm(prefix + "norm", ch[3]);
  return pb.take();
}

/// Rejects inputs that do not match the configured working size. Panoramas
/// (W = 2H) are accepted and pooled to square after the stem.
inline void gcvit_check_input(const Shape& s, const GCViTConfig& cfg) {
  if (s.size() != 3 || s[0] != 3) throw ShapeError("gcvit_encode: expected [3,H,W], got " + shape_string(s));
  if (s[1] != cfg.image_size || (s[2] != s[1] && s[2] != 2 * s[1])) {
    const Index suggest = cfg.size_ok(s[1]) ? s[1] : cfg.nearest_valid_size(s[1]);
    throw ShapeError("gcvit_encode: input " + shape_string(s) + " incompatible with image_size " +
                     std::to_string(cfg.image_size) + "; nearest valid size is 3x" + std::to_string(suggest) + "x" +
                     std::to_string(suggest) + " (or 3x" + std::to_string(suggest) + "x" +
                     std::to_string(2 * suggest) + " for panoramas) with a matching image_size");
  }
}

/// Pooled, normalized branch feature [C_last].
template <typename Scalar>
Var<Scalar> gcvit_encode(Var<Scalar> image, const GCViTConfig& cfg, const BoundParams<Scalar>& p,
                         const std::string& prefix = "") {
  gcvit_check_input(image.shape(), cfg);
  auto x = conv_bias(p, prefix + "stem.conv", image, {.stride = 4});
  x = channel_norm(p, prefix + "stem.norm", x);
  if (x.dim(2) == 2 * x.dim(1)) x = avg_pool2d(x, 1, 2);
  for (int s = 0; s < 4; ++s) {
    const auto st = prefix + gcvit_names::stage(s);
    if (s > 0) x = conv_bias(p, st + ".downsample.conv", channel_norm(p, st + ".downsample.norm", x), {.stride = 2});
    const Index b = cfg.stage_window(s);
    auto g = global_token_generator(x, b, p, st + ".gen");
    for (Index j = 0; j < cfg.stage_depths[s]; ++j) {
      x = gcvit_block(x, std::optional<Var<Scalar>>{}, p, prefix + gcvit_names::block(s, j, false), cfg.heads[s], b);
      x = gcvit_block(x, std::optional<Var<Scalar>>(g), p, prefix + gcvit_names::block(s, j, true), cfg.heads[s], b);
    }
  }
  return vector_norm(p, prefix + "norm", global_avg_pool(x));
}

// ---------------------------------------------------------------------------
// Coupled two-branch classifier.

template <typename Scalar>
struct CGCViTParams {
  ParamSet<Scalar> branch_s;
  ParamSet<Scalar> branch_a;
  ParamSet<Scalar> head;

  void check_disjoint() const {
    std::set<std::string> seen;
    std::set<const Scalar*> storage;
    for (const auto* set : {&branch_s, &branch_a, &head}) {
      for (const auto& [name, t] : *set) {
        if (!seen.insert(name).second) throw std::invalid_argument("CGCViT: parameter " + name + " shared between parts");
        if (!storage.insert(t.data()).second) throw std::invalid_argument("CGCViT: tensor storage aliased at " + name);
      }
    }
  }
};

inline const std::string kStreetPrefix = "street.";
inline const std::string kSatPrefix = "sat.";

template <typename Scalar>
CGCViTParams<Scalar> init_cgcvit(const GCViTConfig& cfg, std::uint64_t seed) {
  CGCViTParams<Scalar> out;
  out.branch_s = init_gcvit<Scalar>(cfg, seed * 3 + 1, kStreetPrefix);
  out.branch_a = init_gcvit<Scalar>(cfg, seed * 3 + 2, kSatPrefix);
  ParamBuilder<Scalar> pb(seed * 3 + 3);
  pb.dense("head.linear", cfg.num_classes, 2 * cfg.stage_channels[3]);
  out.head = pb.take();
  return out;
}

template <typename Scalar>
struct CGCViTOutput {
  Var<Scalar> feature_street;
  Var<Scalar> feature_sat;
  Var<Scalar> logits;
  Var<Scalar> probs;
};

/// Each branch is bound separately, so the street feature depends only on
/// the street input and branch_s.
template <typename Scalar>
CGCViTOutput<Scalar> cgcvit_forward(Var<Scalar> street, Var<Scalar> sat, const GCViTConfig& cfg,
                                    const BoundParams<Scalar>& branch_s, const BoundParams<Scalar>& branch_a,
                                    const BoundParams<Scalar>& head) {
  CGCViTOutput<Scalar> out;
  out.feature_street = gcvit_encode(street, cfg, branch_s, kStreetPrefix);
  out.feature_sat = gcvit_encode(sat, cfg, branch_a, kSatPrefix);
  auto fused = concat<Scalar>({out.feature_street, out.feature_sat}, 0);
  out.logits = reshape(dense(head, "head.linear", reshape(fused, {1, fused.size()})), {cfg.num_classes});
  out.probs = softmax(out.logits, -1);
  return out;
}

template <typename Scalar>
Tensor<Scalar> cgcvit_classify(const Tensor<Scalar>& street, const Tensor<Scalar>& sat, const GCViTConfig& cfg,
                               const CGCViTParams<Scalar>& params) {
  params.check_disjoint();
  Tape<Scalar> tape;
  BoundParams<Scalar> bs(tape, params.branch_s), ba(tape, params.branch_a), bh(tape, params.head);
  return cgcvit_forward(tape.constant(street), tape.constant(sat), cfg, bs, ba, bh).probs.value();
}

}  // namespace cvd
