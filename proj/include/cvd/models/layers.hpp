#pragma once

#include "cvd/core/ops.hpp"
#include "cvd/models/param_set.hpp"

#include <random>
#include <string>

namespace cvd {

/// Populates a ParamSet with the standard initializers.
template <typename Scalar>
class ParamBuilder {
 public:
  explicit ParamBuilder(std::uint64_t seed) : rng_(seed) {}

  void weight(const std::string& name, const Shape& shape) {
    params_.add(name, truncated_normal<Scalar>(shape, kInitStd, rng_));
  }
  void zeros(const std::string& name, const Shape& shape) { params_.add(name, Tensor<Scalar>(shape, Scalar(0))); }
  void ones(const std::string& name, const Shape& shape) { params_.add(name, Tensor<Scalar>(shape, Scalar(1))); }

  void conv(const std::string& prefix, const Shape& kernel) {
    weight(prefix + ".weight", kernel);
    zeros(prefix + ".bias", {kernel[0]});
  }
  void dense(const std::string& prefix, Index out, Index in) {
    weight(prefix + ".weight", {out, in});
    zeros(prefix + ".bias", {out});
  }
  void norm(const std::string& prefix, Index n) {
    ones(prefix + ".gamma", {n});
    zeros(prefix + ".beta", {n});
  }

  ParamSet<Scalar> take() { return std::move(params_); }

 private:
  std::mt19937_64 rng_;
  ParamSet<Scalar> params_;
};

template <typename Scalar>
Var<Scalar> conv_bias(const BoundParams<Scalar>& p, const std::string& prefix, Var<Scalar> x, Conv2dSpec spec = {}) {
  return bias_add(conv2d(x, p(prefix + ".weight"), spec), p(prefix + ".bias"), 0);
}

template <typename Scalar>
Var<Scalar> dense(const BoundParams<Scalar>& p, const std::string& prefix, Var<Scalar> x) {
  return linear(x, p(prefix + ".weight"), p(prefix + ".bias"));
}

/// Layer norm over the channel axis of a [C,H,W] map.
template <typename Scalar>
Var<Scalar> channel_norm(const BoundParams<Scalar>& p, const std::string& prefix, Var<Scalar> x) {
  return layer_norm(x, p(prefix + ".gamma"), p(prefix + ".beta"), 0);
}

template <typename Scalar>
Var<Scalar> vector_norm(const BoundParams<Scalar>& p, const std::string& prefix, Var<Scalar> x) {
  return layer_norm(x, p(prefix + ".gamma"), p(prefix + ".beta"), -1);
}

inline bool is_power_of_two(Index n) { return n > 0 && (n & (n - 1)) == 0; }

inline Index log2_exact(Index n) {
  Index k = 0;
  while ((Index{1} << k) < n) ++k;
  return k;
}

}  // namespace cvd
