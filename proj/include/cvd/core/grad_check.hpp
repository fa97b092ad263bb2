#pragma once

#include "cvd/core/ops.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace cvd {

template <typename Scalar>
using ScalarClosure = std::function<Var<Scalar>(Tape<Scalar>&, const std::vector<Var<Scalar>>&)>;

struct GradCheckOptions {
  double step = 1e-3;
  /// Check at most this many entries per input (evenly strided); 0 = all.
  Index max_entries = 0;
  /// Fourth-order five-point stencil instead of the two-point difference.
  bool five_point = false;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  Index entries_checked = 0;
};

/// Central finite differences against the reverse sweep. Error per entry is
/// |analytic - numeric| / max(1, |analytic|, |numeric|).
template <typename Scalar>
GradCheckResult grad_check(const ScalarClosure<Scalar>& closure, const std::vector<Tensor<Scalar>>& inputs,
                           GradCheckOptions options = {}) {
  auto evaluate = [&](const std::vector<Tensor<Scalar>>& xs) {
    Tape<Scalar> tape;
    std::vector<Var<Scalar>> vars;
    for (const auto& x : xs) vars.push_back(tape.leaf(x));
    const auto out = closure(tape, vars);
    if (out.size() != 1) throw ShapeError("grad_check: closure output must be scalar, got " + shape_string(out.shape()));
    return static_cast<double>(out.value()[0]);
  };

  Tape<Scalar> tape;
  std::vector<Var<Scalar>> vars;
  for (const auto& x : inputs) vars.push_back(tape.leaf(x));
  const auto root = closure(tape, vars);
  if (root.size() != 1) throw ShapeError("grad_check: closure output must be scalar, got " + shape_string(root.shape()));
  const auto grads = tape.backward(root);

  GradCheckResult result;
  auto work = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const auto analytic = grads[vars[k]];
    const Index n = inputs[k].size();
    const Index stride = options.max_entries > 0 ? std::max<Index>(1, n / options.max_entries) : 1;
    for (Index i = 0; i < n; i += stride) {
      const Scalar orig = work[k][i];
      auto at = [&](double mult) {
        work[k][i] = static_cast<Scalar>(orig + static_cast<Scalar>(mult * options.step));
        // The realized offset may differ from the nominal one after rounding in binary32.
        const double offset = static_cast<double>(work[k][i]) - static_cast<double>(orig);
        return std::make_pair(evaluate(work), offset);
      };
      double numeric = 0;
      if (options.five_point) {
        const auto [f2, o2] = at(2);
        const auto [f1, o1] = at(1);
        const auto [m1, p1] = at(-1);
        const auto [m2, p2] = at(-2);
        numeric = (-f2 + 8 * f1 - 8 * m1 + m2) / (3.0 * (o1 - p1 + 0.5 * (o2 - p2)));
      } else {
        const auto [fp, op] = at(1);
        const auto [fm, om] = at(-1);
        numeric = (fp - fm) / (op - om);
      }
      work[k][i] = orig;
      const double a = static_cast<double>(analytic[i]);
      const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      result.max_rel_error = std::max(result.max_rel_error, err);
      ++result.entries_checked;
    }
  }
  return result;
}

template <typename Scalar>
Tensor<Scalar> random_tensor(const Shape& shape, std::mt19937_64& rng, double stddev = 1.0) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor<Scalar> t(shape);
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(dist(rng));
  return t;
}

/// One registered differentiable op with a random instance and a scalar
/// reduction (random fixed weights) so the full Jacobian is exercised.
template <typename Scalar>
struct OpCase {
  std::string name;
  std::vector<Tensor<Scalar>> inputs;
  ScalarClosure<Scalar> closure;
};

namespace detail {

template <typename Scalar>
ScalarClosure<Scalar> weighted(std::function<Var<Scalar>(const std::vector<Var<Scalar>>&)> op, Tensor<Scalar> weights) {
  return [op, weights](Tape<Scalar>& tape, const std::vector<Var<Scalar>>& xs) {
    auto y = op(xs);
    return sum(mul(y, tape.constant(weights.reshaped(y.shape()))));
  };
}

}  // namespace detail

/// The op table: every differentiable arraycore op, instantiated on random
/// shapes drawn from `seed`.
template <typename Scalar>
std::vector<OpCase<Scalar>> op_table(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  using V = Var<Scalar>;
  using Vs = std::vector<V>;
  std::vector<OpCase<Scalar>> cases;
  auto add_case = [&](std::string name, std::vector<Tensor<Scalar>> inputs, Shape out_shape,
                      std::function<V(const Vs&)> op) {
    auto w = random_tensor<Scalar>(out_shape, rng, 1.0 / std::sqrt(static_cast<double>(shape_size(out_shape))));
    cases.push_back({std::move(name), std::move(inputs), detail::weighted<Scalar>(std::move(op), std::move(w))});
  };
  auto r = [&](Shape s, double sd = 1.0) { return random_tensor<Scalar>(s, rng, sd); };

  add_case("add", {r({3, 4}), r({3, 4})}, {3, 4}, [](const Vs& x) { return x[0] + x[1]; });
  add_case("add_scalar_broadcast", {r({3, 4}), r({})}, {3, 4}, [](const Vs& x) { return x[0] + x[1]; });
  add_case("sub", {r({5}), r({5})}, {5}, [](const Vs& x) { return x[0] - x[1]; });
  add_case("mul", {r({2, 3}), r({2, 3})}, {2, 3}, [](const Vs& x) { return x[0] * x[1]; });
  add_case("mul_scalar_broadcast", {r({}), r({2, 3})}, {2, 3}, [](const Vs& x) { return x[0] * x[1]; });
  add_case("scale", {r({4})}, {4}, [](const Vs& x) { return scale(x[0], Scalar(-2.5)); });
  add_case("add_constant", {r({4})}, {4}, [](const Vs& x) { return add_scalar(x[0], Scalar(0.75)); });
  add_case("bias_add", {r({3, 2, 2}), r({3})}, {3, 2, 2}, [](const Vs& x) { return bias_add(x[0], x[1], 0); });
  add_case("matmul", {r({3, 4}), r({4, 2})}, {3, 2}, [](const Vs& x) { return matmul(x[0], x[1]); });
  add_case("matmul_trans", {r({4, 3}), r({2, 4})}, {3, 2}, [](const Vs& x) { return matmul(x[0], x[1], true, true); });
  add_case("matmul_batched", {r({2, 3, 4}), r({2, 2, 4})}, {2, 3, 2},
           [](const Vs& x) { return matmul(x[0], x[1], false, true); });
  add_case("linear", {r({3, 4}), r({5, 4}), r({5})}, {3, 5}, [](const Vs& x) { return linear(x[0], x[1], x[2]); });
  add_case("conv2d_dense", {r({2, 5, 5}), r({3, 2, 3, 3})}, {3, 3, 3},
           [](const Vs& x) { return conv2d(x[0], x[1], {.stride = 2, .padding = 1}); });
  add_case("conv2d_depthwise", {r({3, 6, 6}), r({3, 1, 3, 3})}, {3, 6, 6},
           [](const Vs& x) { return conv2d(x[0], x[1], {.stride = 1, .padding = 1, .groups = 3}); });
  add_case("conv2d_grouped", {r({4, 4, 4}), r({2, 2, 2, 2})}, {2, 2, 2},
           [](const Vs& x) { return conv2d(x[0], x[1], {.stride = 2, .padding = 0, .groups = 2}); });
  add_case("conv2d_pointwise", {r({3, 2, 3}), r({4, 3, 1, 1})}, {4, 2, 3},
           [](const Vs& x) { return conv2d(x[0], x[1]); });
  add_case("layer_norm", {r({3, 5}), r({5}), r({5})}, {3, 5},
           [](const Vs& x) { return layer_norm(x[0], x[1], x[2]); });
  add_case("layer_norm_channels", {r({4, 2, 3}), r({4}), r({4})}, {4, 2, 3},
           [](const Vs& x) { return layer_norm(x[0], x[1], x[2], 0); });
  add_case("gelu", {r({7}, 2.0)}, {7}, [](const Vs& x) { return gelu(x[0]); });
  add_case("exp", {r({5}, 0.5)}, {5}, [](const Vs& x) { return exp(x[0]); });
  add_case("relu", {r({6})}, {6}, [](const Vs& x) { return relu(x[0]); });
  add_case("square", {r({5})}, {5}, [](const Vs& x) { return square(x[0]); });
  add_case("softmax", {r({3, 4}, 2.0)}, {3, 4}, [](const Vs& x) { return softmax(x[0], -1); });
  add_case("softmax_axis0", {r({3, 4}, 2.0)}, {3, 4}, [](const Vs& x) { return softmax(x[0], 0); });
  add_case("log_softmax", {r({2, 5}, 2.0)}, {2, 5}, [](const Vs& x) { return log_softmax(x[0], 1); });
  add_case("global_avg_pool", {r({3, 4, 5})}, {3}, [](const Vs& x) { return global_avg_pool(x[0]); });
  add_case("avg_pool2d", {r({2, 4, 6})}, {2, 2, 3}, [](const Vs& x) { return avg_pool2d(x[0], 2, 2); });
  add_case("l2_normalize", {r({6})}, {6}, [](const Vs& x) { return l2_normalize(x[0]); });
  add_case("l2_normalize_rows", {r({3, 4})}, {3, 4}, [](const Vs& x) { return l2_normalize(x[0]); });
  add_case("norm", {r({5})}, {}, [](const Vs& x) { return norm(x[0]); });
  add_case("sum", {r({2, 3})}, {}, [](const Vs& x) { return sum(x[0]); });
  add_case("mean", {r({2, 3})}, {}, [](const Vs& x) { return mean(x[0]); });
  add_case("reshape", {r({2, 6})}, {3, 4}, [](const Vs& x) { return reshape(x[0], {3, 4}); });
  add_case("permute", {r({2, 3, 4})}, {4, 2, 3}, [](const Vs& x) { return permute(x[0], {2, 0, 1}); });
  add_case("slice", {r({3, 5})}, {3, 2}, [](const Vs& x) { return slice(x[0], 1, 1, 3); });
  add_case("concat", {r({2, 3}), r({2, 2})}, {2, 5}, [](const Vs& x) { return concat<Scalar>({x[0], x[1]}, 1); });
  add_case("gather_repeat", {r({4})}, {6}, [](const Vs& x) {
    return gather(x[0], {6}, std::make_shared<const std::vector<Index>>(std::vector<Index>{0, 3, 3, 1, 0, 2}));
  });
  return cases;
}

}  // namespace cvd
