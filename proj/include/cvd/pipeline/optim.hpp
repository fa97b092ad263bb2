#pragma once

#include "cvd/models/param_set.hpp"

#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace cvd {

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

template <typename Scalar>
struct AdamState {
  ParamSet<Scalar> m;
  ParamSet<Scalar> v;
  std::int64_t step = 0;

  static AdamState zeros(const ParamSet<Scalar>& params) { return {zeros_like(params), zeros_like(params), 0}; }
};

/// One AdamW update with decoupled weight decay:
/// p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p).
template <typename Scalar>
void adamw_step(ParamSet<Scalar>& params, const ParamSet<Scalar>& grads, AdamState<Scalar>& state, const AdamHyper& h) {
  if (state.m.size() == 0 && params.size() != 0) state = AdamState<Scalar>::zeros(params);
  ++state.step;
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
  const auto b1 = static_cast<Scalar>(h.beta1), b2 = static_cast<Scalar>(h.beta2);
  const auto lr = static_cast<Scalar>(h.lr), wd = static_cast<Scalar>(h.weight_decay), eps = static_cast<Scalar>(h.eps);
  const auto ic1 = static_cast<Scalar>(1.0 / c1), ic2 = static_cast<Scalar>(1.0 / c2);
  for (auto& [name, p] : params) {
    if (!grads.contains(name)) throw std::invalid_argument("adamw_step: no gradient for " + name);
    const auto& g = grads.at(name);
    auto& m = state.m.at(name);
    auto& v = state.v.at(name);
    if (g.shape() != p.shape() || m.shape() != p.shape()) {
      throw ShapeError("adamw_step: shape mismatch for " + name);
    }
    auto P = p.values().array();
    auto G = g.values().array();
    auto M = m.values().array();
    auto V = v.values().array();
    M = b1 * M + (Scalar(1) - b1) * G;
    V = b2 * V + (Scalar(1) - b2) * G.square();
    P -= lr * ((M * ic1) / ((V * ic2).sqrt() + eps) + wd * P);
  }
}

/// Linear warmup from 0 to base_lr, then cosine decay to 0 at total_steps.
inline double lr_schedule(std::int64_t step, std::int64_t warmup_steps, std::int64_t total_steps, double base_lr) {
  if (step < 0 || step > total_steps || warmup_steps < 0 || warmup_steps >= total_steps) {
    throw std::invalid_argument("lr_schedule: need 0 <= step <= total and 0 <= warmup < total");
  }
  if (step < warmup_steps) return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  if (step == total_steps) return 0.0;
  const double progress = static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
  return base_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

}  // namespace cvd
