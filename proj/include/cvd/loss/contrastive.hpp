#pragma once

#include "cvd/core/ops.hpp"

#include <cmath>
#include <optional>
#include <set>
#include <stdexcept>
#include <vector>

namespace cvd {

struct LossConfig {
  double temperature = 0.07;
  bool learnable_temperature = false;
  double label_smoothing = 0.1;
  double margin = 0.5;
  /// Average the street->overhead and overhead->street directions.
  bool symmetric = true;

  void validate() const {
    if (!(temperature > 0)) throw std::invalid_argument("LossConfig: temperature must be positive");
    if (!(label_smoothing >= 0 && label_smoothing < 1)) {
      throw std::invalid_argument("LossConfig: label_smoothing must lie in [0,1)");
    }
    if (!(margin >= 0)) throw std::invalid_argument("LossConfig: margin must be non-negative");
  }
};

/// Street embeddings E_s[N,D] and overhead embeddings E_a[N,D]; row i of
/// each belongs to sample ids[i].
template <typename Scalar>
struct EmbeddingBatch {
  Var<Scalar> street;
  Var<Scalar> sat;
  std::vector<Index> ids;

  Index size() const { return street.dim(0); }

  void validate(double tol = 1e-4) const {
    const Shape& s = street.shape();
    if (s.size() != 2 || s[0] < 1 || sat.shape() != s) {
      throw ShapeError("EmbeddingBatch: street " + shape_string(s) + " and sat " + shape_string(sat.shape()) +
                       " must both be [N,D] with N >= 1");
    }
    if (!ids.empty()) {
      if (static_cast<Index>(ids.size()) != s[0]) throw ShapeError("EmbeddingBatch: ids length must equal N");
      if (std::set<Index>(ids.begin(), ids.end()).size() != ids.size()) {
        throw std::invalid_argument("EmbeddingBatch: duplicate pairing index");
      }
    }
    for (const auto* m : {&street.value(), &sat.value()}) {
      const auto rows = m->matrix();
      for (Index i = 0; i < rows.rows(); ++i) {
        if (std::abs(static_cast<double>(rows.row(i).norm()) - 1.0) > tol) {
          throw std::invalid_argument("EmbeddingBatch: row " + std::to_string(i) + " is not unit norm");
        }
      }
    }
  }
};

/// [||a-p|| - ||a-n|| + m]_+
template <typename Scalar>
Var<Scalar> triplet_loss(Var<Scalar> anchor, Var<Scalar> positive, Var<Scalar> negative, Scalar margin) {
  if (anchor.shape() != positive.shape() || anchor.shape() != negative.shape()) {
    throw ShapeError("triplet_loss: embeddings must share a shape");
  }
  return relu(add_scalar(norm(anchor - positive) - norm(anchor - negative), margin));
}

/// Smoothed target q_j = eps/N + (1-eps)[j = target].
template <typename Scalar>
Tensor<Scalar> smoothed_target(Index n, Index target, double eps) {
  if (target < 0 || target >= n) {
    throw std::out_of_range("label_smoothed_ce: target " + std::to_string(target) + " outside [0," +
                            std::to_string(n) + ")");
  }
  Tensor<Scalar> q({n}, static_cast<Scalar>(eps / static_cast<double>(n)));
  q[target] += static_cast<Scalar>(1.0 - eps);
  return q;
}

template <typename Scalar>
Var<Scalar> label_smoothed_ce(Var<Scalar> logits, Index target, double eps) {
  if (logits.value().rank() != 1) throw ShapeError("label_smoothed_ce: logits must be a vector");
  auto q = logits.tape->constant(smoothed_target<Scalar>(logits.size(), target, eps));
  return scale(sum(log_softmax(logits, 0) * q), Scalar(-1));
}

/// Smoothed-label InfoNCE over the similarity matrix E_s E_a^T / tau with
/// positives on the diagonal. `log_tau`, when given, overrides the
/// configured temperature.
template <typename Scalar>
Var<Scalar> infonce_loss(const EmbeddingBatch<Scalar>& batch, const LossConfig& cfg,
                         std::optional<Var<Scalar>> log_tau = std::nullopt) {
  cfg.validate();
  batch.validate();
  const Index n = batch.size();
  auto sim = matmul(batch.street, batch.sat, false, true);
  if (log_tau) {
    sim = sim * exp(scale(*log_tau, Scalar(-1)));
  } else {
    sim = scale(sim, static_cast<Scalar>(1.0 / cfg.temperature));
  }
  const double eps = cfg.label_smoothing;
  Tensor<Scalar> q({n, n}, static_cast<Scalar>(eps / static_cast<double>(n)));
  for (Index i = 0; i < n; ++i) q.at(i, i) += static_cast<Scalar>(1.0 - eps);
  auto targets = sim.tape->constant(q);
  const auto inv_n = static_cast<Scalar>(-1.0 / static_cast<double>(n));
  auto rows = scale(sum(log_softmax(sim, 1) * targets), inv_n);
  if (!cfg.symmetric) return rows;
  auto cols = scale(sum(log_softmax(sim, 0) * targets), inv_n);
  return scale(rows + cols, Scalar(0.5));
}

}  // namespace cvd
