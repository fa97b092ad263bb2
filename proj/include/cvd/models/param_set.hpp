#pragma once

#include "cvd/core/tape.hpp"

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <stdexcept>
#include <string>

namespace cvd {

/// Named tensors in deterministic (lexicographic) order.
template <typename Scalar>
class ParamSet {
 public:
  using Map = std::map<std::string, Tensor<Scalar>>;

  void add(const std::string& name, Tensor<Scalar> value) {
    if (!tensors_.emplace(name, std::move(value)).second) {
      throw std::invalid_argument("duplicate parameter name: " + name);
    }
  }

  const Tensor<Scalar>& at(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw std::out_of_range("missing parameter: " + name);
    return it->second;
  }
  Tensor<Scalar>& at(const std::string& name) {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw std::out_of_range("missing parameter: " + name);
    return it->second;
  }

  bool contains(const std::string& name) const { return tensors_.count(name) > 0; }
  std::size_t size() const { return tensors_.size(); }
  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }
  auto begin() { return tensors_.begin(); }
  auto end() { return tensors_.end(); }

  Index scalar_count() const {
    Index n = 0;
    for (const auto& [name, t] : tensors_) n += t.size();
    return n;
  }

  template <typename Other>
  ParamSet<Other> cast() const {
    ParamSet<Other> out;
    for (const auto& [name, t] : tensors_) out.add(name, t.template cast<Other>());
    return out;
  }

  bool operator==(const ParamSet& other) const { return tensors_ == other.tensors_; }

 private:
  Map tensors_;
};

/// A ParamSet recorded as leaves on one tape.
template <typename Scalar>
class BoundParams {
 public:
  BoundParams(Tape<Scalar>& tape, const ParamSet<Scalar>& params) : tape_(&tape) {
    for (const auto& [name, t] : params) vars_.emplace(name, tape.leaf(t));
  }

  Var<Scalar> operator()(const std::string& name) const {
    auto it = vars_.find(name);
    if (it == vars_.end()) throw std::out_of_range("missing parameter: " + name);
    return it->second;
  }

  /// Wraps vars already on a tape (used to differentiate through params).
  BoundParams(Tape<Scalar>& tape, std::map<std::string, Var<Scalar>> vars) : tape_(&tape), vars_(std::move(vars)) {}

  Tape<Scalar>& tape() const { return *tape_; }

  /// Gradient of every bound parameter, as a ParamSet with the same names.
  ParamSet<Scalar> gradients(const Gradients<Scalar>& grads) const {
    ParamSet<Scalar> out;
    for (const auto& [name, v] : vars_) out.add(name, grads[v]);
    return out;
  }

 private:
  Tape<Scalar>* tape_;
  std::map<std::string, Var<Scalar>> vars_;
};

/// Accumulates `other` into `into` name by name.
template <typename Scalar>
void accumulate(ParamSet<Scalar>& into, const ParamSet<Scalar>& other) {
  for (const auto& [name, t] : other) into.at(name).values() += t.values();
}

template <typename Scalar>
ParamSet<Scalar> zeros_like(const ParamSet<Scalar>& params) {
  ParamSet<Scalar> out;
  for (const auto& [name, t] : params) out.add(name, Tensor<Scalar>(t.shape(), Scalar(0)));
  return out;
}

/// Standard normal truncated to +-2 by resampling, rescaled so the
/// realized standard deviation is `stddev`.
template <typename Scalar>
Tensor<Scalar> truncated_normal(const Shape& shape, double stddev, std::mt19937_64& rng) {
  // Standard deviation of N(0,1) conditioned on |z| <= 2.
  constexpr double kTruncatedStd = 0.87962566103423978;
  std::normal_distribution<double> dist(0.0, 1.0);
  Tensor<Scalar> t(shape);
  for (Index i = 0; i < t.size(); ++i) {
    double z;
    do z = dist(rng);
    while (std::abs(z) > 2.0);
    t[i] = static_cast<Scalar>(z * stddev / kTruncatedStd);
  }
  return t;
}

inline constexpr double kInitStd = 0.02;

}  // namespace cvd
