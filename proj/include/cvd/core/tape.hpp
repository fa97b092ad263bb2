#pragma once

#include "cvd/core/tensor.hpp"

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace cvd {

enum class OpKind : std::uint8_t {
  leaf,
  constant,
  add,
  sub,
  mul,
  scale,
  add_scalar,
  bias_add,
  matmul,
  conv2d,
  layer_norm,
  gelu,
  softmax,
  log_softmax,
  global_avg_pool,
  avg_pool2d,
  l2_normalize,
  norm,
  gather,
  reshape,
  concat,
  sum,
  mean,
  exp,
  relu,
  square,
};

template <typename Scalar>
class Tape;

/// Handle to a node recorded on a tape.
template <typename Scalar>
struct Var {
  Tape<Scalar>* tape = nullptr;
  int id = -1;

  const Tensor<Scalar>& value() const { return tape->value(*this); }
  const Shape& shape() const { return value().shape(); }
  Index dim(Index axis) const { return value().dim(axis); }
  Index size() const { return value().size(); }
};

/// Gradients of a root with respect to every node of a tape. Nodes that
/// are not on any path to the root read back as zeros.
template <typename Scalar>
class Gradients {
 public:
  Gradients(const Tape<Scalar>* tape, std::vector<Tensor<Scalar>> grads)
      : tape_(tape), grads_(std::move(grads)) {}

  Tensor<Scalar> operator[](Var<Scalar> v) const {
    const auto& g = grads_.at(static_cast<std::size_t>(v.id));
    if (!g.empty()) return g;
    return Tensor<Scalar>(tape_->value(v).shape(), Scalar(0));
  }

  bool touched(Var<Scalar> v) const { return !grads_.at(static_cast<std::size_t>(v.id)).empty(); }

 private:
  const Tape<Scalar>* tape_;
  std::vector<Tensor<Scalar>> grads_;
};

/// Append-only record of a computation. Every node stores its forward
/// closure so the tape can be replayed; inputs always precede the node.
template <typename Scalar>
class Tape {
 public:
  using TensorT = Tensor<Scalar>;
  using VarT = Var<Scalar>;
  using Inputs = std::vector<const TensorT*>;
  using Saved = std::vector<TensorT>;
  using ForwardFn = std::function<TensorT(const Inputs&, Saved&)>;
  using BackwardFn = std::function<void(const Inputs& in, const TensorT& out, const Saved& saved,
                                        const TensorT& grad_out, const std::vector<TensorT*>& grad_in)>;

  struct Node {
    OpKind kind;
    std::vector<int> inputs;
    TensorT value;
    Saved saved;
    ForwardFn forward;
    BackwardFn backward;
    bool requires_grad;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  VarT leaf(TensorT value) { return push_source(OpKind::leaf, std::move(value), true); }
  VarT constant(TensorT value) { return push_source(OpKind::constant, std::move(value), false); }

  VarT record(OpKind kind, const std::vector<VarT>& inputs, ForwardFn forward, BackwardFn backward) {
    Node node{kind, {}, {}, {}, std::move(forward), std::move(backward), false};
    node.inputs.reserve(inputs.size());
    for (const auto& v : inputs) {
      if (v.tape != this) throw std::invalid_argument("input recorded on a different tape");
      node.inputs.push_back(v.id);
      node.requires_grad = node.requires_grad || nodes_[static_cast<std::size_t>(v.id)].requires_grad;
    }
    node.value = node.forward(gather_inputs(node), node.saved);
    nodes_.push_back(std::move(node));
    return VarT{this, static_cast<int>(nodes_.size()) - 1};
  }

  const TensorT& value(VarT v) const { return node(v.id).value; }
  const Node& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return nodes_.size(); }

  /// Reverse sweep from `root` seeded with `seed` (same shape as root).
  Gradients<Scalar> backward(VarT root, const TensorT& seed) const {
    const auto& root_value = value(root);
    if (seed.shape() != root_value.shape()) {
      throw ShapeError("backward seed shape " + shape_string(seed.shape()) + " does not match root shape " +
                       shape_string(root_value.shape()));
    }
    std::vector<TensorT> grads(nodes_.size());
    grads[static_cast<std::size_t>(root.id)] = seed;
    for (int id = root.id; id >= 0; --id) {
      const Node& n = nodes_[static_cast<std::size_t>(id)];
      TensorT& g = grads[static_cast<std::size_t>(id)];
      if (g.empty() || !n.requires_grad || !n.backward) continue;
      std::vector<TensorT*> grad_in(n.inputs.size(), nullptr);
      for (std::size_t i = 0; i < n.inputs.size(); ++i) {
        const auto in_id = static_cast<std::size_t>(n.inputs[i]);
        if (!nodes_[in_id].requires_grad) continue;
        if (grads[in_id].empty()) grads[in_id] = TensorT(nodes_[in_id].value.shape(), Scalar(0));
        grad_in[i] = &grads[in_id];
      }
      n.backward(gather_inputs(n), n.value, n.saved, g, grad_in);
    }
    return Gradients<Scalar>(this, std::move(grads));
  }

  Gradients<Scalar> backward(VarT root) const {
    if (value(root).size() != 1) {
      throw ShapeError("backward without a seed needs a scalar root, got " + shape_string(value(root).shape()));
    }
    return backward(root, TensorT(value(root).shape(), Scalar(1)));
  }

  /// Re-evaluates every recorded node from the stored sources and returns
  /// the recomputed value of `root`. Does not modify the tape.
  TensorT replay(VarT root) const {
    std::vector<TensorT> values(static_cast<std::size_t>(root.id) + 1);
    for (int id = 0; id <= root.id; ++id) {
      const Node& n = nodes_[static_cast<std::size_t>(id)];
      if (!n.forward) {
        values[static_cast<std::size_t>(id)] = n.value;
        continue;
      }
      Inputs in;
      in.reserve(n.inputs.size());
      for (int i : n.inputs) in.push_back(&values[static_cast<std::size_t>(i)]);
      Saved scratch;
      values[static_cast<std::size_t>(id)] = n.forward(in, scratch);
    }
    return values.back();
  }

 private:
  VarT push_source(OpKind kind, TensorT value, bool requires_grad) {
    nodes_.push_back(Node{kind, {}, std::move(value), {}, nullptr, nullptr, requires_grad});
    return VarT{this, static_cast<int>(nodes_.size()) - 1};
  }

  Inputs gather_inputs(const Node& n) const {
    Inputs in;
    in.reserve(n.inputs.size());
    for (int i : n.inputs) in.push_back(&nodes_[static_cast<std::size_t>(i)].value);
    return in;
  }

  std::deque<Node> nodes_;
};

template <typename Scalar>
Gradients<Scalar> backward(const Tape<Scalar>& tape, Var<Scalar> root, const Tensor<Scalar>& seed) {
  return tape.backward(root, seed);
}

inline std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::leaf: return "leaf";
    case OpKind::constant: return "constant";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::scale: return "scale";
    case OpKind::add_scalar: return "add_scalar";
    case OpKind::bias_add: return "bias_add";
    case OpKind::matmul: return "matmul";
    case OpKind::conv2d: return "conv2d";
    case OpKind::layer_norm: return "layer_norm";
    case OpKind::gelu: return "gelu";
    case OpKind::softmax: return "softmax";
    case OpKind::log_softmax: return "log_softmax";
    case OpKind::global_avg_pool: return "global_avg_pool";
    case OpKind::avg_pool2d: return "avg_pool2d";
    case OpKind::l2_normalize: return "l2_normalize";
    case OpKind::norm: return "norm";
    case OpKind::gather: return "gather";
    case OpKind::reshape: return "reshape";
    case OpKind::concat: return "concat";
    case OpKind::sum: return "sum";
    case OpKind::mean: return "mean";
    case OpKind::exp: return "exp";
    case OpKind::relu: return "relu";
    case OpKind::square: return "square";
  }
  return "unknown";
}

}  // namespace cvd
