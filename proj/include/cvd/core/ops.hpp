#pragma once

// Differentiable operations on Var<Scalar>. Each op records a forward
// closure (pure in its inputs) and a backward closure that accumulates
// into the input gradients.

#include "cvd/core/tape.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

namespace cvd {

namespace detail {

struct AxisSplit {
  Index outer;
  Index n;
  Index inner;
};

inline AxisSplit split_at(const Shape& shape, Index axis) {
  AxisSplit s{1, shape[static_cast<std::size_t>(axis)], 1};
  for (Index i = 0; i < axis; ++i) s.outer *= shape[static_cast<std::size_t>(i)];
  for (Index i = axis + 1; i < static_cast<Index>(shape.size()); ++i) s.inner *= shape[static_cast<std::size_t>(i)];
  return s;
}

inline Index normalize_axis(Index axis, Index rank, const char* op) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(rank));
  }
  return axis;
}

template <typename Scalar>
Scalar normal_cdf(Scalar x) {
  return Scalar(0.5) * std::erfc(-x / std::numbers::sqrt2_v<Scalar>);
}

template <typename Scalar>
Scalar normal_pdf(Scalar x) {
  return std::exp(Scalar(-0.5) * x * x) / std::sqrt(Scalar(2) * std::numbers::pi_v<Scalar>);
}

}  // namespace detail

template <typename Scalar>
using Inputs = typename Tape<Scalar>::Inputs;
template <typename Scalar>
using Saved = typename Tape<Scalar>::Saved;
template <typename Scalar>
using GradIn = std::vector<Tensor<Scalar>*>;

// ---------------------------------------------------------------------------
// Elementwise arithmetic. The only broadcasting rule is scalar-with-array.

template <typename Scalar>
Var<Scalar> add(Var<Scalar> a, Var<Scalar> b) {
  const Index na = a.size(), nb = b.size();
  if (a.shape() != b.shape() && na != 1 && nb != 1) {
    throw ShapeError("add: shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()) + " differ");
  }
  return a.tape->record(
      OpKind::add, {a, b},
      [](const Inputs<Scalar>& in, Saved<Scalar>&) {
        const auto& x = *in[0];
        const auto& y = *in[1];
        if (x.size() == y.size()) return Tensor<Scalar>(x.shape(), (x.values() + y.values()).eval());
        if (y.size() == 1) return Tensor<Scalar>(x.shape(), (x.values().array() + y[0]).matrix().eval());
        return Tensor<Scalar>(y.shape(), (y.values().array() + x[0]).matrix().eval());
      },
      [](const Inputs<Scalar>& in, const Tensor<Scalar>&, const Saved<Scalar>&, const Tensor<Scalar>& g,
         const GradIn<Scalar>& gin) {
        for (int k = 0; k < 2; ++k) {
          if (!gin[k]) continue;
          if (in[k]->size() == g.size()) {
            gin[k]->values() += g.values();
          } else {
            (*gin[k])[0] += g.values().sum();
          }
        }
      });
}

template <typename Scalar>
Var<Scalar> scale(Var<Scalar> a, Scalar c) {
  return a.tape->record(
      OpKind::scale, {a},
      [c](const Inputs<Scalar>& in, Saved<Scalar>&) {
        return Tensor<Scalar>(in[0]->shape(), (in[0]->values() * c).eval());
      },
      [c](const Inputs<Scalar>&, const Tensor<Scalar>&, const Saved<Scalar>&, const Tensor<Scalar>& g,
          const GradIn<Scalar>& gin) {
        if (gin[0]) gin[0]->values() += g.values() * c;
      });
}

template <typename Scalar>
Var<Scalar> add_scalar(Var<Scalar> a, Scalar c) {
  return a.tape->record(
      OpKind::add_scalar, {a},
      [c](const Inputs<Scalar>& in, Saved<Scalar>&) {
        return Tensor<Scalar>(in[0]->shape(), (in[0]->values().array() + c).matrix().eval());
      },
      [](const Inputs<Scalar>&, const Tensor<Scalar>&, const Saved<Scalar>&, const Tensor<Scalar>& g,
         const GradIn<Scalar>& gin) {
        if (gin[0]) gin[0]->values() += g.values();
      });
}

template <typename Scalar>
Var<Scalar> sub(Var<Scalar> a, Var<Scalar> b) {
  const Index na = a.size(), nb = b.size();
  if (a.shape() != b.shape() && na != 1 && nb != 1) {
    throw ShapeError("sub: shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()) + " differ");
  }
  return a.tape->record(
      OpKind::sub, {a, b},
      [](const Inputs<Scalar>& in, Saved<Scalar>&) {
        const auto& x = *in[0];
        const auto& y = *in[1];
        if (x.size() == y.size()) return Tensor<Scalar>(x.shape(), (x.values() - y.values()).eval());
        if (y.size() == 1) return Tensor<Scalar>(x.shape(), (x.values().array() - y[0]).matrix().eval());
        return Tensor<Scalar>(y.shape(), (x[0] - y.values().array()).matrix().eval());
      },
      [](const Inputs<Scalar>& in, const Tensor<Scalar>&, const Saved<Scalar>&, const Tensor<Scalar>& g,
         const GradIn<Scalar>& gin) {
        const Scalar sign[2] = {Scalar(1), Scalar(-1)};
        for (int k = 0; k < 2; ++k) {
          if (!gin[k]) continue;
          if (in[k]->size() == g.size()) {
            gin[k]->values() += sign[k] * g.values();
          } else {
            (*gin[k])[0] += sign[k] * g.values().sum();
          }
        }
      });
}

template <typename Scalar>
Var<Scalar> mul(Var<Scalar> a, Var<Scalar> b) {
  const Index na = a.size(), nb = b.size();
  if (a.shape() != b.shape() && na != 1 && nb != 1) {
    throw ShapeError("mul: shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()) + " differ");
  }
  return a.tape->record(
      OpKind::mul, {a, b},
      [](const Inputs<Scalar>& in, Saved<Scalar>&) {
        const auto& x = *in[0];
        const auto& y = *in[1];
        if (x.size() == y.size()) return Tensor<Scalar>(x.shape(), x.values().cwiseProduct(y.values()).eval());
        if (y.size() == 1) return Tensor<Scalar>(x.shape(), (x.values() * y[0]).eval());
        return Tensor<Scalar>(y.shape(), (y.values() * x[0]).eval());
      },
      [](const Inputs<Scalar>& in, const Tensor<Scalar>&, const Saved<Scalar>&, const Tensor<Scalar>& g,
         const GradIn<Scalar>& gin) {
        for (int k = 0; k < 2; ++k) {
          if (!gin[k]) continue;
          const auto& other = *in[1 - k];
          if (in[k]->size() == g.size()) {
            if (other.size() == g.size()) {
              gin[k]->values() += g.values().cwiseProduct(other.values());
            } else {
              gin[k]->values() += g.values() * other[0];
            }
          } else {
            (*gin[k])[0] += g.values().dot(other.values());
          }
        }
      });
}

template <typename Scalar>
Var<Scalar> operator+(Var<Scalar> a, Var<Scalar> b) { return add(a, b); }
template <typename Scalar>
Var<Scalar> operator-(Var<Scalar> a, Var<Scalar> b) { return sub(a, b); }
template <typename Scalar>
Var<Scalar> operator*(Var<Scalar> a, Var<Scalar> b) { return mul(a, b); }
template <typename Scalar>
Var<Scalar> operator*(Var<Scalar> a, Scalar c) { return scale(a, c); }
template <typename Scalar>
Var<Scalar> operator*(Scalar c, Var<Scalar> a) { return scale(a, c); }

namespace detail {

template <typename Scalar, typename F, typename DF>
Var<Scalar> unary(OpKind kind, Var<Scalar> a, F f, DF df) {
  return a.tape->record(
      kind, {a},
      [f](const Inputs<Scalar>& in, Saved<Scalar>&) {
        return Tensor<Scalar>(in[0]->shape(), in[0]->values().unaryExpr(f).eval());
      },
      [df](const Inputs<Scalar>& in, const Tensor<Scalar>& out, const Saved<Scalar>&, const Tensor<Scalar>& g,
           const GradIn<Scalar>& gin) {
        if (!gin[0]) return;
        auto& gx = gin[0]->values();
        const auto& x = in[0]->values();
        for (Index i = 0; i < x.size(); ++i) gx[i] += g[i] * df(x[i], out[i]);
      });
}

}  // namespace detail

/// Exact GELU, x * Phi(x).
template <typename Scalar>
Var<Scalar> gelu(Var<Scalar> a) {
  return detail::unary(
      OpKind::gelu, a, [](Scalar x) { return x * detail::normal_cdf(x); },
      [](Scalar x, Scalar) { return detail::normal_cdf(x) + x * detail::normal_pdf(x); });
}

template <typename Scalar>
Var<Scalar> exp(Var<Scalar> a) {
  return detail::unary(
      OpKind::exp, a, [](Scalar x) { return std::exp(x); }, [](Scalar, Scalar y) { return y; });
}

template <typename Scalar>
Var<Scalar> relu(Var<Scalar> a) {
  return detail::unary(
      OpKind::relu, a, [](Scalar x) { return x > Scalar(0) ? x : Scalar(0); },
      [](Scalar x, Scalar) { return x > Scalar(0) ? Scalar(1) : Scalar(0); });
}

template <typename Scalar>
Var<Scalar> square(Var<Scalar> a) {
  return detail::unary(
      OpKind::square, a, [](Scalar x) { return x * x; }, [](Scalar x, Scalar) { return Scalar(2) * x; });
}

// ---------------------------------------------------------------------------
// Reductions.

template <typename Scalar>
Var<Scalar> sum(Var<Scalar> a) {
  return a.tape->record(
      OpKind::sum, {a},
      [](const Inputs<Scalar>& in, Saved<Scalar>&) { return Tensor<Scalar>::scalar(in[0]->values().sum()); },
      [](const Inputs<Scalar>&, const Tensor<Scalar>&, const Saved<Scalar>&, const Tensor<Scalar>& g,
         const GradIn<Scalar>& gin) {
        if (gin[0]) gin[0]->values().array() += g[0];
      });
}

template <typename Scalar>
Var<Scalar> mean(Var<Scalar> a) {
  return a.tape->record(
      OpKind::mean, {a},
      [](const Inputs<Scalar>& in, Saved<Scalar>&) { return Tensor<Scalar>::scalar(in[0]->values().mean()); },
      [](const Inputs<Scalar>& in, const Tensor<Scalar>&, const Saved<Scalar>&, const Tensor<Scalar>& g,
         const GradIn<Scalar>& gin) {
        if (gin[0]) gin[0]->values().array() += g[0] / static_cast<Scalar>(in[0]->size());
      });
}

/// Euclidean norm of all entries; the subgradient at the origin is zero.
template <typename Scalar>
Var<Scalar> norm(Var<Scalar> a) {
  return a.tape->record(
      OpKind::norm, {a},
      [](const Inputs<Scalar>& in, Saved<Scalar>&) { return Tensor<Scalar>::scalar(in[0]->values().norm()); },
      [](const Inputs<Scalar>& in, const Tensor<Scalar>& out, const Saved<Scalar>&, const Tensor<Scalar>& g,
         const GradIn<Scalar>& gin) {
        if (!gin[0] || out[0] == Scalar(0)) return;
        gin[0]->values() += in[0]->values() * (g[0] / out[0]);
      });
}

// ---------------------------------------------------------------------------
// Shape manipulation.

template <typename Scalar>
Var<Scalar> reshape(Var<Scalar> a, Shape shape) {
  if (shape_size(shape) != a.size()) {
    throw ShapeError("reshape: cannot view " + shape_string(a.shape()) + " as " + shape_string(shape));
  }
  return a.tape->record(
      OpKind::reshape, {a},
      [shape](const Inputs<Scalar>& in, Saved<Scalar>&) { return in[0]->reshaped(shape); },
      [](const Inputs<Scalar>&, const Tensor<Scalar>&, const Saved<Scalar>&, const Tensor<Scalar>& g,
         const GradIn<Scalar>& gin) {
        if (gin[0]) gin[0]->values() += g.values();
      });
}

using IndexMap = std::shared_ptr<const std::vector<Index>>;

/// out.flat[i] = a.flat[index[i]]; the backward pass scatter-adds, so an
/// index may repeat.
template <typename Scalar>
Var<Scalar> gather(Var<Scalar> a, Shape shape, IndexMap index) {
  if (static_cast<Index>(index->size()) != shape_size(shape)) {
    throw ShapeError("gather: index length does not match output shape " + shape_string(shape));
  }
  const Index n = a.size();
  for (Index i : *index) {
    if (i < 0 || i >= n) throw ShapeError("gather: source index " + std::to_string(i) + " out of range");
  }
  return a.tape->record(
      OpKind::gather, {a},
      [shape, index](const Inputs<Scalar>& in, Saved<Scalar>&) {
        Tensor<Scalar> out(shape);
        const auto& src = *in[0];
        const auto& ix = *index;
        for (std::size_t i = 0; i < ix.size(); ++i) out[static_cast<Index>(i)] = src[ix[i]];
        return out;
      },
      [index](const Inputs<Scalar>&, const Tensor<Scalar>&, const Saved<Scalar>&, const Tensor<Scalar>& g,
              const GradIn<Scalar>& gin) {
        if (!gin[0]) return;
        auto& dst = *gin[0];
        const auto& ix = *index;
        for (std::size_t i = 0; i < ix.size(); ++i) dst[ix[i]] += g[static_cast<Index>(i)];
      });
}

/// Permutes axes: out axis i is input axis perm[i].
template <typename Scalar>
Var<Scalar> permute(Var<Scalar> a, const std::vector<Index>& perm) {
  const Shape& in_shape = a.shape();
  const auto r = in_shape.size();
  if (perm.size() != r) throw ShapeError("permute: permutation rank mismatch");
  Shape out_shape(r);
  std::vector<Index> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * in_shape[i];
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = in_shape.at(static_cast<std::size_t>(perm[i]));
  auto index = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(a.size()));
  std::vector<Index> counter(r, 0);
  for (auto& slot : *index) {
    Index src = 0;
    for (std::size_t i = 0; i < r; ++i) src += counter[i] * in_strides[static_cast<std::size_t>(perm[i])];
    slot = src;
    for (std::size_t i = r; i-- > 0;) {
      if (++counter[i] < out_shape[i]) break;
      counter[i] = 0;
    }
  }
  return gather(a, out_shape, IndexMap(std::move(index)));
}

template <typename Scalar>
Var<Scalar> transpose(Var<Scalar> a) {
  if (a.value().rank() != 2) throw ShapeError("transpose: expected rank 2, got " + shape_string(a.shape()));
  return permute(a, {1, 0});
}

/// Half-open range [begin, end) along `axis`.
template <typename Scalar>
Var<Scalar> slice(Var<Scalar> a, Index axis, Index begin, Index end) {
  axis = detail::normalize_axis(axis, a.value().rank(), "slice");
  const auto s = detail::split_at(a.shape(), axis);
  if (begin < 0 || end > s.n || begin >= end) {
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) + ") invalid for axis " +
                     std::to_string(axis) + " of extent " + std::to_string(s.n));
  }
  Shape out_shape = a.shape();
  out_shape[static_cast<std::size_t>(axis)] = end - begin;
  auto index = std::make_shared<std::vector<Index>>();
  index->reserve(static_cast<std::size_t>(shape_size(out_shape)));
  for (Index o = 0; o < s.outer; ++o)
    for (Index k = begin; k < end; ++k)
      for (Index i = 0; i < s.inner; ++i) index->push_back((o * s.n + k) * s.inner + i);
  return gather(a, out_shape, IndexMap(std::move(index)));
}

template <typename Scalar>
Var<Scalar> concat(const std::vector<Var<Scalar>>& parts, Index axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts.front().shape();
  axis = detail::normalize_axis(axis, static_cast<Index>(first.size()), "concat");
  Shape out_shape = first;
  out_shape[static_cast<std::size_t>(axis)] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = static_cast<Index>(i) == axis || s[i] == first[i];
    if (!ok) throw ShapeError("concat: shape " + shape_string(s) + " incompatible with " + shape_string(first));
    out_shape[static_cast<std::size_t>(axis)] += s[static_cast<std::size_t>(axis)];
  }
  return parts.front().tape->record(
      OpKind::concat, parts,
      [axis, out_shape](const Inputs<Scalar>& in, Saved<Scalar>&) {
        Tensor<Scalar> out(out_shape);
        const auto so = detail::split_at(out_shape, axis);
        Index offset = 0;
        for (const auto* t : in) {
          const auto st = detail::split_at(t->shape(), axis);
          for (Index o = 0; o < st.outer; ++o) {
            std::copy_n(t->data() + o * st.n * st.inner, st.n * st.inner,
                        out.data() + (o * so.n + offset) * so.inner);
          }
          offset += st.n;
        }
        return out;
      },
      [axis](const Inputs<Scalar>& in, const Tensor<Scalar>& out, const Saved<Scalar>&, const Tensor<Scalar>& g,
             const GradIn<Scalar>& gin) {
        const auto so = detail::split_at(out.shape(), axis);
        Index offset = 0;
        for (std::size_t k = 0; k < in.size(); ++k) {
          const auto st = detail::split_at(in[k]->shape(), axis);
          if (gin[k]) {
            for (Index o = 0; o < st.outer; ++o) {
              const Scalar* src = g.data() + (o * so.n + offset) * so.inner;
              Scalar* dst = gin[k]->data() + o * st.n * st.inner;
              for (Index i = 0; i < st.n * st.inner; ++i) dst[i] += src[i];
            }
          }
          offset += st.n;
        }
      });
}

// ---------------------------------------------------------------------------
// Linear algebra.

/// Rank-2 product, or batched rank-3 product when both operands are rank 3
/// (a rank-2 right operand is shared across the batch).
template <typename Scalar>
Var<Scalar> matmul(Var<Scalar> a, Var<Scalar> b, bool trans_a = false, bool trans_b = false) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  const bool batched = sa.size() == 3;
  if (!(sa.size() == 2 || sa.size() == 3) || !(sb.size() == 2 || sb.size() == 3) ||
      (sa.size() == 2 && sb.size() == 3)) {
    throw ShapeError("matmul: unsupported ranks " + shape_string(sa) + " x " + shape_string(sb));
  }
  const Index batch = batched ? sa[0] : 1;
  const bool shared_b = sb.size() == 2;
  if (!shared_b && sb[0] != batch) {
    throw ShapeError("matmul: batch axis 0 differs: " + shape_string(sa) + " x " + shape_string(sb));
  }
  const Index ar = sa[sa.size() - 2], ac = sa[sa.size() - 1];
  const Index br = sb[sb.size() - 2], bc = sb[sb.size() - 1];
  const Index m = trans_a ? ac : ar, k = trans_a ? ar : ac;
  const Index kb = trans_b ? bc : br, n = trans_b ? br : bc;
  if (k != kb) {
    throw ShapeError("matmul: contraction axis mismatch (" + std::to_string(k) + " vs " + std::to_string(kb) +
                     ") for " + shape_string(sa) + " x " + shape_string(sb));
  }
  Shape out_shape = batched ? Shape{batch, m, n} : Shape{m, n};
  return a.tape->record(
      OpKind::matmul, {a, b},
      [=](const Inputs<Scalar>& in, Saved<Scalar>&) {
        Tensor<Scalar> out(out_shape);
        for (Index t = 0; t < batch; ++t) {
          ConstMatrixMap<Scalar> A(in[0]->data() + t * ar * ac, ar, ac);
          ConstMatrixMap<Scalar> B(in[1]->data() + (shared_b ? 0 : t * br * bc), br, bc);
          MatrixMap<Scalar> C(out.data() + t * m * n, m, n);
          if (trans_a && trans_b) C.noalias() = A.transpose() * B.transpose();
          else if (trans_a) C.noalias() = A.transpose() * B;
          else if (trans_b) C.noalias() = A * B.transpose();
          else C.noalias() = A * B;
        }
        return out;
      },
      [=](const Inputs<Scalar>& in, const Tensor<Scalar>&, const Saved<Scalar>&, const Tensor<Scalar>& g,
          const GradIn<Scalar>& gin) {
        for (Index t = 0; t < batch; ++t) {
          ConstMatrixMap<Scalar> A(in[0]->data() + t * ar * ac, ar, ac);
          ConstMatrixMap<Scalar> B(in[1]->data() + (shared_b ? 0 : t * br * bc), br, bc);
          ConstMatrixMap<Scalar> G(g.data() + t * m * n, m, n);
          if (gin[0]) {
            MatrixMap<Scalar> dA(gin[0]->data() + t * ar * ac, ar, ac);
            // C = op(A) op(B): d op(A) = G op(B)^T.
            if (!trans_a && !trans_b) dA.noalias() += G * B.transpose();
            else if (!trans_a && trans_b) dA.noalias() += G * B;
            else if (trans_a && !trans_b) dA.noalias() += B * G.transpose();
            else dA.noalias() += B.transpose() * G.transpose();
          }
          if (gin[1]) {
            MatrixMap<Scalar> dB(gin[1]->data() + (shared_b ? 0 : t * br * bc), br, bc);
            if (!trans_a && !trans_b) dB.noalias() += A.transpose() * G;
            else if (!trans_a && trans_b) dB.noalias() += G.transpose() * A;
            else if (trans_a && !trans_b) dB.noalias() += A * G;
            else dB.noalias() += G.transpose() * A.transpose();
          }
        }
      });
}

/// Adds b[j] to every entry whose index along `axis` is j.
template <typename Scalar>
Var<Scalar> bias_add(Var<Scalar> x, Var<Scalar> b, Index axis) {
  axis = detail::normalize_axis(axis, x.value().rank(), "bias_add");
  const auto s = detail::split_at(x.shape(), axis);
  if (b.size() != s.n) {
    throw ShapeError("bias_add: bias length " + std::to_string(b.size()) + " does not match axis " +
                     std::to_string(axis) + " extent " + std::to_string(s.n));
  }
  return x.tape->record(
      OpKind::bias_add, {x, b},
      [s](const Inputs<Scalar>& in, Saved<Scalar>&) {
        Tensor<Scalar> out = *in[0];
        const auto& bias = *in[1];
        for (Index o = 0; o < s.outer; ++o)
          for (Index j = 0; j < s.n; ++j) {
            Scalar* p = out.data() + (o * s.n + j) * s.inner;
            for (Index i = 0; i < s.inner; ++i) p[i] += bias[j];
          }
        return out;
      },
      [s](const Inputs<Scalar>&, const Tensor<Scalar>&, const Saved<Scalar>&, const Tensor<Scalar>& g,
          const GradIn<Scalar>& gin) {
        if (gin[0]) gin[0]->values() += g.values();
        if (!gin[1]) return;
        auto& gb = *gin[1];
        for (Index o = 0; o < s.outer; ++o)
          for (Index j = 0; j < s.n; ++j) {
            const Scalar* p = g.data() + (o * s.n + j) * s.inner;
            Scalar acc = 0;
            for (Index i = 0; i < s.inner; ++i) acc += p[i];
            gb[j] += acc;
          }
      });
}

/// Row-wise affine map: x[N, in] -> x W^T + b with W[out, in], b[out].
template <typename Scalar>
Var<Scalar> linear(Var<Scalar> x, Var<Scalar> weight, Var<Scalar> bias) {
  return bias_add(matmul(x, weight, false, true), bias, -1);
}

// ---------------------------------------------------------------------------
// Convolution and pooling on [C, H, W] feature maps.

struct Conv2dSpec {
  Index stride = 1;
  Index padding = 0;
  Index groups = 1;
};

namespace detail {

struct ConvGeometry {
  Index cin, h, w, cout, cg, kh, kw, ho, wo, stride, pad, groups;
};

inline ConvGeometry conv_geometry(const Shape& x, const Shape& k, const Conv2dSpec& spec) {
  if (x.size() != 3) throw ShapeError("conv2d: input must be [C,H,W], got " + shape_string(x));
  if (k.size() != 4) throw ShapeError("conv2d: kernel must be [C_out,C_in/groups,kh,kw], got " + shape_string(k));
  if (spec.stride < 1 || spec.padding < 0 || spec.groups < 1) {
    throw ShapeError("conv2d: stride/groups must be positive and padding non-negative");
  }
  ConvGeometry g{x[0], x[1], x[2], k[0], k[1], k[2], k[3], 0, 0, spec.stride, spec.padding, spec.groups};
  if (g.cin % g.groups != 0) {
    throw ShapeError("conv2d: input channel axis 0 (" + std::to_string(g.cin) + ") not divisible by groups " +
                     std::to_string(g.groups));
  }
  if (g.cout % g.groups != 0) {
    throw ShapeError("conv2d: kernel output-channel axis 0 (" + std::to_string(g.cout) +
                     ") not divisible by groups " + std::to_string(g.groups));
  }
  if (g.cg * g.groups != g.cin) {
    throw ShapeError("conv2d: kernel input-channel axis 1 is " + std::to_string(g.cg) + ", expected " +
                     std::to_string(g.cin / g.groups));
  }
  if (g.h + 2 * g.pad < g.kh) {
    throw ShapeError("conv2d: spatial axis 1 (H=" + std::to_string(g.h) + ") smaller than kernel height " +
                     std::to_string(g.kh));
  }
  if (g.w + 2 * g.pad < g.kw) {
    throw ShapeError("conv2d: spatial axis 2 (W=" + std::to_string(g.w) + ") smaller than kernel width " +
                     std::to_string(g.kw));
  }
  g.ho = (g.h + 2 * g.pad - g.kh) / g.stride + 1;
  g.wo = (g.w + 2 * g.pad - g.kw) / g.stride + 1;
  return g;
}

// Column matrix [cg*kh*kw, ho*wo] for the channels of one group.
template <typename Scalar>
void im2col(const Scalar* x, const ConvGeometry& g, Index c0, RowMatrix<Scalar>& cols) {
  cols.resize(g.cg * g.kh * g.kw, g.ho * g.wo);
  for (Index c = 0; c < g.cg; ++c)
    for (Index ky = 0; ky < g.kh; ++ky)
      for (Index kx = 0; kx < g.kw; ++kx) {
        Scalar* row = cols.data() + ((c * g.kh + ky) * g.kw + kx) * g.ho * g.wo;
        const Scalar* plane = x + (c0 + c) * g.h * g.w;
        for (Index oy = 0; oy < g.ho; ++oy) {
          const Index iy = oy * g.stride - g.pad + ky;
          for (Index ox = 0; ox < g.wo; ++ox) {
            const Index ix = ox * g.stride - g.pad + kx;
            row[oy * g.wo + ox] = (iy >= 0 && iy < g.h && ix >= 0 && ix < g.w) ? plane[iy * g.w + ix] : Scalar(0);
          }
        }
      }
}

template <typename Scalar>
void col2im_add(const RowMatrix<Scalar>& cols, const ConvGeometry& g, Index c0, Scalar* x) {
  for (Index c = 0; c < g.cg; ++c)
    for (Index ky = 0; ky < g.kh; ++ky)
      for (Index kx = 0; kx < g.kw; ++kx) {
        const Scalar* row = cols.data() + ((c * g.kh + ky) * g.kw + kx) * g.ho * g.wo;
        Scalar* plane = x + (c0 + c) * g.h * g.w;
        for (Index oy = 0; oy < g.ho; ++oy) {
          const Index iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          for (Index ox = 0; ox < g.wo; ++ox) {
            const Index ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.w) plane[iy * g.w + ix] += row[oy * g.wo + ox];
          }
        }
      }
}

inline bool is_pointwise(const ConvGeometry& g) {
  return g.groups == 1 && g.kh == 1 && g.kw == 1 && g.stride == 1 && g.pad == 0;
}

inline bool is_depthwise(const ConvGeometry& g) { return g.groups == g.cin && g.cout == g.cin; }

template <typename Scalar>
Tensor<Scalar> conv2d_forward(const Tensor<Scalar>& x, const Tensor<Scalar>& k, const ConvGeometry& g) {
  Tensor<Scalar> out(Shape{g.cout, g.ho, g.wo});
  if (is_pointwise(g)) {
    ConstMatrixMap<Scalar> X(x.data(), g.cin, g.h * g.w);
    ConstMatrixMap<Scalar> K(k.data(), g.cout, g.cin);
    MatrixMap<Scalar> Y(out.data(), g.cout, g.ho * g.wo);
    Y.noalias() = K * X;
    return out;
  }
  if (is_depthwise(g)) {
    for (Index c = 0; c < g.cin; ++c) {
      const Scalar* plane = x.data() + c * g.h * g.w;
      const Scalar* kern = k.data() + c * g.kh * g.kw;
      Scalar* dst = out.data() + c * g.ho * g.wo;
      for (Index oy = 0; oy < g.ho; ++oy)
        for (Index ox = 0; ox < g.wo; ++ox) {
          Scalar acc = 0;
          for (Index ky = 0; ky < g.kh; ++ky) {
            const Index iy = oy * g.stride - g.pad + ky;
            if (iy < 0 || iy >= g.h) continue;
            for (Index kx = 0; kx < g.kw; ++kx) {
              const Index ix = ox * g.stride - g.pad + kx;
              if (ix >= 0 && ix < g.w) acc += kern[ky * g.kw + kx] * plane[iy * g.w + ix];
            }
          }
          dst[oy * g.wo + ox] = acc;
        }
    }
    return out;
  }
  const Index cog = g.cout / g.groups;
  const Index kcols = g.cg * g.kh * g.kw;
  RowMatrix<Scalar> cols;
  for (Index grp = 0; grp < g.groups; ++grp) {
    im2col(x.data(), g, grp * g.cg, cols);
    ConstMatrixMap<Scalar> K(k.data() + grp * cog * kcols, cog, kcols);
    MatrixMap<Scalar> Y(out.data() + grp * cog * g.ho * g.wo, cog, g.ho * g.wo);
    Y.noalias() = K * cols;
  }
  return out;
}

template <typename Scalar>
void conv2d_backward(const Tensor<Scalar>& x, const Tensor<Scalar>& k, const ConvGeometry& g,
                     const Tensor<Scalar>& grad, Tensor<Scalar>* gx, Tensor<Scalar>* gk) {
  if (is_pointwise(g)) {
    ConstMatrixMap<Scalar> X(x.data(), g.cin, g.h * g.w);
    ConstMatrixMap<Scalar> K(k.data(), g.cout, g.cin);
    ConstMatrixMap<Scalar> G(grad.data(), g.cout, g.ho * g.wo);
    if (gx) MatrixMap<Scalar>(gx->data(), g.cin, g.h * g.w).noalias() += K.transpose() * G;
    if (gk) MatrixMap<Scalar>(gk->data(), g.cout, g.cin).noalias() += G * X.transpose();
    return;
  }
  if (is_depthwise(g)) {
    for (Index c = 0; c < g.cin; ++c) {
      const Scalar* plane = x.data() + c * g.h * g.w;
      const Scalar* kern = k.data() + c * g.kh * g.kw;
      const Scalar* gp = grad.data() + c * g.ho * g.wo;
      Scalar* gxp = gx ? gx->data() + c * g.h * g.w : nullptr;
      Scalar* gkp = gk ? gk->data() + c * g.kh * g.kw : nullptr;
      for (Index oy = 0; oy < g.ho; ++oy)
        for (Index ox = 0; ox < g.wo; ++ox) {
          const Scalar go = gp[oy * g.wo + ox];
          for (Index ky = 0; ky < g.kh; ++ky) {
            const Index iy = oy * g.stride - g.pad + ky;
            if (iy < 0 || iy >= g.h) continue;
            for (Index kx = 0; kx < g.kw; ++kx) {
              const Index ix = ox * g.stride - g.pad + kx;
              if (ix < 0 || ix >= g.w) continue;
              if (gxp) gxp[iy * g.w + ix] += kern[ky * g.kw + kx] * go;
              if (gkp) gkp[ky * g.kw + kx] += plane[iy * g.w + ix] * go;
            }
          }
        }
    }
    return;
  }
  const Index cog = g.cout / g.groups;
  const Index kcols = g.cg * g.kh * g.kw;
  RowMatrix<Scalar> cols;
  RowMatrix<Scalar> gcols;
  for (Index grp = 0; grp < g.groups; ++grp) {
    ConstMatrixMap<Scalar> G(grad.data() + grp * cog * g.ho * g.wo, cog, g.ho * g.wo);
    ConstMatrixMap<Scalar> K(k.data() + grp * cog * kcols, cog, kcols);
    if (gk) {
      im2col(x.data(), g, grp * g.cg, cols);
      MatrixMap<Scalar>(gk->data() + grp * cog * kcols, cog, kcols).noalias() += G * cols.transpose();
    }
    if (gx) {
      gcols.noalias() = K.transpose() * G;
      col2im_add(gcols, g, grp * g.cg, gx->data());
    }
  }
}

}  // namespace detail

/// Zero-padded 2-D convolution of x[C_in,H,W] with k[C_out,C_in/groups,kh,kw].
template <typename Scalar>
Var<Scalar> conv2d(Var<Scalar> x, Var<Scalar> k, Conv2dSpec spec = {}) {
  const auto geom = detail::conv_geometry(x.shape(), k.shape(), spec);
  return x.tape->record(
      OpKind::conv2d, {x, k},
      [geom](const Inputs<Scalar>& in, Saved<Scalar>&) { return detail::conv2d_forward(*in[0], *in[1], geom); },
      [geom](const Inputs<Scalar>& in, const Tensor<Scalar>&, const Saved<Scalar>&, const Tensor<Scalar>& g,
             const GradIn<Scalar>& gin) { detail::conv2d_backward(*in[0], *in[1], geom, g, gin[0], gin[1]); });
}

/// Per-channel mean over H and W: [C,H,W] -> [C].
template <typename Scalar>
Var<Scalar> global_avg_pool(Var<Scalar> x) {
  if (x.value().rank() != 3) throw ShapeError("global_avg_pool: expected [C,H,W], got " + shape_string(x.shape()));
  const Index c = x.dim(0), hw = x.dim(1) * x.dim(2);
  return x.tape->record(
      OpKind::global_avg_pool, {x},
      [c, hw](const Inputs<Scalar>& in, Saved<Scalar>&) {
        ConstMatrixMap<Scalar> X(in[0]->data(), c, hw);
        return Tensor<Scalar>(Shape{c}, X.rowwise().mean().eval());
      },
      [c, hw](const Inputs<Scalar>&, const Tensor<Scalar>&, const Saved<Scalar>&, const Tensor<Scalar>& g,
              const GradIn<Scalar>& gin) {
        if (!gin[0]) return;
        MatrixMap<Scalar> G(gin[0]->data(), c, hw);
        G.colwise() += g.values() / static_cast<Scalar>(hw);
      });
}

/// Non-overlapping average pooling with window kh x kw on [C,H,W].
template <typename Scalar>
Var<Scalar> avg_pool2d(Var<Scalar> x, Index kh, Index kw) {
  const Shape& s = x.shape();
  if (s.size() != 3) throw ShapeError("avg_pool2d: expected [C,H,W], got " + shape_string(s));
  if (kh < 1 || kw < 1 || s[1] % kh != 0 || s[2] % kw != 0) {
    throw ShapeError("avg_pool2d: window " + std::to_string(kh) + "x" + std::to_string(kw) +
                     " does not tile spatial axes of " + shape_string(s));
  }
  const Index c = s[0], h = s[1], w = s[2], ho = h / kh, wo = w / kw;
  const Scalar inv = Scalar(1) / static_cast<Scalar>(kh * kw);
  return x.tape->record(
      OpKind::avg_pool2d, {x},
      [=](const Inputs<Scalar>& in, Saved<Scalar>&) {
        Tensor<Scalar> out(Shape{c, ho, wo});
        const auto& src = *in[0];
        for (Index ch = 0; ch < c; ++ch)
          for (Index y = 0; y < h; ++y)
            for (Index xx = 0; xx < w; ++xx) out[(ch * ho + y / kh) * wo + xx / kw] += src[(ch * h + y) * w + xx];
        out.values() *= inv;
        return out;
      },
      [=](const Inputs<Scalar>&, const Tensor<Scalar>&, const Saved<Scalar>&, const Tensor<Scalar>& g,
          const GradIn<Scalar>& gin) {
        if (!gin[0]) return;
        auto& gx = *gin[0];
        for (Index ch = 0; ch < c; ++ch)
          for (Index y = 0; y < h; ++y)
            for (Index xx = 0; xx < w; ++xx) gx[(ch * h + y) * w + xx] += g[(ch * ho + y / kh) * wo + xx / kw] * inv;
      });
}

// ---------------------------------------------------------------------------
// Normalization and probability maps.

/// Normalizes over `axis` (default last), then applies gamma/beta indexed
/// along that axis. Population variance.
template <typename Scalar>
Var<Scalar> layer_norm(Var<Scalar> x, Var<Scalar> gamma, Var<Scalar> beta, Index axis = -1,
                       Scalar eps = Scalar(1e-6)) {
  axis = detail::normalize_axis(axis, x.value().rank(), "layer_norm");
  const auto s = detail::split_at(x.shape(), axis);
  if (gamma.size() != s.n || beta.size() != s.n) {
    throw ShapeError("layer_norm: affine length must equal normalized axis extent " + std::to_string(s.n));
  }
  return x.tape->record(
      OpKind::layer_norm, {x, gamma, beta},
      [s, eps](const Inputs<Scalar>& in, Saved<Scalar>& saved) {
        const auto& src = *in[0];
        const auto& ga = *in[1];
        const auto& be = *in[2];
        Tensor<Scalar> out(src.shape());
        Tensor<Scalar> mu(Shape{s.outer * s.inner});
        Tensor<Scalar> rstd(Shape{s.outer * s.inner});
        for (Index o = 0; o < s.outer; ++o)
          for (Index i = 0; i < s.inner; ++i) {
            const Scalar* p = src.data() + o * s.n * s.inner + i;
            Scalar m = 0;
            for (Index j = 0; j < s.n; ++j) m += p[j * s.inner];
            m /= static_cast<Scalar>(s.n);
            Scalar v = 0;
            for (Index j = 0; j < s.n; ++j) {
              const Scalar d = p[j * s.inner] - m;
              v += d * d;
            }
            v /= static_cast<Scalar>(s.n);
            const Scalar r = Scalar(1) / std::sqrt(v + eps);
            Scalar* q = out.data() + o * s.n * s.inner + i;
            for (Index j = 0; j < s.n; ++j) q[j * s.inner] = (p[j * s.inner] - m) * r * ga[j] + be[j];
            mu[o * s.inner + i] = m;
            rstd[o * s.inner + i] = r;
          }
        saved = {std::move(mu), std::move(rstd)};
        return out;
      },
      [s](const Inputs<Scalar>& in, const Tensor<Scalar>&, const Saved<Scalar>& saved, const Tensor<Scalar>& g,
          const GradIn<Scalar>& gin) {
        const auto& src = *in[0];
        const auto& ga = *in[1];
        const auto& mu = saved[0];
        const auto& rstd = saved[1];
        std::vector<Scalar> xhat(static_cast<std::size_t>(s.n)), dxhat(static_cast<std::size_t>(s.n));
        for (Index o = 0; o < s.outer; ++o)
          for (Index i = 0; i < s.inner; ++i) {
            const Index base = o * s.n * s.inner + i;
            const Scalar m = mu[o * s.inner + i];
            const Scalar r = rstd[o * s.inner + i];
            Scalar mean_d = 0, mean_dx = 0;
            for (Index j = 0; j < s.n; ++j) {
              const Scalar xh = (src[base + j * s.inner] - m) * r;
              const Scalar gy = g[base + j * s.inner];
              xhat[static_cast<std::size_t>(j)] = xh;
              dxhat[static_cast<std::size_t>(j)] = gy * ga[j];
              mean_d += gy * ga[j];
              mean_dx += gy * ga[j] * xh;
              if (gin[1]) (*gin[1])[j] += gy * xh;
              if (gin[2]) (*gin[2])[j] += gy;
            }
            if (!gin[0]) continue;
            mean_d /= static_cast<Scalar>(s.n);
            mean_dx /= static_cast<Scalar>(s.n);
            for (Index j = 0; j < s.n; ++j) {
              const auto jj = static_cast<std::size_t>(j);
              (*gin[0])[base + j * s.inner] += r * (dxhat[jj] - mean_d - xhat[jj] * mean_dx);
            }
          }
      });
}

/// Max-shifted softmax along `axis`.
template <typename Scalar>
Var<Scalar> softmax(Var<Scalar> x, Index axis = -1) {
  axis = detail::normalize_axis(axis, x.value().rank(), "softmax");
  const auto s = detail::split_at(x.shape(), axis);
  return x.tape->record(
      OpKind::softmax, {x},
      [s](const Inputs<Scalar>& in, Saved<Scalar>&) {
        Tensor<Scalar> out(in[0]->shape());
        for (Index o = 0; o < s.outer; ++o)
          for (Index i = 0; i < s.inner; ++i) {
            const Scalar* p = in[0]->data() + o * s.n * s.inner + i;
            Scalar* q = out.data() + o * s.n * s.inner + i;
            Scalar mx = p[0];
            for (Index j = 1; j < s.n; ++j) mx = std::max(mx, p[j * s.inner]);
            Scalar z = 0;
            for (Index j = 0; j < s.n; ++j) z += (q[j * s.inner] = std::exp(p[j * s.inner] - mx));
            for (Index j = 0; j < s.n; ++j) q[j * s.inner] /= z;
          }
        return out;
      },
      [s](const Inputs<Scalar>&, const Tensor<Scalar>& out, const Saved<Scalar>&, const Tensor<Scalar>& g,
          const GradIn<Scalar>& gin) {
        if (!gin[0]) return;
        for (Index o = 0; o < s.outer; ++o)
          for (Index i = 0; i < s.inner; ++i) {
            const Index base = o * s.n * s.inner + i;
            Scalar dot = 0;
            for (Index j = 0; j < s.n; ++j) dot += g[base + j * s.inner] * out[base + j * s.inner];
            for (Index j = 0; j < s.n; ++j) {
              const Index k = base + j * s.inner;
              (*gin[0])[k] += out[k] * (g[k] - dot);
            }
          }
      });
}

template <typename Scalar>
Var<Scalar> log_softmax(Var<Scalar> x, Index axis = -1) {
  axis = detail::normalize_axis(axis, x.value().rank(), "log_softmax");
  const auto s = detail::split_at(x.shape(), axis);
  return x.tape->record(
      OpKind::log_softmax, {x},
      [s](const Inputs<Scalar>& in, Saved<Scalar>&) {
        Tensor<Scalar> out(in[0]->shape());
        for (Index o = 0; o < s.outer; ++o)
          for (Index i = 0; i < s.inner; ++i) {
            const Scalar* p = in[0]->data() + o * s.n * s.inner + i;
            Scalar* q = out.data() + o * s.n * s.inner + i;
            Scalar mx = p[0];
            for (Index j = 1; j < s.n; ++j) mx = std::max(mx, p[j * s.inner]);
            Scalar z = 0;
            for (Index j = 0; j < s.n; ++j) z += std::exp(p[j * s.inner] - mx);
            const Scalar lse = mx + std::log(z);
            for (Index j = 0; j < s.n; ++j) q[j * s.inner] = p[j * s.inner] - lse;
          }
        return out;
      },
      [s](const Inputs<Scalar>&, const Tensor<Scalar>& out, const Saved<Scalar>&, const Tensor<Scalar>& g,
          const GradIn<Scalar>& gin) {
        if (!gin[0]) return;
        for (Index o = 0; o < s.outer; ++o)
          for (Index i = 0; i < s.inner; ++i) {
            const Index base = o * s.n * s.inner + i;
            Scalar gsum = 0;
            for (Index j = 0; j < s.n; ++j) gsum += g[base + j * s.inner];
            for (Index j = 0; j < s.n; ++j) {
              const Index k = base + j * s.inner;
              (*gin[0])[k] += g[k] - std::exp(out[k]) * gsum;
            }
          }
      });
}

/// v / (||v|| + eps) along the last axis (each row of a matrix, or the
/// whole vector).
template <typename Scalar>
Var<Scalar> l2_normalize(Var<Scalar> v, Scalar eps = Scalar(1e-12)) {
  const Index d = v.value().rank() == 0 ? 1 : v.shape().back();
  const Index rows = v.size() / d;
  return v.tape->record(
      OpKind::l2_normalize, {v},
      [d, rows, eps](const Inputs<Scalar>& in, Saved<Scalar>& saved) {
        Tensor<Scalar> out(in[0]->shape());
        Tensor<Scalar> norms(Shape{rows});
        for (Index r = 0; r < rows; ++r) {
          const auto row = in[0]->values().segment(r * d, d);
          const Scalar n = row.norm();
          norms[r] = n;
          out.values().segment(r * d, d) = row / (n + eps);
        }
        saved = {std::move(norms)};
        return out;
      },
      [d, rows, eps](const Inputs<Scalar>& in, const Tensor<Scalar>&, const Saved<Scalar>& saved,
                     const Tensor<Scalar>& g, const GradIn<Scalar>& gin) {
        if (!gin[0]) return;
        for (Index r = 0; r < rows; ++r) {
          const auto x = in[0]->values().segment(r * d, d);
          const auto gy = g.values().segment(r * d, d);
          const Scalar n = saved[0][r];
          const Scalar den = n + eps;
          auto gx = gin[0]->values().segment(r * d, d);
          gx += gy / den;
          if (n > Scalar(0)) gx -= x * (gy.dot(x) / (den * den * n));
        }
      });
}

}  // namespace cvd
