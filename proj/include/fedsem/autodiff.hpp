#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <unordered_map>
#include <vector>

#include "fedsem/tensor.hpp"

namespace fedsem::ag {

// Define-by-run reverse-mode autodiff. Values are computed eagerly when a
// node is built. Backward rules construct new graph nodes rather than raw
// tensors, so gradients are themselves differentiable; that second
// derivative path is what lets an attacker optimize a dummy input against
// the gradients the input induces.

enum class Op {
  Leaf,
  Const,
  Add,
  Sub,
  Mul,
  Div,
  Affine,   // a0 * x + a1, elementwise
  Sqrt,
  Log,
  Sigmoid,
  Clamp,    // [a0, a1]
  SumAll,
  BroadcastFull,
  Conv2d,     // (x[C,H,W], k[O,C,kh,kw]; pad=iv0) -> [O,Ho,Wo]
  ConvWgrad,  // (x[C,H,W], u[O,Ho,Wo]; pad=iv0, kh=iv1, kw=iv2) -> [O,C,kh,kw]
  FlipT01,    // [O,C,kh,kw] -> [C,O,kh,kw], spatially flipped
  BiasAdd,    // (x[C,H,W], b[C])
  SumSpatial, // [C,H,W] -> [C]
  BroadcastSpatial,  // [C] -> [C,H,W] (iv0=H, iv1=W)
  AvgPool2,
  Upsample2,
  ConcatCh,
  SliceCh,  // iv0=c0, iv1=n
  EmbedCh,  // iv0=c0, iv1=C_total
  MatVec,   // (W[m,n], x[n]) -> [m]
  Transpose2,
  Outer,    // (u[m], v[n]) -> [m,n]
  Reshape,
};

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Op op = Op::Const;
  bool requires_grad = false;
  std::vector<NodePtr> parents;
  double a0 = 0.0, a1 = 0.0;
  std::array<int64_t, 3> iv{0, 0, 0};
};

inline NodePtr make_node(Tensor value, Op op, std::vector<NodePtr> parents) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->op = op;
  n->parents = std::move(parents);
  for (const auto& p : n->parents)
    if (p->requires_grad) n->requires_grad = true;
  return n;
}

inline NodePtr leaf(Tensor t, bool requires_grad = true) {
  auto n = make_node(std::move(t), Op::Leaf, {});
  n->requires_grad = requires_grad;
  return n;
}

inline NodePtr constant(Tensor t) { return make_node(std::move(t), Op::Const, {}); }

// ---------------------------------------------------------------------------
// Raw convolution kernels (im2col + GEMM)
// ---------------------------------------------------------------------------

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Tensor im2col(const Tensor& x, int64_t kh, int64_t kw, int64_t pad) {
  const int64_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const int64_t Ho = H + 2 * pad - kh + 1, Wo = W + 2 * pad - kw + 1;
  if (Ho <= 0 || Wo <= 0) throw std::invalid_argument("im2col: kernel larger than padded input");
  Tensor cols({C * kh * kw, Ho * Wo});
  const double* src = x.data();
  double* dst = cols.data();
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t dy = 0; dy < kh; ++dy) {
      for (int64_t dx = 0; dx < kw; ++dx) {
        double* row = dst + ((c * kh + dy) * kw + dx) * Ho * Wo;
        for (int64_t y = 0; y < Ho; ++y) {
          const int64_t sy = y + dy - pad;
          if (sy < 0 || sy >= H) continue;  // row stays zero
          const double* srow = src + (c * H + sy) * W;
          const int64_t x_lo = std::max<int64_t>(0, pad - dx);
          const int64_t x_hi = std::min<int64_t>(Wo, W + pad - dx);
          for (int64_t ox = x_lo; ox < x_hi; ++ox) row[y * Wo + ox] = srow[ox + dx - pad];
        }
      }
    }
  }
  return cols;
}

inline Tensor conv2d_value(const Tensor& x, const Tensor& k, int64_t pad) {
  if (x.ndim() != 3 || k.ndim() != 4) throw std::invalid_argument("conv2d: expects x[C,H,W], k[O,C,kh,kw]");
  const int64_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const int64_t O = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  if (k.dim(1) != C) throw std::invalid_argument("conv2d: channel mismatch");
  const int64_t Ho = H + 2 * pad - kh + 1, Wo = W + 2 * pad - kw + 1;
  Tensor out({O, Ho, Wo});
  Eigen::Map<const RowMat> K(k.data(), O, C * kh * kw);
  Eigen::Map<RowMat> Om(out.data(), O, Ho * Wo);
  if (kh == 1 && kw == 1 && pad == 0) {
    Eigen::Map<const RowMat> X(x.data(), C, H * W);
    Om.noalias() = K * X;
  } else {
    Tensor cols = im2col(x, kh, kw, pad);
    Eigen::Map<const RowMat> Cm(cols.data(), C * kh * kw, Ho * Wo);
    Om.noalias() = K * Cm;
  }
  return out;
}

inline Tensor conv_wgrad_value(const Tensor& x, const Tensor& u, int64_t pad, int64_t kh, int64_t kw) {
  const int64_t C = x.dim(0);
  const int64_t O = u.dim(0), Ho = u.dim(1), Wo = u.dim(2);
  Tensor g({O, C, kh, kw});
  Eigen::Map<const RowMat> U(u.data(), O, Ho * Wo);
  Eigen::Map<RowMat> G(g.data(), O, C * kh * kw);
  if (kh == 1 && kw == 1 && pad == 0) {
    Eigen::Map<const RowMat> X(x.data(), C, Ho * Wo);
    G.noalias() = U * X.transpose();
  } else {
    Tensor cols = im2col(x, kh, kw, pad);
    Eigen::Map<const RowMat> Cm(cols.data(), C * kh * kw, Ho * Wo);
    G.noalias() = U * Cm.transpose();
  }
  return g;
}

inline Tensor flip_t01_value(const Tensor& k) {
  const int64_t O = k.dim(0), C = k.dim(1), kh = k.dim(2), kw = k.dim(3);
  Tensor out({C, O, kh, kw});
  for (int64_t o = 0; o < O; ++o)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t dy = 0; dy < kh; ++dy)
        for (int64_t dx = 0; dx < kw; ++dx)
          out[((c * O + o) * kh + (kh - 1 - dy)) * kw + (kw - 1 - dx)] =
              k[((o * C + c) * kh + dy) * kw + dx];
  return out;
}

// ---------------------------------------------------------------------------
// Node builders
// ---------------------------------------------------------------------------

inline NodePtr add(const NodePtr& a, const NodePtr& b) {
  a->value.require_same_shape(b->value, "add");
  Tensor out = a->value;
  out.add_scaled(b->value, 1.0);
  return make_node(std::move(out), Op::Add, {a, b});
}

inline NodePtr sub(const NodePtr& a, const NodePtr& b) {
  a->value.require_same_shape(b->value, "sub");
  Tensor out = a->value;
  out.add_scaled(b->value, -1.0);
  return make_node(std::move(out), Op::Sub, {a, b});
}

inline NodePtr mul(const NodePtr& a, const NodePtr& b) {
  a->value.require_same_shape(b->value, "mul");
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= b->value[i];
  return make_node(std::move(out), Op::Mul, {a, b});
}

inline NodePtr div(const NodePtr& a, const NodePtr& b) {
  a->value.require_same_shape(b->value, "div");
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] /= b->value[i];
  return make_node(std::move(out), Op::Div, {a, b});
}

// a0 * x + a1
inline NodePtr affine(const NodePtr& x, double s, double off) {
  Tensor out = x->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = s * out[i] + off;
  auto n = make_node(std::move(out), Op::Affine, {x});
  n->a0 = s;
  n->a1 = off;
  return n;
}

inline NodePtr scale(const NodePtr& x, double s) { return affine(x, s, 0.0); }
inline NodePtr neg(const NodePtr& x) { return affine(x, -1.0, 0.0); }
inline NodePtr one_minus(const NodePtr& x) { return affine(x, -1.0, 1.0); }

inline NodePtr sqrt_n(const NodePtr& x) {
  Tensor out = x->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::sqrt(out[i]);
  return make_node(std::move(out), Op::Sqrt, {x});
}

inline NodePtr log_n(const NodePtr& x) {
  Tensor out = x->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::log(out[i]);
  return make_node(std::move(out), Op::Log, {x});
}

inline NodePtr sigmoid(const NodePtr& x) {
  Tensor out = x->value;
  for (int64_t i = 0; i < out.numel(); ++i) {
    const double v = out[i];
    out[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  return make_node(std::move(out), Op::Sigmoid, {x});
}

inline NodePtr silu(const NodePtr& x) { return mul(x, sigmoid(x)); }

inline NodePtr clamp(const NodePtr& x, double lo, double hi) {
  Tensor out = x->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::clamp(out[i], lo, hi);
  auto n = make_node(std::move(out), Op::Clamp, {x});
  n->a0 = lo;
  n->a1 = hi;
  return n;
}

inline NodePtr sum_all(const NodePtr& x) {
  return make_node(Tensor::scalar(x->value.sum()), Op::SumAll, {x});
}

inline NodePtr broadcast_full(const NodePtr& s, std::vector<int64_t> shape) {
  if (s->value.numel() != 1) throw std::invalid_argument("broadcast_full: source must be scalar");
  return make_node(Tensor::full(std::move(shape), s->value[0]), Op::BroadcastFull, {s});
}

inline NodePtr mean_all(const NodePtr& x) {
  return scale(sum_all(x), 1.0 / static_cast<double>(x->value.numel()));
}

inline NodePtr dot(const NodePtr& a, const NodePtr& b) { return sum_all(mul(a, b)); }

inline NodePtr conv2d(const NodePtr& x, const NodePtr& k, int64_t pad) {
  auto n = make_node(conv2d_value(x->value, k->value, pad), Op::Conv2d, {x, k});
  n->iv = {pad, 0, 0};
  return n;
}

inline NodePtr conv_wgrad(const NodePtr& x, const NodePtr& u, int64_t pad, int64_t kh, int64_t kw) {
  auto n = make_node(conv_wgrad_value(x->value, u->value, pad, kh, kw), Op::ConvWgrad, {x, u});
  n->iv = {pad, kh, kw};
  return n;
}

inline NodePtr flip_t01(const NodePtr& k) {
  return make_node(flip_t01_value(k->value), Op::FlipT01, {k});
}

inline NodePtr bias_add(const NodePtr& x, const NodePtr& b) {
  const int64_t C = x->value.dim(0), HW = x->value.dim(1) * x->value.dim(2);
  if (b->value.numel() != C) throw std::invalid_argument("bias_add: channel mismatch");
  Tensor out = x->value;
  for (int64_t c = 0; c < C; ++c)
    for (int64_t i = 0; i < HW; ++i) out[c * HW + i] += b->value[c];
  return make_node(std::move(out), Op::BiasAdd, {x, b});
}

inline NodePtr sum_spatial(const NodePtr& x) {
  const int64_t C = x->value.dim(0), HW = x->value.dim(1) * x->value.dim(2);
  Tensor out({C});
  for (int64_t c = 0; c < C; ++c) {
    double acc = 0.0;
    for (int64_t i = 0; i < HW; ++i) acc += x->value[c * HW + i];
    out[c] = acc;
  }
  return make_node(std::move(out), Op::SumSpatial, {x});
}

inline NodePtr broadcast_spatial(const NodePtr& b, int64_t H, int64_t W) {
  const int64_t C = b->value.numel();
  Tensor out({C, H, W});
  for (int64_t c = 0; c < C; ++c)
    for (int64_t i = 0; i < H * W; ++i) out[c * H * W + i] = b->value[c];
  auto n = make_node(std::move(out), Op::BroadcastSpatial, {b});
  n->iv = {H, W, 0};
  return n;
}

inline NodePtr avg_pool2(const NodePtr& x) {
  const int64_t C = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2);
  if (H % 2 || W % 2) throw std::invalid_argument("avg_pool2: odd spatial dims");
  Tensor out({C, H / 2, W / 2});
  for (int64_t c = 0; c < C; ++c)
    for (int64_t y = 0; y < H / 2; ++y)
      for (int64_t xx = 0; xx < W / 2; ++xx) {
        const double* p = x->value.data() + (c * H + 2 * y) * W + 2 * xx;
        out[(c * (H / 2) + y) * (W / 2) + xx] = 0.25 * (p[0] + p[1] + p[W] + p[W + 1]);
      }
  return make_node(std::move(out), Op::AvgPool2, {x});
}

inline NodePtr upsample2(const NodePtr& x) {
  const int64_t C = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2);
  Tensor out({C, 2 * H, 2 * W});
  for (int64_t c = 0; c < C; ++c)
    for (int64_t y = 0; y < H; ++y)
      for (int64_t xx = 0; xx < W; ++xx) {
        const double v = x->value[(c * H + y) * W + xx];
        double* p = out.data() + (c * 2 * H + 2 * y) * 2 * W + 2 * xx;
        p[0] = p[1] = p[2 * W] = p[2 * W + 1] = v;
      }
  return make_node(std::move(out), Op::Upsample2, {x});
}

inline NodePtr concat_ch(const NodePtr& a, const NodePtr& b) {
  const int64_t Ca = a->value.dim(0), Cb = b->value.dim(0);
  const int64_t H = a->value.dim(1), W = a->value.dim(2);
  if (b->value.dim(1) != H || b->value.dim(2) != W)
    throw std::invalid_argument("concat_ch: spatial mismatch");
  Tensor out({Ca + Cb, H, W});
  std::copy(a->value.data(), a->value.data() + Ca * H * W, out.data());
  std::copy(b->value.data(), b->value.data() + Cb * H * W, out.data() + Ca * H * W);
  return make_node(std::move(out), Op::ConcatCh, {a, b});
}

inline NodePtr slice_ch(const NodePtr& x, int64_t c0, int64_t n) {
  const int64_t C = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2);
  if (c0 < 0 || c0 + n > C) throw std::invalid_argument("slice_ch: out of range");
  Tensor out({n, H, W});
  std::copy(x->value.data() + c0 * H * W, x->value.data() + (c0 + n) * H * W, out.data());
  auto nd = make_node(std::move(out), Op::SliceCh, {x});
  nd->iv = {c0, n, 0};
  return nd;
}

inline NodePtr embed_ch(const NodePtr& x, int64_t c0, int64_t c_total) {
  const int64_t C = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2);
  if (c0 < 0 || c0 + C > c_total) throw std::invalid_argument("embed_ch: out of range");
  Tensor out({c_total, H, W});
  std::copy(x->value.data(), x->value.data() + C * H * W, out.data() + c0 * H * W);
  auto nd = make_node(std::move(out), Op::EmbedCh, {x});
  nd->iv = {c0, c_total, 0};
  return nd;
}

inline NodePtr matvec(const NodePtr& W, const NodePtr& x) {
  const int64_t m = W->value.dim(0), n = W->value.dim(1);
  if (x->value.numel() != n) throw std::invalid_argument("matvec: size mismatch");
  Tensor out({m});
  Eigen::Map<const RowMat> Wm(W->value.data(), m, n);
  Eigen::Map<const Eigen::VectorXd> xv(x->value.data(), n);
  Eigen::Map<Eigen::VectorXd> ov(out.data(), m);
  ov.noalias() = Wm * xv;
  return make_node(std::move(out), Op::MatVec, {W, x});
}

inline NodePtr transpose2(const NodePtr& W) {
  const int64_t m = W->value.dim(0), n = W->value.dim(1);
  Tensor out({n, m});
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) out[j * m + i] = W->value[i * n + j];
  return make_node(std::move(out), Op::Transpose2, {W});
}

inline NodePtr outer(const NodePtr& u, const NodePtr& v) {
  const int64_t m = u->value.numel(), n = v->value.numel();
  Tensor out({m, n});
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) out[i * n + j] = u->value[i] * v->value[j];
  return make_node(std::move(out), Op::Outer, {u, v});
}

inline NodePtr reshape(const NodePtr& x, std::vector<int64_t> shape) {
  return make_node(x->value.reshaped(std::move(shape)), Op::Reshape, {x});
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

using GradMap = std::unordered_map<const Node*, NodePtr>;

namespace detail {

inline void topo_sort(const NodePtr& root, std::vector<Node*>& order) {
  std::unordered_map<const Node*, int> state;  // 0 new, 1 open, 2 done
  std::vector<std::pair<Node*, size_t>> stack;
  if (!root->requires_grad) return;
  stack.push_back({root.get(), 0});
  state[root.get()] = 1;
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      Node* p = n->parents[idx++].get();
      if (p->requires_grad && state[p] == 0) {
        state[p] = 1;
        stack.push_back({p, 0});
      }
    } else {
      state[n] = 2;
      order.push_back(n);
      stack.pop_back();
    }
  }
}

inline void accumulate(GradMap& grads, const Node* p, const NodePtr& g) {
  auto it = grads.find(p);
  if (it == grads.end())
    grads.emplace(p, g);
  else
    it->second = add(it->second, g);
}

// Constant mask of elementwise gate derivatives (clamp interior, etc.).
inline NodePtr gate_mask(const Tensor& x, double lo, double hi) {
  Tensor m = x;
  for (int64_t i = 0; i < m.numel(); ++i) m[i] = (x[i] >= lo && x[i] <= hi) ? 1.0 : 0.0;
  return constant(std::move(m));
}

}  // namespace detail

// Propagates d(root)/d(node) for every node reachable from the scalar root.
// The returned gradients are graph nodes themselves; calling backward again
// on an expression built from them yields second derivatives.
inline GradMap backward(const NodePtr& root) {
  if (root->value.numel() != 1) throw std::invalid_argument("backward: root must be scalar");
  GradMap grads;
  if (!root->requires_grad) return grads;
  std::vector<Node*> order;
  detail::topo_sort(root, order);
  grads.emplace(root.get(), constant(Tensor::scalar(1.0)));

  // find_node: the NodePtr for a parent is available through the child.
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    auto git = grads.find(n);
    if (git == grads.end()) continue;  // not on a path to the root
    NodePtr go = git->second;
    const auto& ps = n->parents;
    auto want = [&](size_t i) { return ps[i]->requires_grad; };

    switch (n->op) {
      case Op::Leaf:
      case Op::Const:
        break;
      case Op::Add:
        if (want(0)) detail::accumulate(grads, ps[0].get(), go);
        if (want(1)) detail::accumulate(grads, ps[1].get(), go);
        break;
      case Op::Sub:
        if (want(0)) detail::accumulate(grads, ps[0].get(), go);
        if (want(1)) detail::accumulate(grads, ps[1].get(), neg(go));
        break;
      case Op::Mul:
        if (want(0)) detail::accumulate(grads, ps[0].get(), mul(go, ps[1]));
        if (want(1)) detail::accumulate(grads, ps[1].get(), mul(go, ps[0]));
        break;
      case Op::Div:
        // y = a / b : da = go / b ; db = -go * y / b (y rebuilt so the rule
        // stays differentiable)
        if (want(0)) detail::accumulate(grads, ps[0].get(), div(go, ps[1]));
        if (want(1))
          detail::accumulate(grads, ps[1].get(), neg(div(mul(go, div(ps[0], ps[1])), ps[1])));
        break;
      case Op::Affine:
        if (want(0)) detail::accumulate(grads, ps[0].get(), scale(go, n->a0));
        break;
      case Op::Sqrt: {
        // dx = go * 0.5 / sqrt(x); rebuild sqrt(x) to stay differentiable
        if (want(0)) detail::accumulate(grads, ps[0].get(), scale(div(go, sqrt_n(ps[0])), 0.5));
        break;
      }
      case Op::Log:
        if (want(0)) detail::accumulate(grads, ps[0].get(), div(go, ps[0]));
        break;
      case Op::Sigmoid: {
        if (want(0)) {
          NodePtr s = sigmoid(ps[0]);
          detail::accumulate(grads, ps[0].get(), mul(go, mul(s, one_minus(s))));
        }
        break;
      }
      case Op::Clamp:
        if (want(0))
          detail::accumulate(grads, ps[0].get(),
                             mul(go, detail::gate_mask(ps[0]->value, n->a0, n->a1)));
        break;
      case Op::SumAll:
        if (want(0)) detail::accumulate(grads, ps[0].get(), broadcast_full(go, ps[0]->value.shape()));
        break;
      case Op::BroadcastFull:
        if (want(0)) detail::accumulate(grads, ps[0].get(), sum_all(go));
        break;
      case Op::Conv2d: {
        const int64_t pad = n->iv[0];
        const int64_t kh = ps[1]->value.dim(2), kw = ps[1]->value.dim(3);
        if (want(0)) detail::accumulate(grads, ps[0].get(), conv2d(go, flip_t01(ps[1]), kh - 1 - pad));
        if (want(1)) detail::accumulate(grads, ps[1].get(), conv_wgrad(ps[0], go, pad, kh, kw));
        break;
      }
      case Op::ConvWgrad: {
        const int64_t pad = n->iv[0], kh = n->iv[1];
        if (want(0)) detail::accumulate(grads, ps[0].get(), conv2d(ps[1], flip_t01(go), kh - 1 - pad));
        if (want(1)) detail::accumulate(grads, ps[1].get(), conv2d(ps[0], go, pad));
        break;
      }
      case Op::FlipT01:
        if (want(0)) detail::accumulate(grads, ps[0].get(), flip_t01(go));
        break;
      case Op::BiasAdd:
        if (want(0)) detail::accumulate(grads, ps[0].get(), go);
        if (want(1)) detail::accumulate(grads, ps[1].get(), sum_spatial(go));
        break;
      case Op::SumSpatial:
        if (want(0))
          detail::accumulate(grads, ps[0].get(),
                             broadcast_spatial(go, ps[0]->value.dim(1), ps[0]->value.dim(2)));
        break;
      case Op::BroadcastSpatial:
        if (want(0)) detail::accumulate(grads, ps[0].get(), sum_spatial(go));
        break;
      case Op::AvgPool2:
        if (want(0)) detail::accumulate(grads, ps[0].get(), scale(upsample2(go), 0.25));
        break;
      case Op::Upsample2:
        if (want(0)) detail::accumulate(grads, ps[0].get(), scale(avg_pool2(go), 4.0));
        break;
      case Op::ConcatCh: {
        const int64_t Ca = ps[0]->value.dim(0), Cb = ps[1]->value.dim(0);
        if (want(0)) detail::accumulate(grads, ps[0].get(), slice_ch(go, 0, Ca));
        if (want(1)) detail::accumulate(grads, ps[1].get(), slice_ch(go, Ca, Cb));
        break;
      }
      case Op::SliceCh:
        if (want(0))
          detail::accumulate(grads, ps[0].get(), embed_ch(go, n->iv[0], ps[0]->value.dim(0)));
        break;
      case Op::EmbedCh:
        if (want(0))
          detail::accumulate(grads, ps[0].get(), slice_ch(go, n->iv[0], ps[0]->value.dim(0)));
        break;
      case Op::MatVec:
        if (want(0)) detail::accumulate(grads, ps[0].get(), outer(go, ps[1]));
        if (want(1)) detail::accumulate(grads, ps[1].get(), matvec(transpose2(ps[0]), go));
        break;
      case Op::Transpose2:
        if (want(0)) detail::accumulate(grads, ps[0].get(), transpose2(go));
        break;
      case Op::Outer:
        if (want(0)) detail::accumulate(grads, ps[0].get(), matvec(go, ps[1]));
        if (want(1)) detail::accumulate(grads, ps[1].get(), matvec(transpose2(go), ps[0]));
        break;
      case Op::Reshape:
        if (want(0)) detail::accumulate(grads, ps[0].get(), reshape(go, ps[0]->value.shape()));
        break;
    }
  }
  return grads;
}

inline Tensor grad_of(const GradMap& grads, const NodePtr& leaf_node) {
  auto it = grads.find(leaf_node.get());
  if (it == grads.end()) return Tensor::zeros(leaf_node->value.shape());
  return it->second->value;
}

}  // namespace fedsem::ag
