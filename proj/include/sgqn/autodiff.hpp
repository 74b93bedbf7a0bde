#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <unordered_set>
#include <utility>
#include <vector>

#include "sgqn/tensor.hpp"

namespace sgqn::ad {

// Reverse-mode tape over Tensor<T>. Graphs are built forward by the op
// functions below; node creation order is a topological order, so backward
// just walks ids in reverse. Single-threaded by design: gradient
// accumulation order is fixed, which keeps runs bit-reproducible.
template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // allocated on first accumulation
  bool requires_grad = false;
  bool grad_alloc = false;
  uint64_t id = 0;
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::function<void(Node<T>&)> backward;
};

template <typename T>
using Var = std::shared_ptr<Node<T>>;

namespace detail {
inline uint64_t next_node_id() {
  static uint64_t counter = 0;
  return ++counter;
}

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<EMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const EMat<T>>;
}  // namespace detail

template <typename T>
Tensor<T>& grad_of(Node<T>& n) {
  if (!n.grad_alloc) {
    n.grad = Tensor<T>(n.value.shape);
    n.grad_alloc = true;
  }
  return n.grad;
}

template <typename T>
Var<T> make_node(Tensor<T> value) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->id = detail::next_node_id();
  return n;
}

// Leaf holding a constant (no gradient tracked).
template <typename T>
Var<T> constant(Tensor<T> value) {
  return make_node(std::move(value));
}

// Leaf with gradient tracking (parameters, or the observation in an
// attribution pass).
template <typename T>
Var<T> leaf(Tensor<T> value, bool requires_grad = true) {
  auto n = make_node(std::move(value));
  n->requires_grad = requires_grad;
  return n;
}

template <typename T>
bool any_grad(std::initializer_list<const Var<T>*> vs) {
  for (const Var<T>* v : vs)
    if (*v && (*v)->requires_grad) return true;
  return false;
}

// Runs reverse-mode accumulation from a scalar root. Leaf grads are read
// through the Var handles afterwards.
template <typename T>
void backward(const Var<T>& root) {
  if (root->value.numel() != 1)
    throw std::invalid_argument("backward: root must be a scalar");
  backward_seeded(root, Tensor<T>::scalar(T(1)));
}

template <typename T>
void backward_seeded(const Var<T>& root, Tensor<T> seed) {
  if (!root->requires_grad) return;
  if (seed.shape != root->value.shape)
    throw std::invalid_argument("backward: seed shape mismatch");
  grad_of(*root);
  for (int64_t i = 0; i < seed.numel(); ++i) root->grad[i] += seed[i];

  // Collect the reachable subgraph, then sweep in reverse creation order.
  std::vector<Node<T>*> nodes;
  std::unordered_set<Node<T>*> seen;
  std::vector<Node<T>*> stack{root.get()};
  seen.insert(root.get());
  while (!stack.empty()) {
    Node<T>* n = stack.back();
    stack.pop_back();
    nodes.push_back(n);
    for (auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  std::sort(nodes.begin(), nodes.end(),
            [](const Node<T>* a, const Node<T>* b) { return a->id > b->id; });
  for (Node<T>* n : nodes) {
    if (n->backward && n->grad_alloc) n->backward(*n);
  }
}

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

template <typename T, typename FwdFn, typename BwdFn>
Var<T> unary_op(const Var<T>& x, FwdFn fwd, BwdFn bwd) {
  Tensor<T> out(x->value.shape);
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = fwd(x->value[i]);
  auto node = make_node(std::move(out));
  if (x->requires_grad) {
    node->requires_grad = true;
    node->parents = {x};
    Var<T> xp = x;
    node->backward = [xp, bwd](Node<T>& self) {
      Tensor<T>& gx = grad_of(*xp);
      const int64_t m = self.grad.numel();
      for (int64_t i = 0; i < m; ++i)
        gx[i] += bwd(xp->value[i], self.value[i], self.grad[i]);
    };
  }
  return node;
}

template <typename T>
Var<T> relu(const Var<T>& x, bool guided_backward = false) {
  return unary_op(
      x, [](T v) { return v > T(0) ? v : T(0); },
      [guided_backward](T xin, T /*y*/, T g) {
        if (xin <= T(0)) return T(0);
        if (guided_backward && g < T(0)) return T(0);
        return g;
      });
}

template <typename T>
Var<T> tanh_op(const Var<T>& x) {
  return unary_op(
      x, [](T v) { return std::tanh(v); },
      [](T /*xin*/, T y, T g) { return g * (T(1) - y * y); });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  return unary_op(
      x,
      [](T v) {
        return v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                         : std::exp(v) / (T(1) + std::exp(v));
      },
      [](T /*xin*/, T y, T g) { return g * y * (T(1) - y); });
}

template <typename T>
Var<T> softplus(const Var<T>& x) {
  return unary_op(
      x,
      [](T v) {
        const T a = v > T(0) ? v : T(0);
        return a + std::log1p(std::exp(-std::abs(v)));
      },
      [](T xin, T /*y*/, T g) {
        const T s = xin >= T(0) ? T(1) / (T(1) + std::exp(-xin))
                                : std::exp(xin) / (T(1) + std::exp(xin));
        return g * s;
      });
}

template <typename T>
Var<T> exp_op(const Var<T>& x) {
  return unary_op(
      x, [](T v) { return std::exp(v); },
      [](T /*xin*/, T y, T g) { return g * y; });
}

template <typename T>
Var<T> log_op(const Var<T>& x) {
  return unary_op(
      x, [](T v) { return std::log(v); },
      [](T xin, T /*y*/, T g) { return g / xin; });
}

template <typename T>
Var<T> square(const Var<T>& x) {
  return unary_op(
      x, [](T v) { return v * v; },
      [](T xin, T /*y*/, T g) { return g * T(2) * xin; });
}

template <typename T>
Var<T> neg(const Var<T>& x) {
  return unary_op(
      x, [](T v) { return -v; }, [](T, T, T g) { return -g; });
}

template <typename T>
Var<T> scale(const Var<T>& x, double c) {
  const T cc = T(c);
  return unary_op(
      x, [cc](T v) { return cc * v; }, [cc](T, T, T g) { return cc * g; });
}

template <typename T>
Var<T> add_scalar(const Var<T>& x, double c) {
  const T cc = T(c);
  return unary_op(
      x, [cc](T v) { return v + cc; }, [](T, T, T g) { return g; });
}

// Gradient passes through where lo <= x <= hi, zero where clamped.
template <typename T>
Var<T> clamp_op(const Var<T>& x, T lo, T hi) {
  return unary_op(
      x, [lo, hi](T v) { return v < lo ? lo : (v > hi ? hi : v); },
      [lo, hi](T xin, T, T g) { return (xin < lo || xin > hi) ? T(0) : g; });
}

template <typename T, typename FwdFn, typename DaFn, typename DbFn>
Var<T> binary_op(const Var<T>& a, const Var<T>& b, FwdFn fwd, DaFn da, DbFn db) {
  if (!a->value.same_shape(b->value))
    throw std::invalid_argument("binary op shape mismatch: " + shape_str(a->value.shape) +
                                " vs " + shape_str(b->value.shape));
  Tensor<T> out(a->value.shape);
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = fwd(a->value[i], b->value[i]);
  auto node = make_node(std::move(out));
  if (a->requires_grad || b->requires_grad) {
    node->requires_grad = true;
    node->parents = {a, b};
    Var<T> ap = a, bp = b;
    node->backward = [ap, bp, da, db](Node<T>& self) {
      const int64_t m = self.grad.numel();
      if (ap->requires_grad) {
        Tensor<T>& ga = grad_of(*ap);
        for (int64_t i = 0; i < m; ++i)
          ga[i] += da(ap->value[i], bp->value[i], self.grad[i]);
      }
      if (bp->requires_grad) {
        Tensor<T>& gb = grad_of(*bp);
        for (int64_t i = 0; i < m; ++i)
          gb[i] += db(ap->value[i], bp->value[i], self.grad[i]);
      }
    };
  }
  return node;
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  return binary_op(
      a, b, [](T x, T y) { return x + y; }, [](T, T, T g) { return g; },
      [](T, T, T g) { return g; });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  return binary_op(
      a, b, [](T x, T y) { return x - y; }, [](T, T, T g) { return g; },
      [](T, T, T g) { return -g; });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  return binary_op(
      a, b, [](T x, T y) { return x * y; }, [](T, T y, T g) { return g * y; },
      [](T x, T, T g) { return g * x; });
}

// Elementwise min; ties route the gradient to the first argument.
template <typename T>
Var<T> min_elem(const Var<T>& a, const Var<T>& b) {
  return binary_op(
      a, b, [](T x, T y) { return x <= y ? x : y; },
      [](T x, T y, T g) { return x <= y ? g : T(0); },
      [](T x, T y, T g) { return x <= y ? T(0) : g; });
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <typename T>
Var<T> reshape(const Var<T>& x, std::vector<int> new_shape) {
  if (Tensor<T>::numel_of(new_shape) != x->value.numel())
    throw std::invalid_argument("reshape: element count mismatch");
  Tensor<T> out;
  out.shape = std::move(new_shape);
  out.data = x->value.data;
  auto node = make_node(std::move(out));
  if (x->requires_grad) {
    node->requires_grad = true;
    node->parents = {x};
    Var<T> xp = x;
    node->backward = [xp](Node<T>& self) {
      Tensor<T>& gx = grad_of(*xp);
      const int64_t m = self.grad.numel();
      for (int64_t i = 0; i < m; ++i) gx[i] += self.grad[i];
    };
  }
  return node;
}

template <typename T>
Var<T> flatten_batch(const Var<T>& x) {
  const int b = x->value.dim(0);
  const int rest = static_cast<int>(x->value.numel() / b);
  return reshape(x, {b, rest});
}

template <typename T>
Var<T> concat_cols(const Var<T>& a, const Var<T>& b) {
  if (a->value.ndim() != 2 || b->value.ndim() != 2 || a->value.dim(0) != b->value.dim(0))
    throw std::invalid_argument("concat_cols: expects [B,K] inputs with equal B");
  const int B = a->value.dim(0), Ka = a->value.dim(1), Kb = b->value.dim(1);
  Tensor<T> out({B, Ka + Kb});
  for (int i = 0; i < B; ++i) {
    std::copy_n(a->value.ptr() + i * Ka, Ka, out.ptr() + i * (Ka + Kb));
    std::copy_n(b->value.ptr() + i * Kb, Kb, out.ptr() + i * (Ka + Kb) + Ka);
  }
  auto node = make_node(std::move(out));
  if (a->requires_grad || b->requires_grad) {
    node->requires_grad = true;
    node->parents = {a, b};
    Var<T> ap = a, bp = b;
    node->backward = [ap, bp, B, Ka, Kb](Node<T>& self) {
      if (ap->requires_grad) {
        Tensor<T>& ga = grad_of(*ap);
        for (int i = 0; i < B; ++i)
          for (int k = 0; k < Ka; ++k) ga[i * Ka + k] += self.grad[i * (Ka + Kb) + k];
      }
      if (bp->requires_grad) {
        Tensor<T>& gb = grad_of(*bp);
        for (int i = 0; i < B; ++i)
          for (int k = 0; k < Kb; ++k)
            gb[i * Kb + k] += self.grad[i * (Ka + Kb) + Ka + k];
      }
    };
  }
  return node;
}

template <typename T>
Var<T> slice_cols(const Var<T>& x, int offset, int len) {
  if (x->value.ndim() != 2) throw std::invalid_argument("slice_cols: expects [B,K]");
  const int B = x->value.dim(0), K = x->value.dim(1);
  if (offset < 0 || offset + len > K) throw std::invalid_argument("slice_cols: out of range");
  Tensor<T> out({B, len});
  for (int i = 0; i < B; ++i)
    std::copy_n(x->value.ptr() + i * K + offset, len, out.ptr() + i * len);
  auto node = make_node(std::move(out));
  if (x->requires_grad) {
    node->requires_grad = true;
    node->parents = {x};
    Var<T> xp = x;
    node->backward = [xp, B, K, offset, len](Node<T>& self) {
      Tensor<T>& gx = grad_of(*xp);
      for (int i = 0; i < B; ++i)
        for (int k = 0; k < len; ++k) gx[i * K + offset + k] += self.grad[i * len + k];
    };
  }
  return node;
}

// Cuts the graph: same value, no history.
template <typename T>
Var<T> detach(const Var<T>& x) {
  return constant(Tensor<T>(x->value));
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename T>
Var<T> sum_all(const Var<T>& x) {
  double acc = 0.0;
  for (int64_t i = 0; i < x->value.numel(); ++i) acc += double(x->value[i]);
  Tensor<T> out = Tensor<T>::scalar(T(acc));
  auto node = make_node(std::move(out));
  if (x->requires_grad) {
    node->requires_grad = true;
    node->parents = {x};
    Var<T> xp = x;
    node->backward = [xp](Node<T>& self) {
      Tensor<T>& gx = grad_of(*xp);
      const T g = self.grad[0];
      for (int64_t i = 0; i < gx.numel(); ++i) gx[i] += g;
    };
  }
  return node;
}

template <typename T>
Var<T> mean_all(const Var<T>& x) {
  return scale(sum_all(x), T(1) / static_cast<T>(x->value.numel()));
}

template <typename T>
Var<T> sum_lastdim(const Var<T>& x) {
  if (x->value.ndim() != 2) throw std::invalid_argument("sum_lastdim: expects [B,K]");
  const int B = x->value.dim(0), K = x->value.dim(1);
  Tensor<T> out({B});
  for (int i = 0; i < B; ++i) {
    T acc = T(0);
    for (int k = 0; k < K; ++k) acc += x->value[i * K + k];
    out[i] = acc;
  }
  auto node = make_node(std::move(out));
  if (x->requires_grad) {
    node->requires_grad = true;
    node->parents = {x};
    Var<T> xp = x;
    node->backward = [xp, B, K](Node<T>& self) {
      Tensor<T>& gx = grad_of(*xp);
      for (int i = 0; i < B; ++i)
        for (int k = 0; k < K; ++k) gx[i * K + k] += self.grad[i];
    };
  }
  return node;
}

// y = x * s where s is a 1-element variable (entropy temperature etc).
template <typename T>
Var<T> mul_scalar_var(const Var<T>& x, const Var<T>& s) {
  if (s->value.numel() != 1) throw std::invalid_argument("mul_scalar_var: s must be scalar");
  Tensor<T> out(x->value.shape);
  const T sv = s->value[0];
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = x->value[i] * sv;
  auto node = make_node(std::move(out));
  if (x->requires_grad || s->requires_grad) {
    node->requires_grad = true;
    node->parents = {x, s};
    Var<T> xp = x, sp = s;
    node->backward = [xp, sp](Node<T>& self) {
      const T sv = sp->value[0];
      if (xp->requires_grad) {
        Tensor<T>& gx = grad_of(*xp);
        for (int64_t i = 0; i < gx.numel(); ++i) gx[i] += self.grad[i] * sv;
      }
      if (sp->requires_grad) {
        Tensor<T>& gs = grad_of(*sp);
        T acc = T(0);
        for (int64_t i = 0; i < xp->value.numel(); ++i) acc += self.grad[i] * xp->value[i];
        gs[0] += acc;
      }
    };
  }
  return node;
}

// ---------------------------------------------------------------------------
// Linear layer: x [B,K] * w^T [K,O] + b -> [B,O]
// ---------------------------------------------------------------------------

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  if (x->value.ndim() != 2 || w->value.ndim() != 2)
    throw std::invalid_argument("linear: expects x [B,K], w [O,K]");
  const int B = x->value.dim(0), K = x->value.dim(1), O = w->value.dim(0);
  if (w->value.dim(1) != K)
    throw std::invalid_argument("linear: weight shape " + shape_str(w->value.shape) +
                                " incompatible with input " + shape_str(x->value.shape));
  const bool has_bias = b && b->value.numel() > 0;
  if (has_bias && b->value.numel() != O) throw std::invalid_argument("linear: bias size");

  Tensor<T> out({B, O});
  {
    detail::CMapMat<T> X(x->value.ptr(), B, K);
    detail::CMapMat<T> W(w->value.ptr(), O, K);
    detail::MapMat<T> Y(out.ptr(), B, O);
    Y.noalias() = X * W.transpose();
    if (has_bias) {
      Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bv(b->value.ptr(), O);
      Y.rowwise() += bv;
    }
  }
  auto node = make_node(std::move(out));
  if (any_grad<T>({&x, &w, &b})) {
    node->requires_grad = true;
    node->parents = {x, w};
    if (has_bias) node->parents.push_back(b);
    Var<T> xp = x, wp = w, bp = b;
    node->backward = [xp, wp, bp, B, K, O, has_bias](Node<T>& self) {
      detail::CMapMat<T> G(self.grad.ptr(), B, O);
      if (xp->requires_grad) {
        detail::MapMat<T> GX(grad_of(*xp).ptr(), B, K);
        detail::CMapMat<T> W(wp->value.ptr(), O, K);
        GX.noalias() += G * W;
      }
      if (wp->requires_grad) {
        detail::MapMat<T> GW(grad_of(*wp).ptr(), O, K);
        detail::CMapMat<T> X(xp->value.ptr(), B, K);
        GW.noalias() += G.transpose() * X;
      }
      if (has_bias && bp->requires_grad) {
        // Scalar accumulation keeps the summation order independent of
        // buffer addresses, so repeated runs stay bit-identical.
        Tensor<T>& gb = grad_of(*bp);
        const T* g = self.grad.ptr();
        for (int i = 0; i < B; ++i)
          for (int o = 0; o < O; ++o) gb[o] += g[static_cast<int64_t>(i) * O + o];
      }
    };
  }
  return node;
}

// ---------------------------------------------------------------------------
// 2D convolution, NCHW, zero padding. im2col + GEMM.
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void im2col(const T* x, int C, int H, int W, int kh, int kw, int stride, int pad,
            int oh, int ow, T* col) {
  // col layout: [C*kh*kw, oh*ow] row-major
  const int N = oh * ow;
  for (int c = 0; c < C; ++c) {
    const T* xc = x + static_cast<int64_t>(c) * H * W;
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        T* row = col + (static_cast<int64_t>(c) * kh * kw + ki * kw + kj) * N;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= H) {
            std::fill_n(row + oy * ow, ow, T(0));
            continue;
          }
          const T* xr = xc + static_cast<int64_t>(iy) * W;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kj;
            row[oy * ow + ox] = (ix >= 0 && ix < W) ? xr[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, int C, int H, int W, int kh, int kw, int stride, int pad,
                int oh, int ow, T* x) {
  const int N = oh * ow;
  for (int c = 0; c < C; ++c) {
    T* xc = x + static_cast<int64_t>(c) * H * W;
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        const T* row = col + (static_cast<int64_t>(c) * kh * kw + ki * kw + kj) * N;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= H) continue;
          T* xr = xc + static_cast<int64_t>(iy) * W;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kj;
            if (ix >= 0 && ix < W) xr[ix] += row[oy * ow + ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride, int pad) {
  if (x->value.ndim() != 4 || w->value.ndim() != 4)
    throw std::invalid_argument("conv2d: expects x [B,C,H,W], w [O,C,kh,kw]");
  const int B = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
  const int O = w->value.dim(0), kh = w->value.dim(2), kw = w->value.dim(3);
  if (w->value.dim(1) != C)
    throw std::invalid_argument("conv2d: channel mismatch " + shape_str(x->value.shape) +
                                " vs " + shape_str(w->value.shape));
  const int oh = (H + 2 * pad - kh) / stride + 1;
  const int ow = (W + 2 * pad - kw) / stride + 1;
  if (oh <= 0 || ow <= 0) throw std::invalid_argument("conv2d: output would be empty");
  const bool has_bias = b && b->value.numel() > 0;
  if (has_bias && b->value.numel() != O) throw std::invalid_argument("conv2d: bias size");

  const int K = C * kh * kw;
  const int N = oh * ow;
  Tensor<T> out({B, O, oh, ow});
  std::vector<T> col(static_cast<size_t>(K) * N);
  {
    detail::CMapMat<T> Wm(w->value.ptr(), O, K);
    for (int n = 0; n < B; ++n) {
      detail::im2col(x->value.ptr() + static_cast<int64_t>(n) * C * H * W, C, H, W, kh, kw,
                     stride, pad, oh, ow, col.data());
      detail::CMapMat<T> Cm(col.data(), K, N);
      detail::MapMat<T> Ym(out.ptr() + static_cast<int64_t>(n) * O * N, O, N);
      Ym.noalias() = Wm * Cm;
      if (has_bias)
        for (int o = 0; o < O; ++o) Ym.row(o).array() += b->value[o];
    }
  }
  auto node = make_node(std::move(out));
  if (any_grad<T>({&x, &w, &b})) {
    node->requires_grad = true;
    node->parents = {x, w};
    if (has_bias) node->parents.push_back(b);
    Var<T> xp = x, wp = w, bp = b;
    node->backward = [xp, wp, bp, B, C, H, W, O, kh, kw, stride, pad, oh, ow,
                      has_bias](Node<T>& self) {
      const int K = C * kh * kw;
      const int N = oh * ow;
      std::vector<T> col(static_cast<size_t>(K) * N);
      detail::CMapMat<T> Wm(wp->value.ptr(), O, K);
      for (int n = 0; n < B; ++n) {
        detail::CMapMat<T> Gm(self.grad.ptr() + static_cast<int64_t>(n) * O * N, O, N);
        const bool need_col = wp->requires_grad;
        if (need_col)
          detail::im2col(xp->value.ptr() + static_cast<int64_t>(n) * C * H * W, C, H, W, kh,
                         kw, stride, pad, oh, ow, col.data());
        if (wp->requires_grad) {
          detail::MapMat<T> GW(grad_of(*wp).ptr(), O, K);
          detail::CMapMat<T> Cm(col.data(), K, N);
          GW.noalias() += Gm * Cm.transpose();
        }
        if (xp->requires_grad) {
          // reuse col as scratch for dcol
          detail::MapMat<T> DC(col.data(), K, N);
          DC.noalias() = Wm.transpose() * Gm;
          detail::col2im_add(col.data(), C, H, W, kh, kw, stride, pad, oh, ow,
                             grad_of(*xp).ptr() + static_cast<int64_t>(n) * C * H * W);
        }
        if (has_bias && bp->requires_grad) {
          // Scalar loop: address-independent summation order (see linear()).
          Tensor<T>& gb = grad_of(*bp);
          const T* g = self.grad.ptr() + static_cast<int64_t>(n) * O * N;
          for (int o = 0; o < O; ++o) {
            T acc = T(0);
            const T* r = g + static_cast<int64_t>(o) * N;
            for (int j = 0; j < N; ++j) acc += r[j];
            gb[o] += acc;
          }
        }
      }
    };
  }
  return node;
}

// ---------------------------------------------------------------------------
// Layer normalization over the last dimension of [B,K], with affine params.
// ---------------------------------------------------------------------------

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5)) {
  if (x->value.ndim() != 2) throw std::invalid_argument("layer_norm: expects [B,K]");
  const int B = x->value.dim(0), K = x->value.dim(1);
  if (gamma->value.numel() != K || beta->value.numel() != K)
    throw std::invalid_argument("layer_norm: affine parameter size");

  Tensor<T> out({B, K});
  Tensor<T> xhat({B, K});
  std::vector<T> inv_std(B);
  for (int i = 0; i < B; ++i) {
    const T* xr = x->value.ptr() + i * K;
    T mean = T(0);
    for (int k = 0; k < K; ++k) mean += xr[k];
    mean /= static_cast<T>(K);
    T var = T(0);
    for (int k = 0; k < K; ++k) var += (xr[k] - mean) * (xr[k] - mean);
    var /= static_cast<T>(K);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[i] = is;
    for (int k = 0; k < K; ++k) {
      const T xh = (xr[k] - mean) * is;
      xhat[i * K + k] = xh;
      out[i * K + k] = gamma->value[k] * xh + beta->value[k];
    }
  }
  auto node = make_node(std::move(out));
  if (any_grad<T>({&x, &gamma, &beta})) {
    node->requires_grad = true;
    node->parents = {x, gamma, beta};
    Var<T> xp = x, gp = gamma, bp = beta;
    auto xhat_s = std::make_shared<Tensor<T>>(std::move(xhat));
    auto istd_s = std::make_shared<std::vector<T>>(std::move(inv_std));
    node->backward = [xp, gp, bp, xhat_s, istd_s, B, K](Node<T>& self) {
      for (int i = 0; i < B; ++i) {
        const T* g = self.grad.ptr() + i * K;
        const T* xh = xhat_s->ptr() + i * K;
        if (gp->requires_grad) {
          Tensor<T>& gg = grad_of(*gp);
          for (int k = 0; k < K; ++k) gg[k] += g[k] * xh[k];
        }
        if (bp->requires_grad) {
          Tensor<T>& gb = grad_of(*bp);
          for (int k = 0; k < K; ++k) gb[k] += g[k];
        }
        if (xp->requires_grad) {
          T mean_dy = T(0), mean_dyxh = T(0);
          for (int k = 0; k < K; ++k) {
            const T dy = g[k] * gp->value[k];
            mean_dy += dy;
            mean_dyxh += dy * xh[k];
          }
          mean_dy /= static_cast<T>(K);
          mean_dyxh /= static_cast<T>(K);
          Tensor<T>& gx = grad_of(*xp);
          const T is = (*istd_s)[i];
          for (int k = 0; k < K; ++k) {
            const T dy = g[k] * gp->value[k];
            gx[i * K + k] += is * (dy - mean_dy - xh[k] * mean_dyxh);
          }
        }
      }
    };
  }
  return node;
}

// ---------------------------------------------------------------------------
// Nearest-neighbor 2x upsampling, NCHW.
// ---------------------------------------------------------------------------

template <typename T>
Var<T> upsample2(const Var<T>& x) {
  if (x->value.ndim() != 4) throw std::invalid_argument("upsample2: expects [B,C,H,W]");
  const int B = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
  Tensor<T> out({B, C, 2 * H, 2 * W});
  for (int bc = 0; bc < B * C; ++bc) {
    const T* src = x->value.ptr() + static_cast<int64_t>(bc) * H * W;
    T* dst = out.ptr() + static_cast<int64_t>(bc) * 4 * H * W;
    for (int y = 0; y < H; ++y)
      for (int xx = 0; xx < W; ++xx) {
        const T v = src[y * W + xx];
        T* d = dst + (2 * y) * (2 * W) + 2 * xx;
        d[0] = v;
        d[1] = v;
        d[2 * W] = v;
        d[2 * W + 1] = v;
      }
  }
  auto node = make_node(std::move(out));
  if (x->requires_grad) {
    node->requires_grad = true;
    node->parents = {x};
    Var<T> xp = x;
    node->backward = [xp, B, C, H, W](Node<T>& self) {
      Tensor<T>& gx = grad_of(*xp);
      for (int bc = 0; bc < B * C; ++bc) {
        const T* g = self.grad.ptr() + static_cast<int64_t>(bc) * 4 * H * W;
        T* d = gx.ptr() + static_cast<int64_t>(bc) * H * W;
        for (int y = 0; y < H; ++y)
          for (int xx = 0; xx < W; ++xx)
            d[y * W + xx] += g[(2 * y) * (2 * W) + 2 * xx] + g[(2 * y) * (2 * W) + 2 * xx + 1] +
                             g[(2 * y + 1) * (2 * W) + 2 * xx] +
                             g[(2 * y + 1) * (2 * W) + 2 * xx + 1];
      }
    };
  }
  return node;
}

// ---------------------------------------------------------------------------
// Binary cross entropy against a constant target, mean over all elements.
// Probabilities are expected pre-clamped away from {0,1}.
// ---------------------------------------------------------------------------

template <typename T>
Var<T> bce_loss(const Var<T>& p, const Tensor<T>& target) {
  if (p->value.shape != target.shape) throw std::invalid_argument("bce_loss: shape mismatch");
  const int64_t n = p->value.numel();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const T pv = p->value[i], t = target[i];
    acc += -double(t * std::log(pv) + (T(1) - t) * std::log(T(1) - pv));
  }
  auto node = make_node(Tensor<T>::scalar(T(acc / double(n))));
  if (p->requires_grad) {
    node->requires_grad = true;
    node->parents = {p};
    Var<T> pp = p;
    auto tgt = std::make_shared<Tensor<T>>(target);
    node->backward = [pp, tgt, n](Node<T>& self) {
      Tensor<T>& gp = grad_of(*pp);
      const T g = self.grad[0] / static_cast<T>(n);
      for (int64_t i = 0; i < n; ++i) {
        const T pv = pp->value[i], t = (*tgt)[i];
        gp[i] += g * (-(t / pv) + (T(1) - t) / (T(1) - pv));
      }
    };
  }
  return node;
}

}  // namespace sgqn::ad
