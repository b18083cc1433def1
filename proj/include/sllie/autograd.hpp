#pragma once

#include <functional>
#include <memory>
#include <unordered_set>

#include "sllie/kernels.hpp"
#include "sllie/tensor.hpp"

// Reverse-mode autodiff over Tensor<T>. A forward pass builds a dynamic graph
// of shared_ptr nodes; backward() topologically sorts it and runs the adjoint
// closures. Nodes whose subtree contains no trainable leaf carry no closure,
// so no-grad forwards (teacher, frozen encoder weights) stay cheap.

namespace sllie {

template <typename T>
class Node;
template <typename T>
using Var = std::shared_ptr<Node<T>>;

template <typename T>
class Node {
 public:
  Tensor<T> value;
  Tensor<T> grad;  // lazily allocated
  bool requires_grad = false;
  std::vector<Var<T>> parents;
  std::function<void(Node<T>&)> backward_fn;

  Tensor<T>& grad_buf() {
    if (grad.numel() == 0) grad = Tensor<T>(value.shape);
    return grad;
  }
  void accum(const Tensor<T>& g) {
    Tensor<T>& gb = grad_buf();
    for (int64_t i = 0; i < g.numel(); ++i) gb[i] += g[i];
  }
  void zero_grad() {
    if (grad.numel()) std::fill(grad.data.begin(), grad.data.end(), T(0));
  }
};

namespace ag {

template <typename T>
Var<T> leaf(Tensor<T> v, bool requires_grad = false) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(v);
  n->requires_grad = requires_grad;
  return n;
}

template <typename T>
Var<T> constant(Tensor<T> v) {
  return leaf(std::move(v), false);
}

template <typename T>
Var<T> detach(const Var<T>& a) {
  return leaf(a->value, false);
}

template <typename T>
Var<T> make_node(Tensor<T> v, std::vector<Var<T>> parents,
                 std::function<void(Node<T>&)> fn) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(v);
  n->parents = std::move(parents);
  for (auto& p : n->parents)
    if (p->requires_grad) n->requires_grad = true;
  if (n->requires_grad) n->backward_fn = std::move(fn);
  return n;
}

template <typename T>
void backward(const Var<T>& root) {
  if (root->value.numel() != 1)
    throw std::invalid_argument("backward: root must be scalar");
  // iterative post-order DFS
  std::vector<Node<T>*> topo;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, size_t>> stack;
  stack.push_back({root.get(), 0});
  visited.insert(root.get());
  while (!stack.empty()) {
    auto [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      stack.back().second++;
      Node<T>* p = node->parents[idx].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      topo.push_back(node);
      stack.pop_back();
    }
  }
  root->grad_buf()[0] += T(1);
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn && n->grad.numel()) n->backward_fn(*n);
  }
}

// ---- elementwise ----

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  check_same_shape(a->value, b->value, "add");
  Tensor<T> v = a->value;
  for (int64_t i = 0; i < v.numel(); ++i) v[i] += b->value[i];
  return make_node<T>(std::move(v), {a, b}, [a, b](Node<T>& self) {
    if (a->requires_grad) a->accum(self.grad);
    if (b->requires_grad) b->accum(self.grad);
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  check_same_shape(a->value, b->value, "sub");
  Tensor<T> v = a->value;
  for (int64_t i = 0; i < v.numel(); ++i) v[i] -= b->value[i];
  return make_node<T>(std::move(v), {a, b}, [a, b](Node<T>& self) {
    if (a->requires_grad) a->accum(self.grad);
    if (b->requires_grad) {
      Tensor<T>& gb = b->grad_buf();
      for (int64_t i = 0; i < gb.numel(); ++i) gb[i] -= self.grad[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  check_same_shape(a->value, b->value, "mul");
  Tensor<T> v = a->value;
  for (int64_t i = 0; i < v.numel(); ++i) v[i] *= b->value[i];
  return make_node<T>(std::move(v), {a, b}, [a, b](Node<T>& self) {
    if (a->requires_grad) {
      Tensor<T>& ga = a->grad_buf();
      for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += self.grad[i] * b->value[i];
    }
    if (b->requires_grad) {
      Tensor<T>& gb = b->grad_buf();
      for (int64_t i = 0; i < gb.numel(); ++i) gb[i] += self.grad[i] * a->value[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, double s) {
  Tensor<T> v = a->value;
  for (auto& x : v.data) x = T(double(x) * s);
  return make_node<T>(std::move(v), {a}, [a, s](Node<T>& self) {
    Tensor<T>& ga = a->grad_buf();
    for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += T(double(self.grad[i]) * s);
  });
}

template <typename T, typename FwdFn, typename GradFn>
Var<T> unary_op(const Var<T>& a, FwdFn f, GradFn dfdx) {
  Tensor<T> v = a->value;
  for (auto& x : v.data) x = f(x);
  return make_node<T>(std::move(v), {a}, [a, dfdx](Node<T>& self) {
    Tensor<T>& ga = a->grad_buf();
    for (int64_t i = 0; i < ga.numel(); ++i)
      ga[i] += self.grad[i] * dfdx(a->value[i], self.value[i]);
  });
}

template <typename T>
inline T sigmoid_scalar(T x) {
  return x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  return unary_op(
      a, [](T x) { return sigmoid_scalar(x); },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> silu(const Var<T>& a) {
  return unary_op(
      a, [](T x) { return x * sigmoid_scalar(x); },
      [](T x, T) {
        const T s = sigmoid_scalar(x);
        return s * (T(1) + x * (T(1) - s));
      });
}

template <typename T>
Var<T> tanh_act(const Var<T>& a) {
  return unary_op(
      a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& a, double slope) {
  return unary_op(
      a, [slope](T x) { return x >= T(0) ? x : T(double(x) * slope); },
      [slope](T x, T) { return x >= T(0) ? T(1) : T(slope); });
}

template <typename T>
Var<T> softplus(const Var<T>& a) {
  return unary_op(
      a,
      [](T x) {
        return x > T(20) ? x : T(std::log1p(std::exp(double(x))));
      },
      [](T x, T) { return sigmoid_scalar(x); });
}

// value = -exp(x); used to build the strictly negative state matrix.
template <typename T>
Var<T> neg_exp(const Var<T>& a) {
  return unary_op(
      a, [](T x) { return -std::exp(x); }, [](T, T y) { return y; });
}

// ---- shape ----

template <typename T>
Var<T> reshape(const Var<T>& a, std::vector<int64_t> new_shape) {
  if (Tensor<T>::numel_of(new_shape) != a->value.numel())
    throw std::invalid_argument("reshape: numel mismatch");
  Tensor<T> v(std::move(new_shape), a->value.data);
  return make_node<T>(std::move(v), {a}, [a](Node<T>& self) {
    Tensor<T>& ga = a->grad_buf();
    for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += self.grad[i];
  });
}

template <typename T>
Var<T> nchw_to_nhwc(const Var<T>& a) {
  const int64_t B = a->value.dim(0), C = a->value.dim(1), H = a->value.dim(2),
                W = a->value.dim(3);
  Tensor<T> v({B, H, W, C});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t h = 0; h < H; ++h)
        for (int64_t w = 0; w < W; ++w) v.at4(b, h, w, c) = a->value.at4(b, c, h, w);
  return make_node<T>(std::move(v), {a}, [a, B, C, H, W](Node<T>& self) {
    Tensor<T>& ga = a->grad_buf();
    for (int64_t b = 0; b < B; ++b)
      for (int64_t c = 0; c < C; ++c)
        for (int64_t h = 0; h < H; ++h)
          for (int64_t w = 0; w < W; ++w)
            ga.at4(b, c, h, w) += self.grad.at4(b, h, w, c);
  });
}

template <typename T>
Var<T> nhwc_to_nchw(const Var<T>& a) {
  const int64_t B = a->value.dim(0), H = a->value.dim(1), W = a->value.dim(2),
                C = a->value.dim(3);
  Tensor<T> v({B, C, H, W});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t h = 0; h < H; ++h)
      for (int64_t w = 0; w < W; ++w)
        for (int64_t c = 0; c < C; ++c) v.at4(b, c, h, w) = a->value.at4(b, h, w, c);
  return make_node<T>(std::move(v), {a}, [a, B, C, H, W](Node<T>& self) {
    Tensor<T>& ga = a->grad_buf();
    for (int64_t b = 0; b < B; ++b)
      for (int64_t h = 0; h < H; ++h)
        for (int64_t w = 0; w < W; ++w)
          for (int64_t c = 0; c < C; ++c) ga.at4(b, h, w, c) += self.grad.at4(b, c, h, w);
  });
}

template <typename T>
Var<T> concat_last(const Var<T>& a, const Var<T>& b) {
  const auto& sa = a->value.shape;
  const auto& sb = b->value.shape;
  if (sa.size() != sb.size()) throw std::invalid_argument("concat: rank mismatch");
  for (size_t i = 0; i + 1 < sa.size(); ++i)
    if (sa[i] != sb[i]) throw std::invalid_argument("concat: leading dim mismatch");
  const int64_t Ca = sa.back(), Cb = sb.back();
  const int64_t M = a->value.numel() / Ca;
  std::vector<int64_t> os = sa;
  os.back() = Ca + Cb;
  Tensor<T> v(os);
  for (int64_t m = 0; m < M; ++m) {
    for (int64_t i = 0; i < Ca; ++i) v[m * (Ca + Cb) + i] = a->value[m * Ca + i];
    for (int64_t i = 0; i < Cb; ++i) v[m * (Ca + Cb) + Ca + i] = b->value[m * Cb + i];
  }
  return make_node<T>(std::move(v), {a, b}, [a, b, M, Ca, Cb](Node<T>& self) {
    if (a->requires_grad) {
      Tensor<T>& ga = a->grad_buf();
      for (int64_t m = 0; m < M; ++m)
        for (int64_t i = 0; i < Ca; ++i) ga[m * Ca + i] += self.grad[m * (Ca + Cb) + i];
    }
    if (b->requires_grad) {
      Tensor<T>& gb = b->grad_buf();
      for (int64_t m = 0; m < M; ++m)
        for (int64_t i = 0; i < Cb; ++i)
          gb[m * Cb + i] += self.grad[m * (Ca + Cb) + Ca + i];
    }
  });
}

// out[b,l,c] = x[b, idx[l], c]; idx is a permutation of 0..L-1.
template <typename T>
Var<T> gather_rows(const Var<T>& x, std::vector<int64_t> idx) {
  const int64_t B = x->value.dim(0), L = x->value.dim(1), C = x->value.dim(2);
  if (int64_t(idx.size()) != L) throw std::invalid_argument("gather_rows: bad index size");
  Tensor<T> v({B, L, C});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t l = 0; l < L; ++l) {
      const T* src = &x->value.data[size_t((b * L + idx[size_t(l)]) * C)];
      T* dst = &v.data[size_t((b * L + l) * C)];
      std::copy(src, src + C, dst);
    }
  return make_node<T>(std::move(v), {x}, [x, idx = std::move(idx), B, L, C](Node<T>& self) {
    Tensor<T>& gx = x->grad_buf();
    for (int64_t b = 0; b < B; ++b)
      for (int64_t l = 0; l < L; ++l) {
        T* dst = &gx.data[size_t((b * L + idx[size_t(l)]) * C)];
        const T* src = &self.grad.data[size_t((b * L + l) * C)];
        for (int64_t c = 0; c < C; ++c) dst[c] += src[c];
      }
  });
}

// ---- linear algebra / conv ----

// x: [..., Ci], w: [Ci, Co], b: [Co] or nullptr.
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  const int64_t Ci = x->value.shape.back();
  if (w->value.dim(0) != Ci)
    throw std::invalid_argument("linear: input channels " + std::to_string(Ci) +
                                " vs weight " + std::to_string(w->value.dim(0)));
  const int64_t Co = w->value.dim(1);
  const int64_t M = x->value.numel() / Ci;
  std::vector<int64_t> os = x->value.shape;
  os.back() = Co;
  Tensor<T> v(os);
  static const Tensor<T> empty;
  kernels::linear_forward(x->value.data.data(), M, Ci, w->value, b ? b->value : empty,
                          v.data.data());
  std::vector<Var<T>> parents = {x, w};
  if (b) parents.push_back(b);
  return make_node<T>(std::move(v), std::move(parents), [x, w, b, M, Ci](Node<T>& self) {
    kernels::linear_backward(x->value.data.data(), M, Ci, w->value, self.grad.data.data(),
                             x->requires_grad ? x->grad_buf().data.data() : nullptr,
                             w->requires_grad ? &w->grad_buf() : nullptr,
                             (b && b->requires_grad) ? &b->grad_buf() : nullptr);
  });
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int64_t stride,
              int64_t pad) {
  static const Tensor<T> empty;
  Tensor<T> v = kernels::conv2d_nhwc(x->value, w->value, b ? b->value : empty, stride, pad);
  std::vector<Var<T>> parents = {x, w};
  if (b) parents.push_back(b);
  return make_node<T>(std::move(v), std::move(parents), [x, w, b, stride, pad](Node<T>& self) {
    kernels::conv2d_nhwc_backward(x->value, w->value, self.grad, stride, pad,
                                  x->requires_grad ? &x->grad_buf() : nullptr,
                                  w->requires_grad ? &w->grad_buf() : nullptr,
                                  (b && b->requires_grad) ? &b->grad_buf() : nullptr);
  });
}

template <typename T>
Var<T> dwconv(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  static const Tensor<T> empty;
  Tensor<T> v = kernels::dwconv_nhwc(x->value, w->value, b ? b->value : empty);
  std::vector<Var<T>> parents = {x, w};
  if (b) parents.push_back(b);
  return make_node<T>(std::move(v), std::move(parents), [x, w, b](Node<T>& self) {
    kernels::dwconv_nhwc_backward(x->value, w->value, self.grad,
                                  x->requires_grad ? &x->grad_buf() : nullptr,
                                  w->requires_grad ? &w->grad_buf() : nullptr,
                                  (b && b->requires_grad) ? &b->grad_buf() : nullptr);
  });
}

// LayerNorm over the last dimension with affine parameters.
template <typename T>
Var<T> layernorm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                 double eps = 1e-5) {
  const int64_t C = x->value.shape.back();
  const int64_t M = x->value.numel() / C;
  Tensor<T> v(x->value.shape);
  auto xhat = std::make_shared<Tensor<T>>(x->value.shape);
  auto rstd = std::make_shared<Tensor<T>>(std::vector<int64_t>{M});
  for (int64_t m = 0; m < M; ++m) {
    const T* xp = &x->value.data[size_t(m * C)];
    double mu = 0;
    for (int64_t c = 0; c < C; ++c) mu += xp[c];
    mu /= C;
    double var = 0;
    for (int64_t c = 0; c < C; ++c) var += (xp[c] - mu) * (xp[c] - mu);
    var /= C;
    const double rs = 1.0 / std::sqrt(var + eps);
    (*rstd)[m] = T(rs);
    for (int64_t c = 0; c < C; ++c) {
      const T xh = T((xp[c] - mu) * rs);
      (*xhat)[m * C + c] = xh;
      v[m * C + c] = gamma->value[c] * xh + beta->value[c];
    }
  }
  return make_node<T>(std::move(v), {x, gamma, beta},
                      [x, gamma, beta, xhat, rstd, M, C](Node<T>& self) {
    for (int64_t m = 0; m < M; ++m) {
      const T* dyp = &self.grad.data[size_t(m * C)];
      const T* xh = &xhat->data[size_t(m * C)];
      if (gamma->requires_grad) {
        Tensor<T>& gg = gamma->grad_buf();
        for (int64_t c = 0; c < C; ++c) gg[c] += dyp[c] * xh[c];
      }
      if (beta->requires_grad) {
        Tensor<T>& gb = beta->grad_buf();
        for (int64_t c = 0; c < C; ++c) gb[c] += dyp[c];
      }
      if (x->requires_grad) {
        double mean_dxhat = 0, mean_dxhat_xhat = 0;
        for (int64_t c = 0; c < C; ++c) {
          const double dxh = double(dyp[c]) * double(gamma->value[c]);
          mean_dxhat += dxh;
          mean_dxhat_xhat += dxh * double(xh[c]);
        }
        mean_dxhat /= C;
        mean_dxhat_xhat /= C;
        Tensor<T>& gx = x->grad_buf();
        const double rs = double((*rstd)[m]);
        for (int64_t c = 0; c < C; ++c) {
          const double dxh = double(dyp[c]) * double(gamma->value[c]);
          gx[m * C + c] += T(rs * (dxh - mean_dxhat - double(xh[c]) * mean_dxhat_xhat));
        }
      }
    }
  });
}

// per-channel learnable scale, s: [C] broadcast over the last dim
template <typename T>
Var<T> chan_scale(const Var<T>& x, const Var<T>& s) {
  const int64_t C = x->value.shape.back();
  if (s->value.numel() != C) throw std::invalid_argument("chan_scale: size mismatch");
  Tensor<T> v = x->value;
  const int64_t M = v.numel() / C;
  for (int64_t m = 0; m < M; ++m)
    for (int64_t c = 0; c < C; ++c) v[m * C + c] *= s->value[c];
  return make_node<T>(std::move(v), {x, s}, [x, s, M, C](Node<T>& self) {
    if (x->requires_grad) {
      Tensor<T>& gx = x->grad_buf();
      for (int64_t m = 0; m < M; ++m)
        for (int64_t c = 0; c < C; ++c) gx[m * C + c] += self.grad[m * C + c] * s->value[c];
    }
    if (s->requires_grad) {
      Tensor<T>& gs = s->grad_buf();
      for (int64_t m = 0; m < M; ++m)
        for (int64_t c = 0; c < C; ++c) gs[c] += self.grad[m * C + c] * x->value[m * C + c];
    }
  });
}

// x: [B,H,W,C] * s: [B,C] broadcast over spatial dims (channel attention gate)
template <typename T>
Var<T> bcast_mul(const Var<T>& x, const Var<T>& s) {
  const int64_t B = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2),
                C = x->value.dim(3);
  Tensor<T> v = x->value;
  for (int64_t b = 0; b < B; ++b)
    for (int64_t p = 0; p < H * W; ++p)
      for (int64_t c = 0; c < C; ++c)
        v[(b * H * W + p) * C + c] *= s->value.at2(b, c);
  return make_node<T>(std::move(v), {x, s}, [x, s, B, H, W, C](Node<T>& self) {
    if (x->requires_grad) {
      Tensor<T>& gx = x->grad_buf();
      for (int64_t b = 0; b < B; ++b)
        for (int64_t p = 0; p < H * W; ++p)
          for (int64_t c = 0; c < C; ++c)
            gx[(b * H * W + p) * C + c] +=
                self.grad[(b * H * W + p) * C + c] * s->value.at2(b, c);
    }
    if (s->requires_grad) {
      Tensor<T>& gs = s->grad_buf();
      for (int64_t b = 0; b < B; ++b)
        for (int64_t p = 0; p < H * W; ++p)
          for (int64_t c = 0; c < C; ++c)
            gs.at2(b, c) +=
                self.grad[(b * H * W + p) * C + c] * x->value[(b * H * W + p) * C + c];
    }
  });
}

// [B,H,W,C] -> [B,C]
template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  const int64_t B = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2),
                C = x->value.dim(3);
  const int64_t P = H * W;
  Tensor<T> v({B, C});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t p = 0; p < P; ++p)
      for (int64_t c = 0; c < C; ++c) v.at2(b, c) += x->value[(b * P + p) * C + c];
  for (auto& e : v.data) e /= T(P);
  return make_node<T>(std::move(v), {x}, [x, B, P, C](Node<T>& self) {
    Tensor<T>& gx = x->grad_buf();
    for (int64_t b = 0; b < B; ++b)
      for (int64_t p = 0; p < P; ++p)
        for (int64_t c = 0; c < C; ++c)
          gx[(b * P + p) * C + c] += self.grad.at2(b, c) / T(P);
  });
}

template <typename T>
Var<T> selective_scan_core(const Var<T>& x, const Var<T>& delta, const Var<T>& a,
                           const Var<T>& bmat, const Var<T>& cmat, const Var<T>& d) {
  Tensor<T> v = kernels::scan_core(x->value, delta->value, a->value, bmat->value,
                                   cmat->value, d->value);
  return make_node<T>(std::move(v), {x, delta, a, bmat, cmat, d},
                      [x, delta, a, bmat, cmat, d](Node<T>& self) {
    kernels::scan_core_backward(
        x->value, delta->value, a->value, bmat->value, cmat->value, d->value, self.grad,
        x->requires_grad ? &x->grad_buf() : nullptr,
        delta->requires_grad ? &delta->grad_buf() : nullptr,
        a->requires_grad ? &a->grad_buf() : nullptr,
        bmat->requires_grad ? &bmat->grad_buf() : nullptr,
        cmat->requires_grad ? &cmat->grad_buf() : nullptr,
        d->requires_grad ? &d->grad_buf() : nullptr);
  });
}

template <typename T>
Var<T> bilinear_resize(const Var<T>& x, int64_t Ho, int64_t Wo) {
  const int64_t H = x->value.dim(2), W = x->value.dim(3);
  Tensor<T> v = kernels::bilinear_resize_nchw(x->value, Ho, Wo);
  return make_node<T>(std::move(v), {x}, [x, H, W](Node<T>& self) {
    kernels::bilinear_resize_nchw_backward(H, W, self.grad, &x->grad_buf());
  });
}

// ---- reductions / losses ----

template <typename T>
Var<T> mean_all(const Var<T>& a) {
  const int64_t n = a->value.numel();
  double acc = 0;
  for (const T& v : a->value.data) acc += double(v);
  Tensor<T> v({1});
  v[0] = T(acc / double(n));
  return make_node<T>(std::move(v), {a}, [a, n](Node<T>& self) {
    Tensor<T>& ga = a->grad_buf();
    const T g = self.grad[0] / T(n);
    for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += g;
  });
}

template <typename T>
Var<T> mean_abs_diff(const Var<T>& a, const Var<T>& b) {
  check_same_shape(a->value, b->value, "mean_abs_diff");
  const int64_t n = a->value.numel();
  double acc = 0;
  for (int64_t i = 0; i < n; ++i) acc += std::abs(double(a->value[i]) - double(b->value[i]));
  Tensor<T> v({1});
  v[0] = T(acc / double(n));
  return make_node<T>(std::move(v), {a, b}, [a, b, n](Node<T>& self) {
    const T g = self.grad[0] / T(n);
    for (int64_t i = 0; i < n; ++i) {
      const T diff = a->value[i] - b->value[i];
      const T s = diff > T(0) ? g : (diff < T(0) ? -g : T(0));
      if (a->requires_grad) a->grad_buf()[i] += s;
      if (b->requires_grad) b->grad_buf()[i] -= s;
    }
  });
}

template <typename T>
Var<T> mean_sq_diff(const Var<T>& a, const Var<T>& b) {
  check_same_shape(a->value, b->value, "mean_sq_diff");
  const int64_t n = a->value.numel();
  double acc = 0;
  for (int64_t i = 0; i < n; ++i) {
    const double d = double(a->value[i]) - double(b->value[i]);
    acc += d * d;
  }
  Tensor<T> v({1});
  v[0] = T(acc / double(n));
  return make_node<T>(std::move(v), {a, b}, [a, b, n](Node<T>& self) {
    const T g = self.grad[0] * T(2) / T(n);
    for (int64_t i = 0; i < n; ++i) {
      const T d = a->value[i] - b->value[i];
      if (a->requires_grad) a->grad_buf()[i] += g * d;
      if (b->requires_grad) b->grad_buf()[i] -= g * d;
    }
  });
}

// scalar ratio a / (b + eps)
template <typename T>
Var<T> scalar_div(const Var<T>& a, const Var<T>& b, double eps) {
  if (a->value.numel() != 1 || b->value.numel() != 1)
    throw std::invalid_argument("scalar_div: scalars expected");
  Tensor<T> v({1});
  const double den = double(b->value[0]) + eps;
  v[0] = T(double(a->value[0]) / den);
  return make_node<T>(std::move(v), {a, b}, [a, b, eps](Node<T>& self) {
    const double den = double(b->value[0]) + eps;
    if (a->requires_grad) a->grad_buf()[0] += T(double(self.grad[0]) / den);
    if (b->requires_grad)
      b->grad_buf()[0] -= T(double(self.grad[0]) * double(a->value[0]) / (den * den));
  });
}

// mean of binary cross-entropy with logits against a constant target in {0,1}
template <typename T>
Var<T> bce_logits_mean(const Var<T>& logits, double target) {
  const int64_t n = logits->value.numel();
  double acc = 0;
  for (int64_t i = 0; i < n; ++i) {
    const double x = double(logits->value[i]);
    // max(x,0) - t*x + log(1+exp(-|x|))
    acc += std::max(x, 0.0) - target * x + std::log1p(std::exp(-std::abs(x)));
  }
  Tensor<T> v({1});
  v[0] = T(acc / double(n));
  return make_node<T>(std::move(v), {logits}, [logits, target, n](Node<T>& self) {
    Tensor<T>& g = logits->grad_buf();
    const T s = self.grad[0] / T(n);
    for (int64_t i = 0; i < n; ++i)
      g[i] += s * (sigmoid_scalar(logits->value[i]) - T(target));
  });
}

// luminance forward-difference magnitude map, NCHW [B,3,H,W] -> [B,2,H,W]
template <typename T>
Var<T> gradient_map(const Var<T>& img) {
  const int64_t B = img->value.dim(0), C = img->value.dim(1), H = img->value.dim(2),
                W = img->value.dim(3);
  if (C != 3) throw std::invalid_argument("gradient_map: 3-channel input expected");
  auto lum = std::make_shared<Tensor<T>>(std::vector<int64_t>{B, H, W});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t h = 0; h < H; ++h)
      for (int64_t w = 0; w < W; ++w)
        lum->at3(b, h, w) =
            (img->value.at4(b, 0, h, w) + img->value.at4(b, 1, h, w) +
             img->value.at4(b, 2, h, w)) / T(3);
  Tensor<T> v({B, 2, H, W});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t h = 0; h < H; ++h)
      for (int64_t w = 0; w < W; ++w) {
        v.at4(b, 0, h, w) =
            (w + 1 < W) ? std::abs(lum->at3(b, h, w + 1) - lum->at3(b, h, w)) : T(0);
        v.at4(b, 1, h, w) =
            (h + 1 < H) ? std::abs(lum->at3(b, h + 1, w) - lum->at3(b, h, w)) : T(0);
      }
  return make_node<T>(std::move(v), {img}, [img, lum, B, H, W](Node<T>& self) {
    Tensor<T> dlum({B, H, W});
    for (int64_t b = 0; b < B; ++b)
      for (int64_t h = 0; h < H; ++h)
        for (int64_t w = 0; w < W; ++w) {
          if (w + 1 < W) {
            const T d = lum->at3(b, h, w + 1) - lum->at3(b, h, w);
            const T s = d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0));
            const T g = self.grad.at4(b, 0, h, w) * s;
            dlum.at3(b, h, w + 1) += g;
            dlum.at3(b, h, w) -= g;
          }
          if (h + 1 < H) {
            const T d = lum->at3(b, h + 1, w) - lum->at3(b, h, w);
            const T s = d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0));
            const T g = self.grad.at4(b, 1, h, w) * s;
            dlum.at3(b, h + 1, w) += g;
            dlum.at3(b, h, w) -= g;
          }
        }
    Tensor<T>& gi = img->grad_buf();
    for (int64_t b = 0; b < B; ++b)
      for (int64_t h = 0; h < H; ++h)
        for (int64_t w = 0; w < W; ++w)
          for (int64_t c = 0; c < 3; ++c)
            gi.at4(b, c, h, w) += dlum.at3(b, h, w) / T(3);
  });
}

template <typename T>
Var<T> sum_vars(const std::vector<Var<T>>& vs) {
  if (vs.empty()) throw std::invalid_argument("sum_vars: empty");
  Var<T> acc = vs[0];
  for (size_t i = 1; i < vs.size(); ++i) acc = add(acc, vs[i]);
  return acc;
}

}  // namespace ag
}  // namespace sllie
