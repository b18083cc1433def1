#pragma once

#include <cmath>

#include "sllie/tensor.hpp"

// Serial reference implementations. These are deliberately written as plain
// step-by-step loops, independent of the OpenMP kernels, and serve both as
// test oracles and as the baseline side of the benchmark target.

namespace sllie::ref {

// Zero-order-hold discretization:
//   a_bar[l,c,n] = exp(delta[l,c] * a[c,n]),  b_bar[l,c,n] = delta[l,c] * b[l,n]
template <typename T>
void discretize(const Tensor<T>& delta, const Tensor<T>& a, const Tensor<T>& b,
                Tensor<T>* a_bar, Tensor<T>* b_bar) {
  const int64_t L = delta.dim(0), C = delta.dim(1), N = a.dim(1);
  for (int64_t l = 0; l < L; ++l)
    for (int64_t c = 0; c < C; ++c) {
      if (!(delta.at2(l, c) > T(0)))
        throw std::invalid_argument("discretize: delta must be strictly positive");
      for (int64_t n = 0; n < N; ++n) {
        a_bar->at3(l, c, n) = std::exp(delta.at2(l, c) * a.at2(c, n));
        b_bar->at3(l, c, n) = delta.at2(l, c) * b.at2(l, n);
      }
    }
}

// Naive recurrence oracle for a single sequence.
// x, delta: [L,C]; a: [C,N]; bmat, cmat: [L,N]; d: [C]  ->  y: [L,C]
template <typename T>
Tensor<T> scan_naive(const Tensor<T>& x, const Tensor<T>& delta, const Tensor<T>& a,
                     const Tensor<T>& bmat, const Tensor<T>& cmat, const Tensor<T>& d) {
  const int64_t L = x.dim(0), C = x.dim(1), N = a.dim(1);
  Tensor<T> a_bar({L, C, N}), b_bar({L, C, N});
  discretize(delta, a, bmat, &a_bar, &b_bar);
  Tensor<T> h({C, N});
  Tensor<T> y({L, C});
  for (int64_t l = 0; l < L; ++l)
    for (int64_t c = 0; c < C; ++c) {
      T acc = d[c] * x.at2(l, c);
      for (int64_t n = 0; n < N; ++n) {
        h.at2(c, n) = a_bar.at3(l, c, n) * h.at2(c, n) + b_bar.at3(l, c, n) * x.at2(l, c);
        acc += cmat.at2(l, n) * h.at2(c, n);
      }
      y.at2(l, c) = acc;
    }
  return y;
}

template <typename T>
Tensor<T> conv2d_nhwc(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                      int64_t stride, int64_t pad) {
  const int64_t B = x.dim(0), H = x.dim(1), W = x.dim(2), Ci = x.dim(3);
  const int64_t kh = w.dim(0), kw = w.dim(1), Co = w.dim(3);
  const int64_t Ho = (H + 2 * pad - kh) / stride + 1;
  const int64_t Wo = (W + 2 * pad - kw) / stride + 1;
  Tensor<T> y({B, Ho, Wo, Co});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t oh = 0; oh < Ho; ++oh)
      for (int64_t ow = 0; ow < Wo; ++ow)
        for (int64_t co = 0; co < Co; ++co) {
          T acc = bias.numel() ? bias[co] : T(0);
          for (int64_t r = 0; r < kh; ++r)
            for (int64_t s = 0; s < kw; ++s) {
              const int64_t ih = oh * stride - pad + r;
              const int64_t iw = ow * stride - pad + s;
              if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
              for (int64_t ci = 0; ci < Ci; ++ci)
                acc += x.at4(b, ih, iw, ci) * w.at4(r, s, ci, co);
            }
          y.at4(b, oh, ow, co) = acc;
        }
  return y;
}

template <typename T>
Tensor<T> dwconv_nhwc(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  const int64_t B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  const int64_t k = w.dim(0), pad = k / 2;
  Tensor<T> y({B, H, W, C});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t h = 0; h < H; ++h)
      for (int64_t ww = 0; ww < W; ++ww)
        for (int64_t c = 0; c < C; ++c) {
          T acc = bias.numel() ? bias[c] : T(0);
          for (int64_t r = 0; r < k; ++r)
            for (int64_t s = 0; s < k; ++s) {
              const int64_t ih = h - pad + r;
              const int64_t iw = ww - pad + s;
              if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
              acc += x.at4(b, ih, iw, c) * w.at3(r, s, c);
            }
          y.at4(b, h, ww, c) = acc;
        }
  return y;
}

}  // namespace sllie::ref
