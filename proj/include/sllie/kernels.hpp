#pragma once

#include <algorithm>
#include <cmath>

#include "sllie/tensor.hpp"

// Compute kernels. Forward/backward pairs, OpenMP over independent output
// elements so results do not depend on the thread count. The serial
// counterparts used as test oracles and benchmark baselines live in
// reference.hpp.

namespace sllie::kernels {

inline int64_t conv_out_dim(int64_t in, int64_t k, int64_t stride, int64_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

// x: [B,H,W,Ci], w: [kh,kw,Ci,Co], bias: [Co] or empty -> [B,Ho,Wo,Co]
template <typename T>
Tensor<T> conv2d_nhwc(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                      int64_t stride, int64_t pad) {
  const int64_t B = x.dim(0), H = x.dim(1), W = x.dim(2), Ci = x.dim(3);
  const int64_t kh = w.dim(0), kw = w.dim(1), Co = w.dim(3);
  if (w.dim(2) != Ci) throw std::invalid_argument("conv2d: channel mismatch");
  const int64_t Ho = conv_out_dim(H, kh, stride, pad);
  const int64_t Wo = conv_out_dim(W, kw, stride, pad);
  Tensor<T> y({B, Ho, Wo, Co});
  const bool has_bias = bias.numel() > 0;
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t b = 0; b < B; ++b)
    for (int64_t oh = 0; oh < Ho; ++oh)
      for (int64_t ow = 0; ow < Wo; ++ow)
        for (int64_t co = 0; co < Co; ++co) {
          T acc = has_bias ? bias[co] : T(0);
          for (int64_t r = 0; r < kh; ++r) {
            const int64_t ih = oh * stride - pad + r;
            if (ih < 0 || ih >= H) continue;
            for (int64_t s = 0; s < kw; ++s) {
              const int64_t iw = ow * stride - pad + s;
              if (iw < 0 || iw >= W) continue;
              const T* xp = &x.data[size_t(((b * H + ih) * W + iw) * Ci)];
              const T* wp = &w.data[size_t(((r * kw + s) * Ci) * Co + co)];
              for (int64_t ci = 0; ci < Ci; ++ci) acc += xp[ci] * wp[ci * Co];
            }
          }
          y.at4(b, oh, ow, co) = acc;
        }
  return y;
}

template <typename T>
void conv2d_nhwc_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy,
                          int64_t stride, int64_t pad, Tensor<T>* dx, Tensor<T>* dw,
                          Tensor<T>* db) {
  const int64_t B = x.dim(0), H = x.dim(1), W = x.dim(2), Ci = x.dim(3);
  const int64_t kh = w.dim(0), kw = w.dim(1), Co = w.dim(3);
  const int64_t Ho = dy.dim(1), Wo = dy.dim(2);
  if (dx) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t b = 0; b < B; ++b)
      for (int64_t ih = 0; ih < H; ++ih)
        for (int64_t iw = 0; iw < W; ++iw)
          for (int64_t ci = 0; ci < Ci; ++ci) {
            T acc = 0;
            for (int64_t r = 0; r < kh; ++r) {
              const int64_t num_h = ih + pad - r;
              if (num_h < 0 || num_h % stride) continue;
              const int64_t oh = num_h / stride;
              if (oh >= Ho) continue;
              for (int64_t s = 0; s < kw; ++s) {
                const int64_t num_w = iw + pad - s;
                if (num_w < 0 || num_w % stride) continue;
                const int64_t ow = num_w / stride;
                if (ow >= Wo) continue;
                const T* dyp = &dy.data[size_t(((b * Ho + oh) * Wo + ow) * Co)];
                const T* wp = &w.data[size_t(((r * kw + s) * Ci + ci) * Co)];
                for (int64_t co = 0; co < Co; ++co) acc += dyp[co] * wp[co];
              }
            }
            dx->at4(b, ih, iw, ci) += acc;
          }
  }
  if (dw) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t r = 0; r < kh; ++r)
      for (int64_t s = 0; s < kw; ++s)
        for (int64_t ci = 0; ci < Ci; ++ci)
          for (int64_t co = 0; co < Co; ++co) {
            T acc = 0;
            for (int64_t b = 0; b < B; ++b)
              for (int64_t oh = 0; oh < Ho; ++oh) {
                const int64_t ih = oh * stride - pad + r;
                if (ih < 0 || ih >= H) continue;
                for (int64_t ow = 0; ow < Wo; ++ow) {
                  const int64_t iw = ow * stride - pad + s;
                  if (iw < 0 || iw >= W) continue;
                  acc += x.at4(b, ih, iw, ci) * dy.at4(b, oh, ow, co);
                }
              }
            dw->at4(r, s, ci, co) += acc;
          }
  }
  if (db) {
    for (int64_t b = 0; b < B; ++b)
      for (int64_t oh = 0; oh < Ho; ++oh)
        for (int64_t ow = 0; ow < Wo; ++ow)
          for (int64_t co = 0; co < Co; ++co) (*db)[co] += dy.at4(b, oh, ow, co);
  }
}

// Depth-wise conv, stride 1, same padding. x: [B,H,W,C], w: [k,k,C], bias: [C].
template <typename T>
Tensor<T> dwconv_nhwc(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  const int64_t B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  const int64_t k = w.dim(0), pad = k / 2;
  if (w.dim(2) != C) throw std::invalid_argument("dwconv: channel mismatch");
  Tensor<T> y({B, H, W, C});
  const bool has_bias = bias.numel() > 0;
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t b = 0; b < B; ++b)
    for (int64_t h = 0; h < H; ++h)
      for (int64_t ww = 0; ww < W; ++ww)
        for (int64_t c = 0; c < C; ++c) {
          T acc = has_bias ? bias[c] : T(0);
          for (int64_t r = 0; r < k; ++r) {
            const int64_t ih = h - pad + r;
            if (ih < 0 || ih >= H) continue;
            for (int64_t s = 0; s < k; ++s) {
              const int64_t iw = ww - pad + s;
              if (iw < 0 || iw >= W) continue;
              acc += x.at4(b, ih, iw, c) * w.at3(r, s, c);
            }
          }
          y.at4(b, h, ww, c) = acc;
        }
  return y;
}

template <typename T>
void dwconv_nhwc_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy,
                          Tensor<T>* dx, Tensor<T>* dw, Tensor<T>* db) {
  const int64_t B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  const int64_t k = w.dim(0), pad = k / 2;
  if (dx) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t b = 0; b < B; ++b)
      for (int64_t h = 0; h < H; ++h)
        for (int64_t ww = 0; ww < W; ++ww)
          for (int64_t c = 0; c < C; ++c) {
            T acc = 0;
            for (int64_t r = 0; r < k; ++r) {
              const int64_t oh = h + pad - r;
              if (oh < 0 || oh >= H) continue;
              for (int64_t s = 0; s < k; ++s) {
                const int64_t ow = ww + pad - s;
                if (ow < 0 || ow >= W) continue;
                acc += dy.at4(b, oh, ow, c) * w.at3(r, s, c);
              }
            }
            dx->at4(b, h, ww, c) += acc;
          }
  }
  if (dw) {
#pragma omp parallel for schedule(static)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t r = 0; r < k; ++r)
        for (int64_t s = 0; s < k; ++s) {
          T acc = 0;
          for (int64_t b = 0; b < B; ++b)
            for (int64_t h = 0; h < H; ++h) {
              const int64_t ih = h - pad + r;
              if (ih < 0 || ih >= H) continue;
              for (int64_t ww = 0; ww < W; ++ww) {
                const int64_t iw = ww - pad + s;
                if (iw < 0 || iw >= W) continue;
                acc += x.at4(b, ih, iw, c) * dy.at4(b, h, ww, c);
              }
            }
          dw->at3(r, s, c) += acc;
        }
  }
  if (db) {
    for (int64_t i = 0; i < dy.numel(); ++i) (*db)[i % C] += dy[i];
  }
}

// x: [M,Ci] (leading dims flattened by the caller), w: [Ci,Co], bias: [Co] or empty.
template <typename T>
void linear_forward(const T* x, int64_t M, int64_t Ci, const Tensor<T>& w,
                    const Tensor<T>& bias, T* y) {
  const int64_t Co = w.dim(1);
  const bool has_bias = bias.numel() > 0;
#pragma omp parallel for schedule(static)
  for (int64_t m = 0; m < M; ++m) {
    T* yp = y + m * Co;
    for (int64_t co = 0; co < Co; ++co) yp[co] = has_bias ? bias[co] : T(0);
    const T* xp = x + m * Ci;
    for (int64_t ci = 0; ci < Ci; ++ci) {
      const T xv = xp[ci];
      const T* wp = &w.data[size_t(ci * Co)];
      for (int64_t co = 0; co < Co; ++co) yp[co] += xv * wp[co];
    }
  }
}

template <typename T>
void linear_backward(const T* x, int64_t M, int64_t Ci, const Tensor<T>& w, const T* dy,
                     T* dx, Tensor<T>* dw, Tensor<T>* db) {
  const int64_t Co = w.dim(1);
  if (dx) {
#pragma omp parallel for schedule(static)
    for (int64_t m = 0; m < M; ++m) {
      const T* dyp = dy + m * Co;
      T* dxp = dx + m * Ci;
      for (int64_t ci = 0; ci < Ci; ++ci) {
        T acc = 0;
        const T* wp = &w.data[size_t(ci * Co)];
        for (int64_t co = 0; co < Co; ++co) acc += dyp[co] * wp[co];
        dxp[ci] += acc;
      }
    }
  }
  if (dw) {
#pragma omp parallel for schedule(static)
    for (int64_t ci = 0; ci < Ci; ++ci)
      for (int64_t co = 0; co < Co; ++co) {
        T acc = 0;
        for (int64_t m = 0; m < M; ++m) acc += x[m * Ci + ci] * dy[m * Co + co];
        dw->at2(ci, co) += acc;
      }
  }
  if (db) {
    for (int64_t m = 0; m < M; ++m)
      for (int64_t co = 0; co < Co; ++co) (*db)[co] += dy[m * Co + co];
  }
}

// Selective scan core. Per (batch, channel) recurrence over the sequence:
//   h_l = exp(delta_l * a) * h_{l-1} + (delta_l * b_l) * x_l        (state vector, size N)
//   y_l = <cmat_l, h_l> + d * x_l
// x, delta: [B,L,C]; bmat, cmat: [B,L,N]; a: [C,N]; d: [C].
template <typename T>
Tensor<T> scan_core(const Tensor<T>& x, const Tensor<T>& delta, const Tensor<T>& a,
                    const Tensor<T>& bmat, const Tensor<T>& cmat, const Tensor<T>& d) {
  const int64_t B = x.dim(0), L = x.dim(1), C = x.dim(2), N = a.dim(1);
  Tensor<T> y({B, L, C});
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c) {
      std::vector<T> h(size_t(N), T(0));
      const T* ac = &a.data[size_t(c * N)];
      const T dc = d[c];
      for (int64_t l = 0; l < L; ++l) {
        const T xv = x.at3(b, l, c);
        const T dt = delta.at3(b, l, c);
        const T* bl = &bmat.data[size_t((b * L + l) * N)];
        const T* cl = &cmat.data[size_t((b * L + l) * N)];
        T acc = dc * xv;
        for (int64_t n = 0; n < N; ++n) {
          h[size_t(n)] = std::exp(dt * ac[n]) * h[size_t(n)] + dt * bl[n] * xv;
          acc += cl[n] * h[size_t(n)];
        }
        y.at3(b, l, c) = acc;
      }
    }
  return y;
}

// Backward recomputes the forward recurrence per (b,c) slice, then runs the
// adjoint recurrence in reverse. da/dd are reduced over batch serially so the
// result is independent of scheduling.
template <typename T>
void scan_core_backward(const Tensor<T>& x, const Tensor<T>& delta, const Tensor<T>& a,
                        const Tensor<T>& bmat, const Tensor<T>& cmat, const Tensor<T>& d,
                        const Tensor<T>& dy, Tensor<T>* dx, Tensor<T>* ddelta, Tensor<T>* da,
                        Tensor<T>* dbmat, Tensor<T>* dcmat, Tensor<T>* dd) {
  const int64_t B = x.dim(0), L = x.dim(1), C = x.dim(2), N = a.dim(1);
  const size_t nb = size_t(B);
  std::vector<Tensor<T>> da_b(nb), dd_b(nb);
  for (int64_t b = 0; b < B; ++b) {
    if (da) da_b[size_t(b)] = Tensor<T>({C, N});
    if (dd) dd_b[size_t(b)] = Tensor<T>({C});
  }
#pragma omp parallel for schedule(static)
  for (int64_t b = 0; b < B; ++b) {
    const size_t ln = size_t(L * N), nn = size_t(N);
    std::vector<T> h_all(ln), abar_all(ln), dh(nn);
    for (int64_t c = 0; c < C; ++c) {
      const T* ac = &a.data[size_t(c * N)];
      const T dc = d[c];
      // forward recompute
      for (int64_t n = 0; n < N; ++n) h_all[size_t(n)] = 0;
      for (int64_t l = 0; l < L; ++l) {
        const T xv = x.at3(b, l, c);
        const T dt = delta.at3(b, l, c);
        const T* bl = &bmat.data[size_t((b * L + l) * N)];
        for (int64_t n = 0; n < N; ++n) {
          const T prev = l ? h_all[size_t((l - 1) * N + n)] : T(0);
          const T ab = std::exp(dt * ac[n]);
          abar_all[size_t(l * N + n)] = ab;
          h_all[size_t(l * N + n)] = ab * prev + dt * bl[n] * xv;
        }
      }
      // adjoint sweep
      std::fill(dh.begin(), dh.end(), T(0));
      for (int64_t l = L - 1; l >= 0; --l) {
        const T xv = x.at3(b, l, c);
        const T dt = delta.at3(b, l, c);
        const T dyv = dy.at3(b, l, c);
        const T* bl = &bmat.data[size_t((b * L + l) * N)];
        const T* cl = &cmat.data[size_t((b * L + l) * N)];
        T dx_acc = dc * dyv;
        T ddt_acc = 0;
        if (dd) dd_b[size_t(b)][c] += dyv * xv;
        for (int64_t n = 0; n < N; ++n) {
          const T hl = h_all[size_t(l * N + n)];
          if (dcmat) dcmat->data[size_t((b * L + l) * N + n)] += hl * dyv;
          T dhn = dh[size_t(n)] + cl[n] * dyv;
          const T prev = l ? h_all[size_t((l - 1) * N + n)] : T(0);
          const T ab = abar_all[size_t(l * N + n)];
          const T dabar = dhn * prev;
          const T dbbar = dhn * xv;
          dx_acc += dt * bl[n] * dhn;
          ddt_acc += dabar * ac[n] * ab + dbbar * bl[n];
          if (da) da_b[size_t(b)].at2(c, n) += dabar * dt * ab;
          if (dbmat) dbmat->data[size_t((b * L + l) * N + n)] += dbbar * dt;
          dh[size_t(n)] = ab * dhn;
        }
        if (dx) dx->at3(b, l, c) += dx_acc;
        if (ddelta) ddelta->at3(b, l, c) += ddt_acc;
      }
    }
  }
  for (int64_t b = 0; b < B; ++b) {
    if (da)
      for (int64_t i = 0; i < da->numel(); ++i) (*da)[i] += da_b[size_t(b)][i];
    if (dd)
      for (int64_t i = 0; i < dd->numel(); ++i) (*dd)[i] += dd_b[size_t(b)][i];
  }
}

// Bilinear resize, NCHW, half-pixel centers. Identity when sizes match.
template <typename T>
Tensor<T> bilinear_resize_nchw(const Tensor<T>& x, int64_t Ho, int64_t Wo) {
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor<T> y({B, C, Ho, Wo});
  const double sh = double(H) / double(Ho), sw = double(W) / double(Wo);
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t oh = 0; oh < Ho; ++oh) {
        double fy = (oh + 0.5) * sh - 0.5;
        int64_t y0 = int64_t(std::floor(fy));
        double wy = fy - y0;
        int64_t y0c = std::clamp<int64_t>(y0, 0, H - 1);
        int64_t y1c = std::clamp<int64_t>(y0 + 1, 0, H - 1);
        for (int64_t ow = 0; ow < Wo; ++ow) {
          double fx = (ow + 0.5) * sw - 0.5;
          int64_t x0 = int64_t(std::floor(fx));
          double wx = fx - x0;
          int64_t x0c = std::clamp<int64_t>(x0, 0, W - 1);
          int64_t x1c = std::clamp<int64_t>(x0 + 1, 0, W - 1);
          const double v = (1 - wy) * ((1 - wx) * x.at4(b, c, y0c, x0c) + wx * x.at4(b, c, y0c, x1c)) +
                           wy * ((1 - wx) * x.at4(b, c, y1c, x0c) + wx * x.at4(b, c, y1c, x1c));
          y.at4(b, c, oh, ow) = T(v);
        }
      }
  return y;
}

template <typename T>
void bilinear_resize_nchw_backward(int64_t H, int64_t W, const Tensor<T>& dy, Tensor<T>* dx) {
  const int64_t B = dy.dim(0), C = dy.dim(1), Ho = dy.dim(2), Wo = dy.dim(3);
  const double sh = double(H) / double(Ho), sw = double(W) / double(Wo);
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t oh = 0; oh < Ho; ++oh) {
        double fy = (oh + 0.5) * sh - 0.5;
        int64_t y0 = int64_t(std::floor(fy));
        double wy = fy - y0;
        int64_t y0c = std::clamp<int64_t>(y0, 0, H - 1);
        int64_t y1c = std::clamp<int64_t>(y0 + 1, 0, H - 1);
        for (int64_t ow = 0; ow < Wo; ++ow) {
          double fx = (ow + 0.5) * sw - 0.5;
          int64_t x0 = int64_t(std::floor(fx));
          double wx = fx - x0;
          int64_t x0c = std::clamp<int64_t>(x0, 0, W - 1);
          int64_t x1c = std::clamp<int64_t>(x0 + 1, 0, W - 1);
          const T g = dy.at4(b, c, oh, ow);
          dx->at4(b, c, y0c, x0c) += T((1 - wy) * (1 - wx)) * g;
          dx->at4(b, c, y0c, x1c) += T((1 - wy) * wx) * g;
          dx->at4(b, c, y1c, x0c) += T(wy * (1 - wx)) * g;
          dx->at4(b, c, y1c, x1c) += T(wy * wx) * g;
        }
      }
}

}  // namespace sllie::kernels
