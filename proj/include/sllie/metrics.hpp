#pragma once

#include "sllie/tensor.hpp"

// Full-reference (PSNR, SSIM) and no-reference (LOE) image quality metrics.
// All functions take [B,3,H,W] tensors with values in [0,1] and average over
// the batch.

namespace sllie::metrics {

inline constexpr double kPsnrCap = 99.0;

template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "psnr");
  double mse = 0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    const double d = double(a[i]) - double(b[i]);
    mse += d * d;
  }
  mse /= double(a.numel());
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

namespace detail {

inline std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> w(size_t(size), 0.0);
  const int half = size / 2;
  double sum = 0;
  for (int i = 0; i < size; ++i) {
    w[size_t(i)] = std::exp(-0.5 * double(i - half) * double(i - half) / (sigma * sigma));
    sum += w[size_t(i)];
  }
  for (double& v : w) v /= sum;
  return w;
}

// separable valid-mode gaussian filtering of one H x W plane
inline std::vector<double> filter_valid(const std::vector<double>& img, int64_t H, int64_t W,
                                        const std::vector<double>& k) {
  const int64_t ks = int64_t(k.size());
  const int64_t Wo = W - ks + 1, Ho = H - ks + 1;
  std::vector<double> tmp(size_t(H * Wo)), out(size_t(Ho * Wo));
  for (int64_t h = 0; h < H; ++h)
    for (int64_t w = 0; w < Wo; ++w) {
      double acc = 0;
      for (int64_t i = 0; i < ks; ++i) acc += k[size_t(i)] * img[size_t(h * W + w + i)];
      tmp[size_t(h * Wo + w)] = acc;
    }
  for (int64_t h = 0; h < Ho; ++h)
    for (int64_t w = 0; w < Wo; ++w) {
      double acc = 0;
      for (int64_t i = 0; i < ks; ++i) acc += k[size_t(i)] * tmp[size_t((h + i) * Wo + w)];
      out[size_t(h * Wo + w)] = acc;
    }
  return out;
}

}  // namespace detail

// Per-channel SSIM, 11x11 gaussian window sigma 1.5, C1=(0.01)^2 C2=(0.03)^2,
// valid windows, averaged over channels, space and batch.
template <typename T>
double ssim(const Tensor<T>& a, const Tensor<T>& b, int window = 11, double sigma = 1.5) {
  check_same_shape(a, b, "ssim");
  const int64_t B = a.dim(0), C = a.dim(1), H = a.dim(2), W = a.dim(3);
  if (H < window || W < window)
    throw std::invalid_argument("ssim: image smaller than the filter window");
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const auto k = detail::gaussian_window(window, sigma);
  double total = 0;
  int64_t count = 0;
  std::vector<double> x(size_t(H * W)), y(size_t(H * W)), xx(size_t(H * W)),
      yy(size_t(H * W)), xy(size_t(H * W));
  for (int64_t bi = 0; bi < B; ++bi)
    for (int64_t c = 0; c < C; ++c) {
      const T* pa = &a.data[size_t((bi * C + c) * H * W)];
      const T* pb = &b.data[size_t((bi * C + c) * H * W)];
      for (int64_t i = 0; i < H * W; ++i) {
        x[size_t(i)] = double(pa[i]);
        y[size_t(i)] = double(pb[i]);
        xx[size_t(i)] = x[size_t(i)] * x[size_t(i)];
        yy[size_t(i)] = y[size_t(i)] * y[size_t(i)];
        xy[size_t(i)] = x[size_t(i)] * y[size_t(i)];
      }
      const auto mx = detail::filter_valid(x, H, W, k);
      const auto my = detail::filter_valid(y, H, W, k);
      const auto mxx = detail::filter_valid(xx, H, W, k);
      const auto myy = detail::filter_valid(yy, H, W, k);
      const auto mxy = detail::filter_valid(xy, H, W, k);
      for (size_t i = 0; i < mx.size(); ++i) {
        const double vx = mxx[i] - mx[i] * mx[i];
        const double vy = myy[i] - my[i] * my[i];
        const double cov = mxy[i] - mx[i] * my[i];
        const double num = (2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2);
        const double den = (mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2);
        total += num / den;
        ++count;
      }
    }
  return total / double(count);
}

namespace detail {

// per-pixel max over channels, nearest-downsampled so min(H,W) <= 50
template <typename T>
std::vector<double> lightness_map(const Tensor<T>& img, int64_t b, int64_t* Hd, int64_t* Wd) {
  const int64_t C = img.dim(1), H = img.dim(2), W = img.dim(3);
  const int64_t mn = std::min(H, W);
  const double r = mn > 50 ? 50.0 / double(mn) : 1.0;
  *Hd = std::max<int64_t>(1, int64_t(std::llround(double(H) * r)));
  *Wd = std::max<int64_t>(1, int64_t(std::llround(double(W) * r)));
  std::vector<double> out(size_t(*Hd * *Wd));
  for (int64_t i = 0; i < *Hd; ++i) {
    const int64_t sh = std::min<int64_t>(H - 1, int64_t(double(i) * double(H) / double(*Hd)));
    for (int64_t j = 0; j < *Wd; ++j) {
      const int64_t sw = std::min<int64_t>(W - 1, int64_t(double(j) * double(W) / double(*Wd)));
      double mx = 0;
      for (int64_t c = 0; c < C; ++c)
        mx = std::max(mx, double(img.at4(b, c, sh, sw)));
      out[size_t(i * *Wd + j)] = mx;
    }
  }
  return out;
}

}  // namespace detail

// Lightness order error: mean count per sampled pixel of pixel pairs whose
// lightness ordering differs between original and enhanced.
template <typename T>
double loe(const Tensor<T>& original, const Tensor<T>& enhanced) {
  check_same_shape(original, enhanced, "loe");
  const int64_t B = original.dim(0);
  double total = 0;
  for (int64_t b = 0; b < B; ++b) {
    int64_t Hd = 0, Wd = 0, Hd2 = 0, Wd2 = 0;
    const auto lo = detail::lightness_map(original, b, &Hd, &Wd);
    const auto le = detail::lightness_map(enhanced, b, &Hd2, &Wd2);
    const int64_t m = Hd * Wd;
    int64_t flips = 0;
#pragma omp parallel for reduction(+ : flips) schedule(static)
    for (int64_t x = 0; x < m; ++x)
      for (int64_t y = 0; y < m; ++y)
        if ((lo[size_t(x)] >= lo[size_t(y)]) != (le[size_t(x)] >= le[size_t(y)])) ++flips;
    total += double(flips) / double(m);
  }
  return total / double(B);
}

}  // namespace sllie::metrics
