#pragma once

#include "sllie/backbone.hpp"

// Student/teacher parameter management, EMA aggregation, the weak/strong
// augmentation pipelines and pseudo-label production.

namespace sllie::mean_teacher {

template <typename T>
void check_congruent(const ParamStore<T>& a, const ParamStore<T>& b) {
  if (a.names() != b.names())
    throw std::invalid_argument("ModelPair: parameter name sets differ");
  for (const auto& name : a.names())
    if (a.get(name)->value.shape != b.get(name)->value.shape)
      throw std::invalid_argument("ModelPair: shape mismatch at " + name);
}

// teacher <- beta * teacher + (1 - beta) * student, elementwise, one pass
template <typename T>
void ema_update(ParamStore<T>& teacher, const ParamStore<T>& student, double beta) {
  if (beta < 0.0 || beta > 1.0)
    throw std::invalid_argument("ema_update: beta must lie in [0,1]");
  check_congruent(teacher, student);
  for (const auto& name : teacher.names()) {
    Tensor<T>& t = teacher.get(name)->value;
    const Tensor<T>& s = student.get(name)->value;
    for (int64_t i = 0; i < t.numel(); ++i)
      t[i] = T(beta * double(t[i]) + (1.0 - beta) * double(s[i]));
  }
}

template <typename T>
struct ModelPair {
  backbone::EnhanceNet<T> student;
  backbone::EnhanceNet<T> teacher;
  double beta;

  // teacher starts as an exact copy of the student (same seed, same init)
  ModelPair(const backbone::BackboneConfig& cfg, uint64_t seed, double b = 0.999)
      : student(cfg, seed), teacher(cfg, seed), beta(b) {
    if (!(beta > 0.0 && beta < 1.0))
      throw std::invalid_argument("ModelPair: beta must lie in (0,1)");
    // teacher leaves never enter an optimizer
    for (const auto& name : teacher.params.names())
      teacher.params.get(name)->requires_grad = false;
  }

  void update_teacher() { ema_update(teacher.params, student.params, beta); }
};

struct AugmentationPolicy {
  int64_t resize_h = 256;
  int64_t resize_w = 256;
  int blur_kernel = 5;
  double blur_sigma_lo = 0.1;
  double blur_sigma_hi = 2.0;
  double grayscale_prob = 0.2;
  double brightness = 0.2;
  double contrast = 0.2;
  double saturation = 0.2;
  double hue = 0.05;
};

// One concrete set of augmentation decisions for a single image.
struct RandomDraw {
  double brightness_f = 1.0;
  double contrast_f = 1.0;
  double saturation_f = 1.0;
  double hue_shift = 0.0;
  bool grayscale = false;
  double blur_sigma = 0.0;

  static RandomDraw sample(const AugmentationPolicy& p, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    RandomDraw d;
    auto jitter = [&](double mag) {
      return mag > 0 ? 1.0 + mag * (2.0 * u01(rng) - 1.0) : 1.0;
    };
    d.brightness_f = jitter(p.brightness);
    d.contrast_f = jitter(p.contrast);
    d.saturation_f = jitter(p.saturation);
    d.hue_shift = p.hue > 0 ? p.hue * (2.0 * u01(rng) - 1.0) : 0.0;
    d.grayscale = u01(rng) < p.grayscale_prob;
    d.blur_sigma = p.blur_sigma_hi > 0
                       ? p.blur_sigma_lo + (p.blur_sigma_hi - p.blur_sigma_lo) * u01(rng)
                       : 0.0;
    return d;
  }
};

inline double luma601(double r, double g, double b) {
  return 0.299 * r + 0.587 * g + 0.114 * b;
}

namespace detail {

template <typename T>
void rgb_to_hsv(T r, T g, T b, double* h, double* s, double* v) {
  const double mx = std::max({double(r), double(g), double(b)});
  const double mn = std::min({double(r), double(g), double(b)});
  const double d = mx - mn;
  *v = mx;
  *s = mx > 0 ? d / mx : 0.0;
  if (d <= 0) {
    *h = 0.0;
    return;
  }
  double hh;
  if (mx == double(r))
    hh = std::fmod((double(g) - double(b)) / d, 6.0);
  else if (mx == double(g))
    hh = (double(b) - double(r)) / d + 2.0;
  else
    hh = (double(r) - double(g)) / d + 4.0;
  *h = std::fmod(hh / 6.0 + 1.0, 1.0);
}

template <typename T>
void hsv_to_rgb(double h, double s, double v, T* r, T* g, T* b) {
  const double hh = std::fmod(h, 1.0) * 6.0;
  const int i = int(std::floor(hh)) % 6;
  const double f = hh - std::floor(hh);
  const double p = v * (1.0 - s);
  const double q = v * (1.0 - s * f);
  const double t = v * (1.0 - s * (1.0 - f));
  double rr, gg, bb;
  switch (i) {
    case 0: rr = v; gg = t; bb = p; break;
    case 1: rr = q; gg = v; bb = p; break;
    case 2: rr = p; gg = v; bb = t; break;
    case 3: rr = p; gg = q; bb = v; break;
    case 4: rr = t; gg = p; bb = v; break;
    default: rr = v; gg = p; bb = q; break;
  }
  *r = T(rr);
  *g = T(gg);
  *b = T(bb);
}

// separable gaussian blur with replicate borders, in place on one [3,H,W] plane
template <typename T>
void gaussian_blur_image(T* img, int64_t H, int64_t W, int kernel, double sigma) {
  const int half = kernel / 2;
  std::vector<double> k(size_t(kernel), 0.0);
  double sum = 0;
  for (int i = -half; i <= half; ++i) {
    k[size_t(i + half)] = std::exp(-0.5 * double(i) * double(i) / (sigma * sigma));
    sum += k[size_t(i + half)];
  }
  for (double& v : k) v /= sum;
  std::vector<T> tmp(size_t(H * W));
  for (int64_t c = 0; c < 3; ++c) {
    T* plane = img + c * H * W;
    for (int64_t h = 0; h < H; ++h)
      for (int64_t w = 0; w < W; ++w) {
        double acc = 0;
        for (int i = -half; i <= half; ++i) {
          const int64_t ww = std::clamp<int64_t>(w + i, 0, W - 1);
          acc += k[size_t(i + half)] * double(plane[h * W + ww]);
        }
        tmp[size_t(h * W + w)] = T(acc);
      }
    for (int64_t h = 0; h < H; ++h)
      for (int64_t w = 0; w < W; ++w) {
        double acc = 0;
        for (int i = -half; i <= half; ++i) {
          const int64_t hh = std::clamp<int64_t>(h + i, 0, H - 1);
          acc += k[size_t(i + half)] * double(tmp[size_t(hh * W + w)]);
        }
        plane[h * W + w] = T(acc);
      }
  }
}

}  // namespace detail

// bilinear resize only
template <typename T>
Tensor<T> weak_augment(const Tensor<T>& img, const AugmentationPolicy& policy) {
  if (img.dim(2) == policy.resize_h && img.dim(3) == policy.resize_w) return img;
  return kernels::bilinear_resize_nchw(img, policy.resize_h, policy.resize_w);
}

// resize, then color jitter -> probabilistic grayscale -> gaussian blur,
// fully determined by (img, policy, draws); output clipped to [0,1]
template <typename T>
Tensor<T> strong_augment(const Tensor<T>& img, const AugmentationPolicy& policy,
                         const std::vector<RandomDraw>& draws) {
  Tensor<T> out = weak_augment(img, policy);
  const int64_t B = out.dim(0), H = out.dim(2), W = out.dim(3);
  if (int64_t(draws.size()) != B)
    throw std::invalid_argument("strong_augment: one draw per image expected");
  for (int64_t b = 0; b < B; ++b) {
    const RandomDraw& d = draws[size_t(b)];
    T* base = &out.data[size_t(b * 3 * H * W)];
    auto px = [&](int64_t c, int64_t p) -> T& { return base[c * H * W + p]; };
    if (d.brightness_f != 1.0)
      for (int64_t i = 0; i < 3 * H * W; ++i) base[i] = T(double(base[i]) * d.brightness_f);
    if (d.contrast_f != 1.0) {
      double mean = 0;
      for (int64_t p = 0; p < H * W; ++p)
        mean += luma601(px(0, p), px(1, p), px(2, p));
      mean /= double(H * W);
      for (int64_t i = 0; i < 3 * H * W; ++i)
        base[i] = T(d.contrast_f * double(base[i]) + (1.0 - d.contrast_f) * mean);
    }
    if (d.saturation_f != 1.0)
      for (int64_t p = 0; p < H * W; ++p) {
        const double l = luma601(px(0, p), px(1, p), px(2, p));
        for (int64_t c = 0; c < 3; ++c)
          px(c, p) = T(d.saturation_f * double(px(c, p)) + (1.0 - d.saturation_f) * l);
      }
    if (d.hue_shift != 0.0)
      for (int64_t p = 0; p < H * W; ++p) {
        double h, s, v;
        detail::rgb_to_hsv(px(0, p), px(1, p), px(2, p), &h, &s, &v);
        detail::hsv_to_rgb(std::fmod(h + d.hue_shift + 1.0, 1.0), s, v, &px(0, p),
                           &px(1, p), &px(2, p));
      }
    if (d.grayscale)
      for (int64_t p = 0; p < H * W; ++p) {
        const T l = T(luma601(px(0, p), px(1, p), px(2, p)));
        px(0, p) = px(1, p) = px(2, p) = l;
      }
    if (d.blur_sigma > 0.0)
      detail::gaussian_blur_image(base, H, W, policy.blur_kernel, d.blur_sigma);
    for (int64_t i = 0; i < 3 * H * W; ++i) base[i] = std::clamp(base[i], T(0), T(1));
  }
  return out;
}

// teacher forward on the weakly augmented input, no gradient tracking
template <typename T>
Tensor<T> pseudo_label(const backbone::EnhanceNet<T>& teacher, const Tensor<T>& unpaired_img,
                       const AugmentationPolicy& policy) {
  Tensor<T> weak = weak_augment(unpaired_img, policy);
  return teacher.forward(ag::constant(weak))->value;
}

}  // namespace sllie::mean_teacher
