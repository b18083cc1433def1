#pragma once

#include "sllie/params.hpp"

// PatchGAN-style discriminator: 4 strided conv layers (stride 2,2,2,1) with
// leaky-rectified activations and channel layernorm from layer 2, plus a
// 1-channel head. Emits a grid of per-patch realness logits (~70x70 receptive
// field at the default depth).

namespace sllie::adversary {

template <typename T>
class Discriminator {
 public:
  ParamStore<T> params;

  explicit Discriminator(uint64_t seed, int64_t base_channels = 64) {
    std::mt19937_64 rng(seed);
    const int64_t c = base_channels;
    const int64_t chans[5] = {c, 2 * c, 4 * c, 8 * c, 1};
    const int64_t strides[5] = {2, 2, 2, 1, 1};
    int64_t cin = 3;
    for (int i = 0; i < 5; ++i) {
      Tensor<T> w({4, 4, cin, chans[i]});
      fill_trunc_normal(w, rng, 0.02);
      params.add("conv" + std::to_string(i) + ".w", std::move(w));
      params.add("conv" + std::to_string(i) + ".b", Tensor<T>({chans[i]}));
      if (i >= 1 && i <= 3) {
        params.add("norm" + std::to_string(i) + ".gamma", Tensor<T>::full({chans[i]}, T(1)));
        params.add("norm" + std::to_string(i) + ".beta", Tensor<T>({chans[i]}));
      }
      strides_[i] = strides[i];
      cin = chans[i];
    }
  }

  // img: [B,3,H,W] -> pre-sigmoid patch logits [B,1,h',w']
  Var<T> discriminate(const Var<T>& img) const {
    Var<T> x = ag::nchw_to_nhwc(img);
    for (int i = 0; i < 5; ++i) {
      x = ag::conv2d(x, params.get("conv" + std::to_string(i) + ".w"),
                     params.get("conv" + std::to_string(i) + ".b"), strides_[i], 1);
      if (i >= 1 && i <= 3)
        x = ag::layernorm(x, params.get("norm" + std::to_string(i) + ".gamma"),
                          params.get("norm" + std::to_string(i) + ".beta"));
      if (i < 4) x = ag::leaky_relu(x, 0.2);
    }
    return ag::nhwc_to_nchw(x);
  }

 private:
  int64_t strides_[5] = {2, 2, 2, 1, 1};
};

// BCE-with-logits split of the min-max objective. The caller detaches the
// fake images from the generator before running the discriminator forward
// that feeds this loss.
template <typename T>
Var<T> discriminator_loss(const Var<T>& real_logits, const Var<T>& fake_logits) {
  return ag::add(ag::bce_logits_mean(real_logits, 1.0), ag::bce_logits_mean(fake_logits, 0.0));
}

// Non-saturating generator objective; this scalar is the adversarial term of
// the overall objective.
template <typename T>
Var<T> generator_adv_loss(const Var<T>& fake_logits) {
  return ag::bce_logits_mean(fake_logits, 1.0);
}

}  // namespace sllie::adversary
