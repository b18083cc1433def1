#pragma once

#include <array>

#include "sllie/params.hpp"

// Frozen semantic encoder: a 4-stage strided conv pyramid (strides 4,2,2,2)
// producing stage features at strides 4/8/16/32 and a pooled final embedding.
// The in-repo default is a seeded random pyramid; real pretrained weights can
// be plugged in through the same interface via the checkpoint container.

namespace sllie::encoder {

template <typename T>
struct FeaturePyramid {
  std::array<Var<T>, 4> stages;
  int64_t source_h = 0;
  int64_t source_w = 0;
};

struct StageSpec {
  int64_t stride;
  int64_t channels;
};

template <typename T>
class SemanticEncoder {
 public:
  ParamStore<T> params;  // all leaves non-trainable (frozen)

  // Seeded random pyramid, channels 12/24/48/96, tanh between stages.
  static SemanticEncoder build_test_encoder(uint64_t seed) {
    SemanticEncoder e;
    e.stages_ = {StageSpec{4, 12}, StageSpec{2, 24}, StageSpec{2, 48}, StageSpec{2, 96}};
    std::mt19937_64 rng(seed);
    int64_t cin = 3;
    for (size_t i = 0; i < e.stages_.size(); ++i) {
      const auto& s = e.stages_[i];
      Tensor<T> w({s.stride, s.stride, cin, s.channels});
      fill_normal(w, rng, 1.0 / std::sqrt(double(s.stride * s.stride * cin)));
      e.params.add("stage" + std::to_string(i) + ".w", std::move(w), false);
      e.params.add("stage" + std::to_string(i) + ".b", Tensor<T>({s.channels}), false);
      cin = s.channels;
    }
    return e;
  }

  static SemanticEncoder from_weights(const std::vector<StageSpec>& specs,
                                      std::vector<Tensor<T>> weights,
                                      std::vector<Tensor<T>> biases) {
    SemanticEncoder e;
    e.stages_ = specs;
    for (size_t i = 0; i < specs.size(); ++i) {
      e.params.add("stage" + std::to_string(i) + ".w", std::move(weights[i]), false);
      e.params.add("stage" + std::to_string(i) + ".b", std::move(biases[i]), false);
    }
    return e;
  }

  const std::vector<StageSpec>& stages() const { return stages_; }
  int64_t embedding_dim() const { return stages_.back().channels; }

  // img: [B,3,H,W]; H,W >= 32. Gradients flow through to img, never into the
  // encoder's own weights.
  FeaturePyramid<T> encode(const Var<T>& img) const {
    const int64_t H = img->value.dim(2), W = img->value.dim(3);
    if (H < 32 || W < 32)
      throw std::invalid_argument("SemanticEncoder: input smaller than stride 32");
    Var<T> x = img;
    if (H % 32 || W % 32)
      x = ag::bilinear_resize(x, ((H + 31) / 32) * 32, ((W + 31) / 32) * 32);
    FeaturePyramid<T> pyr;
    pyr.source_h = H;
    pyr.source_w = W;
    Var<T> f = ag::nchw_to_nhwc(x);
    for (size_t i = 0; i < stages_.size(); ++i) {
      const auto& s = stages_[i];
      f = ag::conv2d(f, params.get("stage" + std::to_string(i) + ".w"),
                     params.get("stage" + std::to_string(i) + ".b"), s.stride, 0);
      if (i + 1 < stages_.size()) f = ag::tanh_act(f);
      pyr.stages[i] = f;
    }
    return pyr;
  }

  // global-average-pooled last-stage feature, [B, D_e]
  Var<T> final_embedding(const Var<T>& img) const {
    return ag::global_avg_pool(encode(img).stages[3]);
  }

 private:
  std::vector<StageSpec> stages_;
};

}  // namespace sllie::encoder
