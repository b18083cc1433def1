#pragma once

#include "sllie/ssm.hpp"

// Mamba-style low-light enhancement network: illumination estimation (IEM)
// followed by an illumination-guided enhancement module built from groups of
// multi-scale state-space blocks, with feature- and image-level residuals.

namespace sllie::backbone {

struct BackboneConfig {
  int64_t width = 64;         // C
  int64_t n_groups = 2;       // MSSGs
  int64_t n_blocks = 2;       // MSSBs per group
  double expansion = 2.0;     // lambda
  int64_t n_state = 16;       // N
  int64_t ca_reduction = 4;   // channel-attention bottleneck ratio

  int64_t expanded() const {
    const double lc = expansion * double(width);
    const int64_t i = int64_t(std::llround(lc));
    if (std::abs(lc - double(i)) > 1e-9)
      throw std::invalid_argument("BackboneConfig: expansion * width must be an integer");
    return i;
  }
  void validate() const {
    if (width < 1 || n_groups < 1 || n_blocks < 1 || n_state < 1 || expansion <= 0)
      throw std::invalid_argument("BackboneConfig: all sizes must be positive");
    (void)expanded();
  }
};

// img: [B,3,H,W] -> [B,1,H,W], per-pixel channel mean (the brightness prior)
template <typename T>
Var<T> illumination_prior(const Var<T>& img) {
  const int64_t B = img->value.dim(0), C = img->value.dim(1), H = img->value.dim(2),
                W = img->value.dim(3);
  if (C != 3) throw std::invalid_argument("illumination_prior: 3-channel input expected");
  Tensor<T> v({B, 1, H, W});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t p = 0; p < H * W; ++p) {
      const T* src = &img->value.data[size_t((b * 3) * H * W + p)];
      v[b * H * W + p] = (src[0] + src[H * W] + src[2 * H * W]) / T(3);
    }
  return ag::make_node<T>(std::move(v), {img}, [img, B, H, W](Node<T>& self) {
    Tensor<T>& g = img->grad_buf();
    for (int64_t b = 0; b < B; ++b)
      for (int64_t p = 0; p < H * W; ++p) {
        const T gv = self.grad[b * H * W + p] / T(3);
        for (int64_t c = 0; c < 3; ++c) g[(b * 3 + c) * H * W + p] += gv;
      }
  });
}

template <typename T>
struct MssmParams {
  int64_t channels = 0;
  Var<T> fc_in_w, fc_in_b;     // C -> lamC
  Var<T> dw3_w, dw3_b;         // depth-wise k3 on lamC
  Var<T> dw5_w, dw5_b;         // depth-wise k5 on lamC
  ssm::SsmParams<T> ssm;       // on 2*lamC
  Var<T> ln_gamma, ln_beta;    // [2*lamC]
  Var<T> fc_gate_w, fc_gate_b; // C -> 2*lamC
  Var<T> fc_out_w, fc_out_b;   // 2*lamC -> C

  static MssmParams create(ParamStore<T>& store, const std::string& pfx,
                           const BackboneConfig& cfg, int64_t C, std::mt19937_64& rng) {
    MssmParams p;
    p.channels = C;
    const int64_t lamC = int64_t(std::llround(cfg.expansion * double(C)));
    if (std::abs(cfg.expansion * double(C) - double(lamC)) > 1e-9)
      throw std::invalid_argument("MssmParams: expansion * C must be an integer");
    const int64_t ssmC = 2 * lamC;
    auto w = [&](std::vector<int64_t> s) {
      Tensor<T> t(std::move(s));
      fill_trunc_normal(t, rng, 0.02);
      return t;
    };
    p.fc_in_w = store.add(pfx + ".fc_in.w", w({C, lamC}));
    p.fc_in_b = store.add(pfx + ".fc_in.b", Tensor<T>({lamC}));
    p.dw3_w = store.add(pfx + ".dw3.w", w({3, 3, lamC}));
    p.dw3_b = store.add(pfx + ".dw3.b", Tensor<T>({lamC}));
    p.dw5_w = store.add(pfx + ".dw5.w", w({5, 5, lamC}));
    p.dw5_b = store.add(pfx + ".dw5.b", Tensor<T>({lamC}));
    p.ssm = ssm::SsmParams<T>::create(store, pfx + ".ssm", ssmC, cfg.n_state, rng);
    p.ln_gamma = store.add(pfx + ".ln.gamma", Tensor<T>::full({ssmC}, T(1)));
    p.ln_beta = store.add(pfx + ".ln.beta", Tensor<T>({ssmC}));
    p.fc_gate_w = store.add(pfx + ".fc_gate.w", w({C, ssmC}));
    p.fc_gate_b = store.add(pfx + ".fc_gate.b", Tensor<T>({ssmC}));
    p.fc_out_w = store.add(pfx + ".fc_out.w", w({ssmC, C}));
    p.fc_out_b = store.add(pfx + ".fc_out.b", Tensor<T>({C}));
    return p;
  }
};

// x: [B,H,W,C] -> [B,H,W,C]
template <typename T>
Var<T> mssm_forward(const Var<T>& x, const MssmParams<T>& p) {
  if (x->value.shape.back() != p.channels)
    throw std::invalid_argument("mssm_forward: channel count mismatch");
  Var<T> x0 = ag::linear(x, p.fc_in_w, p.fc_in_b);
  Var<T> x1 = ag::dwconv(x0, p.dw3_w, p.dw3_b);
  Var<T> x2 = ag::dwconv(x0, p.dw5_w, p.dw5_b);
  Var<T> cat = ag::concat_last(x1, x2);
  Var<T> s = ssm::scan_2d(ag::silu(cat), p.ssm);
  Var<T> x3 = ag::layernorm(s, p.ln_gamma, p.ln_beta);
  Var<T> x4 = ag::silu(ag::linear(x, p.fc_gate_w, p.fc_gate_b));
  return ag::linear(ag::mul(x3, x4), p.fc_out_w, p.fc_out_b);
}

template <typename T>
struct MssbParams {
  int64_t channels = 0;
  Var<T> ln1_gamma, ln1_beta, s1;
  MssmParams<T> mssm;
  Var<T> ln2_gamma, ln2_beta, s2;
  Var<T> ffn_w1, ffn_b1;  // C -> 2C
  Var<T> ca_w1, ca_b1;    // 2C -> 2C/r
  Var<T> ca_w2, ca_b2;    // 2C/r -> 2C
  Var<T> ffn_w2, ffn_b2;  // 2C -> C

  static MssbParams create(ParamStore<T>& store, const std::string& pfx,
                           const BackboneConfig& cfg, int64_t C, std::mt19937_64& rng) {
    MssbParams p;
    p.channels = C;
    auto w = [&](std::vector<int64_t> s) {
      Tensor<T> t(std::move(s));
      fill_trunc_normal(t, rng, 0.02);
      return t;
    };
    const int64_t hidden = 2 * C;
    const int64_t bott = std::max<int64_t>(1, hidden / cfg.ca_reduction);
    p.ln1_gamma = store.add(pfx + ".ln1.gamma", Tensor<T>::full({C}, T(1)));
    p.ln1_beta = store.add(pfx + ".ln1.beta", Tensor<T>({C}));
    p.s1 = store.add(pfx + ".s1", Tensor<T>::full({C}, T(1)));
    p.mssm = MssmParams<T>::create(store, pfx + ".mssm", cfg, C, rng);
    p.ln2_gamma = store.add(pfx + ".ln2.gamma", Tensor<T>::full({C}, T(1)));
    p.ln2_beta = store.add(pfx + ".ln2.beta", Tensor<T>({C}));
    p.s2 = store.add(pfx + ".s2", Tensor<T>::full({C}, T(1)));
    p.ffn_w1 = store.add(pfx + ".ffn.w1", w({C, hidden}));
    p.ffn_b1 = store.add(pfx + ".ffn.b1", Tensor<T>({hidden}));
    p.ca_w1 = store.add(pfx + ".ca.w1", w({hidden, bott}));
    p.ca_b1 = store.add(pfx + ".ca.b1", Tensor<T>({bott}));
    p.ca_w2 = store.add(pfx + ".ca.w2", w({bott, hidden}));
    p.ca_b2 = store.add(pfx + ".ca.b2", Tensor<T>({hidden}));
    p.ffn_w2 = store.add(pfx + ".ffn.w2", w({hidden, C}));
    p.ffn_b2 = store.add(pfx + ".ffn.b2", Tensor<T>({C}));
    return p;
  }
};

template <typename T>
Var<T> mssb_forward(const Var<T>& x, const MssbParams<T>& p) {
  Var<T> y = ag::add(ag::chan_scale(x, p.s1),
                     mssm_forward(ag::layernorm(x, p.ln1_gamma, p.ln1_beta), p.mssm));
  Var<T> h = ag::silu(ag::linear(ag::layernorm(y, p.ln2_gamma, p.ln2_beta), p.ffn_w1, p.ffn_b1));
  Var<T> g = ag::global_avg_pool(h);
  g = ag::sigmoid(ag::linear(ag::silu(ag::linear(g, p.ca_w1, p.ca_b1)), p.ca_w2, p.ca_b2));
  h = ag::bcast_mul(h, g);
  Var<T> ffn = ag::linear(h, p.ffn_w2, p.ffn_b2);
  return ag::add(ag::chan_scale(y, p.s2), ffn);
}

template <typename T>
class EnhanceNet {
 public:
  BackboneConfig cfg;
  ParamStore<T> params;

  explicit EnhanceNet(const BackboneConfig& config, uint64_t seed) : cfg(config) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    const int64_t C = cfg.width;
    auto w = [&](std::vector<int64_t> s) {
      Tensor<T> t(std::move(s));
      fill_trunc_normal(t, rng, 0.02);
      return t;
    };
    iem_pw1_w_ = params.add("iem.pw1.w", w({4, C}));
    iem_pw1_b_ = params.add("iem.pw1.b", Tensor<T>({C}));
    iem_dw_w_ = params.add("iem.dw.w", w({3, 3, C}));
    iem_dw_b_ = params.add("iem.dw.b", Tensor<T>({C}));
    iem_pw2_w_ = params.add("iem.pw2.w", w({C, 3}));
    iem_pw2_b_ = params.add("iem.pw2.b", Tensor<T>({3}));
    shallow_w_ = params.add("shallow.w", w({3, 3, 6, C}));
    shallow_b_ = params.add("shallow.b", Tensor<T>({C}));
    for (int64_t g = 0; g < cfg.n_groups; ++g) {
      const std::string gp = "g" + std::to_string(g);
      std::vector<MssbParams<T>> blocks;
      for (int64_t b = 0; b < cfg.n_blocks; ++b)
        blocks.push_back(
            MssbParams<T>::create(params, gp + ".b" + std::to_string(b), cfg, C, rng));
      blocks_.push_back(std::move(blocks));
      group_conv_w_.push_back(params.add(gp + ".conv.w", w({3, 3, C, C})));
      group_conv_b_.push_back(params.add(gp + ".conv.b", Tensor<T>({C})));
    }
    tail1_w_ = params.add("tail.conv1.w", w({3, 3, C, C}));
    tail1_b_ = params.add("tail.conv1.b", Tensor<T>({C}));
    // zero-initialized so the whole network is the identity map at init
    tail2_w_ = params.add("tail.conv2.w", Tensor<T>({3, 3, C, 3}));
    tail2_b_ = params.add("tail.conv2.b", Tensor<T>({3}));
  }

  // img and prior in NHWC; returns the 3-channel illumination map.
  Var<T> estimate_illumination(const Var<T>& img_nhwc, const Var<T>& prior_nhwc) const {
    if (img_nhwc->value.dim(1) != prior_nhwc->value.dim(1) ||
        img_nhwc->value.dim(2) != prior_nhwc->value.dim(2))
      throw std::invalid_argument("estimate_illumination: spatial shapes differ");
    Var<T> x = ag::concat_last(img_nhwc, prior_nhwc);
    x = ag::linear(x, iem_pw1_w_, iem_pw1_b_);
    x = ag::dwconv(x, iem_dw_w_, iem_dw_b_);
    return ag::linear(x, iem_pw2_w_, iem_pw2_b_);
  }

  // img: [B,3,H,W] in [0,1]; returns the unclamped enhanced image.
  Var<T> forward(const Var<T>& img) const {
    if (img->value.dim(1) != 3)
      throw std::invalid_argument("EnhanceNet: 3-channel input expected");
    Var<T> prior = illumination_prior(img);
    Var<T> img_h = ag::nchw_to_nhwc(img);
    Var<T> prior_h = ag::nchw_to_nhwc(prior);
    Var<T> map = estimate_illumination(img_h, prior_h);
    Var<T> feat = ag::conv2d(ag::concat_last(img_h, map), shallow_w_, shallow_b_, 1, 1);
    Var<T> shallow = feat;
    for (size_t g = 0; g < blocks_.size(); ++g) {
      Var<T> y = feat;
      for (const auto& blk : blocks_[g]) y = mssb_forward(y, blk);
      y = ag::conv2d(y, group_conv_w_[g], group_conv_b_[g], 1, 1);
      feat = ag::add(feat, y);
    }
    Var<T> deep = ag::conv2d(feat, tail1_w_, tail1_b_, 1, 1);
    Var<T> fused = ag::add(deep, shallow);
    Var<T> res = ag::nhwc_to_nchw(ag::conv2d(fused, tail2_w_, tail2_b_, 1, 1));
    return ag::add(img, res);
  }

  // inference path: forward + clamp to [0,1]
  Tensor<T> enhance_clamped(const Tensor<T>& img) const {
    Var<T> out = forward(ag::constant(img));
    Tensor<T> r = out->value;
    for (T& v : r.data) v = std::clamp(v, T(0), T(1));
    return r;
  }

 private:
  Var<T> iem_pw1_w_, iem_pw1_b_, iem_dw_w_, iem_dw_b_, iem_pw2_w_, iem_pw2_b_;
  Var<T> shallow_w_, shallow_b_;
  std::vector<std::vector<MssbParams<T>>> blocks_;
  std::vector<Var<T>> group_conv_w_, group_conv_b_;
  Var<T> tail1_w_, tail1_b_, tail2_w_, tail2_b_;
};

}  // namespace sllie::backbone
