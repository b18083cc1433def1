#pragma once

#include <array>

#include "sllie/params.hpp"

// Selective state-space scan and its four-direction 2D extension.
// Parameterization: A = -exp(a_log), delta = softplus(low-rank linear + bias),
// B and C_out from per-position linear projections, ZOH-simplified
// discretization b_bar = delta * B.

namespace sllie::ssm {

template <typename T>
struct SsmParams {
  int64_t channels = 0;
  int64_t n_state = 0;
  int64_t dt_rank = 0;
  Var<T> a_log;      // [C,N]
  Var<T> d_skip;     // [C]
  Var<T> w_dt_down;  // [C,R]
  Var<T> w_dt_up;    // [R,C]
  Var<T> delta_bias; // [C]
  Var<T> w_b;        // [C,N]
  Var<T> w_c;        // [C,N]

  static SsmParams create(ParamStore<T>& store, const std::string& prefix, int64_t C,
                          int64_t N, std::mt19937_64& rng, bool trainable = true) {
    if (C < 1 || N < 1) throw std::invalid_argument("SsmParams: C and N must be >= 1");
    SsmParams p;
    p.channels = C;
    p.n_state = N;
    p.dt_rank = std::max<int64_t>(1, C / 16);
    Tensor<T> a_log({C, N});
    for (int64_t c = 0; c < C; ++c)
      for (int64_t n = 0; n < N; ++n) a_log.at2(c, n) = T(std::log(double(n + 1)));
    p.a_log = store.add(prefix + ".a_log", std::move(a_log), trainable);
    p.d_skip = store.add(prefix + ".d_skip", Tensor<T>::full({C}, T(1)), trainable);
    Tensor<T> wd({C, p.dt_rank}), wu({p.dt_rank, C}), wb({C, N}), wc({C, N});
    fill_trunc_normal(wd, rng, 0.02);
    fill_trunc_normal(wu, rng, 0.02);
    fill_trunc_normal(wb, rng, 0.02);
    fill_trunc_normal(wc, rng, 0.02);
    p.w_dt_down = store.add(prefix + ".w_dt_down", std::move(wd), trainable);
    p.w_dt_up = store.add(prefix + ".w_dt_up", std::move(wu), trainable);
    Tensor<T> db({C});
    // bias chosen so softplus(bias) lands in [1e-3, 0.1]
    std::uniform_real_distribution<double> dt_dist(1e-3, 0.1);
    for (T& v : db.data) {
      const double dt = dt_dist(rng);
      v = T(std::log(std::expm1(dt)));
    }
    p.delta_bias = store.add(prefix + ".delta_bias", std::move(db), trainable);
    p.w_b = store.add(prefix + ".w_b", std::move(wb), trainable);
    p.w_c = store.add(prefix + ".w_c", std::move(wc), trainable);
    return p;
  }
};

// ZOH discretization. delta: [L,C] (>0), a: [C,N] (<0), b: [L,N].
template <typename T>
void discretize(const Tensor<T>& delta, const Tensor<T>& a, const Tensor<T>& b,
                Tensor<T>* a_bar, Tensor<T>* b_bar) {
  const int64_t L = delta.dim(0), C = delta.dim(1), N = a.dim(1);
  if (b.dim(0) != L) throw std::invalid_argument("discretize: b rows must match delta");
  *a_bar = Tensor<T>({L, C, N});
  *b_bar = Tensor<T>({L, C, N});
  for (int64_t l = 0; l < L; ++l)
    for (int64_t c = 0; c < C; ++c) {
      const T dt = delta.at2(l, c);
      if (!(dt > T(0)))
        throw std::invalid_argument("discretize: delta must be strictly positive");
      for (int64_t n = 0; n < N; ++n) {
        a_bar->at3(l, c, n) = std::exp(dt * a.at2(c, n));
        b_bar->at3(l, c, n) = dt * b.at2(l, n);
      }
    }
}

// Input-dependent projections for a [B,L,C] sequence.
template <typename T>
struct ScanInputs {
  Var<T> delta;  // [B,L,C]
  Var<T> bmat;   // [B,L,N]
  Var<T> cmat;   // [B,L,N]
};

template <typename T>
ScanInputs<T> project(const Var<T>& x, const SsmParams<T>& p) {
  if (x->value.shape.back() != p.channels)
    throw std::invalid_argument("selective_scan: sequence has " +
                                std::to_string(x->value.shape.back()) +
                                " channels, params expect " + std::to_string(p.channels));
  ScanInputs<T> s;
  Var<T> dt_low = ag::linear<T>(x, p.w_dt_down, nullptr);
  s.delta = ag::softplus(ag::linear(dt_low, p.w_dt_up, p.delta_bias));
  s.bmat = ag::linear<T>(x, p.w_b, nullptr);
  s.cmat = ag::linear<T>(x, p.w_c, nullptr);
  return s;
}

// x: [B,L,C] -> [B,L,C]
template <typename T>
Var<T> selective_scan(const Var<T>& x, const SsmParams<T>& p) {
  ScanInputs<T> s = project(x, p);
  Var<T> a = ag::neg_exp(p.a_log);
  return ag::selective_scan_core(x, s.delta, a, s.bmat, s.cmat, p.d_skip);
}

// The four unroll orders: idx[l] = flat (row-major) position visited at step l.
inline std::array<std::vector<int64_t>, 4> scan_orders(int64_t H, int64_t W) {
  const int64_t L = H * W;
  std::array<std::vector<int64_t>, 4> dirs;
  for (auto& d : dirs) d.resize(size_t(L));
  for (int64_t l = 0; l < L; ++l) {
    dirs[0][size_t(l)] = l;                              // row-major forward
    dirs[1][size_t(l)] = L - 1 - l;                      // row-major reverse
    dirs[2][size_t(l)] = (l % H) * W + (l / H);          // column-major forward
    dirs[3][size_t(l)] = L - 1 - dirs[2][size_t(l)];     // column-major reverse
  }
  return dirs;
}

inline std::vector<int64_t> invert_order(const std::vector<int64_t>& idx) {
  std::vector<int64_t> inv(idx.size());
  for (size_t l = 0; l < idx.size(); ++l) inv[size_t(idx[l])] = int64_t(l);
  return inv;
}

// feat: [B,H,W,C] -> [B,H,W,C]; four scan orders with shared params, summed.
template <typename T>
Var<T> scan_2d(const Var<T>& feat, const SsmParams<T>& p) {
  const int64_t B = feat->value.dim(0), H = feat->value.dim(1), W = feat->value.dim(2),
                C = feat->value.dim(3);
  Var<T> flat = ag::reshape(feat, {B, H * W, C});
  ScanInputs<T> s = project(flat, p);
  Var<T> a = ag::neg_exp(p.a_log);
  auto dirs = scan_orders(H, W);
  std::vector<Var<T>> outs;
  for (const auto& idx : dirs) {
    Var<T> xg = ag::gather_rows(flat, idx);
    Var<T> dg = ag::gather_rows(s.delta, idx);
    Var<T> bg = ag::gather_rows(s.bmat, idx);
    Var<T> cg = ag::gather_rows(s.cmat, idx);
    Var<T> y = ag::selective_scan_core(xg, dg, a, bg, cg, p.d_skip);
    outs.push_back(ag::gather_rows(y, invert_order(idx)));
  }
  return ag::reshape(ag::sum_vars(outs), {B, H, W, C});
}

}  // namespace sllie::ssm
