#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "sllie/reference.hpp"
#include "sllie/ssm.hpp"
#include "testutil.hpp"

using namespace sllie;
using testutil::max_abs_diff;

namespace {

// projection oracle computed with plain loops, independent of the autodiff ops
void project_oracle(const Tensor<double>& x, const ssm::SsmParams<double>& p,
                    Tensor<double>* delta, Tensor<double>* bmat, Tensor<double>* cmat) {
  const int64_t L = x.dim(0), C = x.dim(1), N = p.n_state, R = p.dt_rank;
  *delta = Tensor<double>({L, C});
  *bmat = Tensor<double>({L, N});
  *cmat = Tensor<double>({L, N});
  for (int64_t l = 0; l < L; ++l) {
    std::vector<double> low(size_t(R), 0.0);
    for (int64_t r = 0; r < R; ++r)
      for (int64_t c = 0; c < C; ++c) low[size_t(r)] += x.at2(l, c) * p.w_dt_down->value.at2(c, r);
    for (int64_t c = 0; c < C; ++c) {
      double acc = p.delta_bias->value[c];
      for (int64_t r = 0; r < R; ++r) acc += low[size_t(r)] * p.w_dt_up->value.at2(r, c);
      delta->at2(l, c) = std::log1p(std::exp(acc));
    }
    for (int64_t n = 0; n < N; ++n) {
      double vb = 0, vc = 0;
      for (int64_t c = 0; c < C; ++c) {
        vb += x.at2(l, c) * p.w_b->value.at2(c, n);
        vc += x.at2(l, c) * p.w_c->value.at2(c, n);
      }
      bmat->at2(l, n) = vb;
      cmat->at2(l, n) = vc;
    }
  }
}

Tensor<double> neg_exp_oracle(const Tensor<double>& a_log) {
  Tensor<double> a = a_log;
  for (double& v : a.data) v = -std::exp(v);
  return a;
}

// hand-unrolled four-direction oracle for scan_2d on one [H,W,C] map
Tensor<double> scan_2d_oracle(const Tensor<double>& feat, const ssm::SsmParams<double>& p) {
  const int64_t H = feat.dim(0), W = feat.dim(1), C = feat.dim(2), L = H * W;
  Tensor<double> flat({L, C}, feat.data);
  Tensor<double> delta, bmat, cmat;
  project_oracle(flat, p, &delta, &bmat, &cmat);
  const Tensor<double> a = neg_exp_oracle(p.a_log->value);
  Tensor<double> out({H, W, C});
  for (const auto& idx : ssm::scan_orders(H, W)) {
    Tensor<double> xg({L, C}), dg({L, C}), bg({L, p.n_state}), cg({L, p.n_state});
    for (int64_t l = 0; l < L; ++l)
      for (int64_t c = 0; c < C; ++c) {
        xg.at2(l, c) = flat.at2(idx[size_t(l)], c);
        dg.at2(l, c) = delta.at2(idx[size_t(l)], c);
      }
    for (int64_t l = 0; l < L; ++l)
      for (int64_t n = 0; n < p.n_state; ++n) {
        bg.at2(l, n) = bmat.at2(idx[size_t(l)], n);
        cg.at2(l, n) = cmat.at2(idx[size_t(l)], n);
      }
    Tensor<double> y = ref::scan_naive(xg, dg, a, bg, cg, p.d_skip->value);
    for (int64_t l = 0; l < L; ++l)
      for (int64_t c = 0; c < C; ++c) out[idx[size_t(l)] * C + c] += y.at2(l, c);
  }
  return out;
}

}  // namespace

TEST_CASE("discretize closed forms") {
  Tensor<double> delta({1, 1}), a({1, 1}), b({1, 1});
  delta.at2(0, 0) = 1e-12;
  a.at2(0, 0) = -1.0;
  b.at2(0, 0) = 3.0;
  Tensor<double> abar, bbar;
  ssm::discretize(delta, a, b, &abar, &bbar);
  CHECK(abar[0] == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(std::abs(bbar[0]) < 1e-9);

  delta.at2(0, 0) = 1.0;
  b.at2(0, 0) = 1.0;
  ssm::discretize(delta, a, b, &abar, &bbar);
  CHECK(abar[0] == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
  CHECK(bbar[0] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("discretize matches elementwise recomputation on random input") {
  std::mt19937_64 rng(1);
  const int64_t L = 4, C = 2, N = 3;
  Tensor<double> delta({L, C}), a({C, N}), b({L, N});
  fill_uniform(delta, rng, 0.01, 1.0);
  fill_uniform(a, rng, -3.0, -0.1);
  fill_normal(b, rng, 1.0);
  Tensor<double> abar, bbar;
  ssm::discretize(delta, a, b, &abar, &bbar);
  for (int64_t l = 0; l < L; ++l)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t n = 0; n < N; ++n) {
        CHECK(abar.at3(l, c, n) ==
              doctest::Approx(std::exp(delta.at2(l, c) * a.at2(c, n))).epsilon(1e-14));
        CHECK(bbar.at3(l, c, n) ==
              doctest::Approx(delta.at2(l, c) * b.at2(l, n)).epsilon(1e-14));
        CHECK(abar.at3(l, c, n) > 0.0);
        CHECK(abar.at3(l, c, n) < 1.0);
      }
}

TEST_CASE("discretize rejects non-positive delta") {
  Tensor<double> delta({1, 1}), a({1, 1}), b({1, 1});
  delta.at2(0, 0) = 0.0;
  a.at2(0, 0) = -1.0;
  Tensor<double> abar, bbar;
  CHECK_THROWS(ssm::discretize(delta, a, b, &abar, &bbar));
}

TEST_CASE("scan with vanishing delta reduces to the skip path") {
  std::mt19937_64 rng(2);
  const int64_t B = 1, L = 5, C = 3, N = 4;
  Tensor<double> x({B, L, C}), delta = Tensor<double>::full({B, L, C}, 1e-15);
  Tensor<double> a({C, N}), bm({B, L, N}), cm({B, L, N}), d({C});
  fill_normal(x, rng, 1.0);
  fill_uniform(a, rng, -2.0, -0.5);
  fill_normal(bm, rng, 1.0);
  fill_normal(cm, rng, 1.0);
  fill_normal(d, rng, 1.0);
  Tensor<double> y = kernels::scan_core(x, delta, a, bm, cm, d);
  for (int64_t l = 0; l < L; ++l)
    for (int64_t c = 0; c < C; ++c)
      CHECK(y.at3(0, l, c) == doctest::Approx(d[c] * x.at3(0, l, c)).epsilon(1e-10));
}

TEST_CASE("single-step scan closed form") {
  std::mt19937_64 rng(3);
  const int64_t C = 2, N = 3;
  Tensor<double> x({1, 1, C}), delta({1, 1, C}), a({C, N}), bm({1, 1, N}), cm({1, 1, N}),
      d({C});
  fill_normal(x, rng, 1.0);
  fill_uniform(delta, rng, 0.05, 0.5);
  fill_uniform(a, rng, -2.0, -0.5);
  fill_normal(bm, rng, 1.0);
  fill_normal(cm, rng, 1.0);
  fill_normal(d, rng, 1.0);
  Tensor<double> y = kernels::scan_core(x, delta, a, bm, cm, d);
  for (int64_t c = 0; c < C; ++c) {
    double expect = d[c] * x[c];
    for (int64_t n = 0; n < N; ++n) expect += cm[n] * delta[c] * bm[n] * x[c];
    CHECK(y[c] == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("100 random scans match the naive recurrence oracle") {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int64_t> Ld(1, 32), Cd(1, 8), Nd(1, 8);
  double worst = 0;
  for (int rep = 0; rep < 100; ++rep) {
    const int64_t L = Ld(rng), C = Cd(rng), N = Nd(rng);
    Tensor<double> x({1, L, C}), delta({1, L, C}), a({C, N}), bm({1, L, N}), cm({1, L, N}),
        d({C});
    fill_normal(x, rng, 1.0);
    fill_uniform(delta, rng, 0.001, 0.5);
    fill_uniform(a, rng, -3.0, -0.05);
    fill_normal(bm, rng, 1.0);
    fill_normal(cm, rng, 1.0);
    fill_normal(d, rng, 1.0);
    Tensor<double> y = kernels::scan_core(x, delta, a, bm, cm, d);
    Tensor<double> xs({L, C}, x.data), ds({L, C}, delta.data);
    Tensor<double> bs({L, N}, bm.data), cs({L, N}, cm.data);
    Tensor<double> yo = ref::scan_naive(xs, ds, a, bs, cs, d);
    for (int64_t i = 0; i < y.numel(); ++i)
      worst = std::max(worst, std::abs(y[i] - yo[i]));
  }
  CHECK(worst <= 1e-10);
}

TEST_CASE("scan is linear in x for fixed projections") {
  std::mt19937_64 rng(5);
  const int64_t L = 9, C = 3, N = 4;
  Tensor<double> x({1, L, C}), delta({1, L, C}), a({C, N}), bm({1, L, N}), cm({1, L, N}),
      d({C});
  fill_normal(x, rng, 1.0);
  fill_uniform(delta, rng, 0.01, 0.5);
  fill_uniform(a, rng, -2.0, -0.1);
  fill_normal(bm, rng, 1.0);
  fill_normal(cm, rng, 1.0);
  fill_normal(d, rng, 1.0);
  Tensor<double> y = kernels::scan_core(x, delta, a, bm, cm, d);
  Tensor<double> x3 = x;
  for (double& v : x3.data) v *= 3.0;
  Tensor<double> y3 = kernels::scan_core(x3, delta, a, bm, cm, d);
  for (int64_t i = 0; i < y.numel(); ++i)
    CHECK(y3[i] == doctest::Approx(3.0 * y[i]).epsilon(1e-12));
}

TEST_CASE("selective_scan rejects channel mismatch") {
  std::mt19937_64 rng(6);
  ParamStore<double> store;
  auto p = ssm::SsmParams<double>::create(store, "s", 4, 3, rng);
  Var<double> x = ag::constant(Tensor<double>({1, 5, 3}));
  CHECK_THROWS(ssm::selective_scan(x, p));
}

TEST_CASE("selective_scan gradcheck wrt x and all parameters") {
  std::mt19937_64 rng(7);
  const int64_t L = 6, C = 2, N = 3;
  ParamStore<double> store;
  auto p = ssm::SsmParams<double>::create(store, "s", C, N, rng);
  Var<double> x = ag::leaf(testutil::random_tensor({1, L, C}, rng, 0.5), true);
  std::vector<Var<double>> leaves = {x};
  for (const auto& name : store.names()) leaves.push_back(store.get(name));
  const double err = testutil::gradcheck(
      [&] { return ag::mean_all(ssm::selective_scan(x, p)); }, leaves, 1e-6);
  CHECK(err <= 1e-4);
}

TEST_CASE("scan_orders are permutations with the reverse identity") {
  for (auto [H, W] : std::vector<std::pair<int64_t, int64_t>>{{2, 2}, {3, 5}, {1, 7}}) {
    auto dirs = ssm::scan_orders(H, W);
    const int64_t L = H * W;
    for (const auto& d : dirs) {
      std::vector<bool> seen(size_t(L), false);
      for (int64_t v : d) {
        REQUIRE(v >= 0);
        REQUIRE(v < L);
        seen[size_t(v)] = true;
      }
      for (bool s : seen) CHECK(s);
    }
    for (int64_t l = 0; l < L; ++l) CHECK(dirs[3][size_t(l)] == L - 1 - dirs[2][size_t(l)]);
  }
}

TEST_CASE("scan_2d on a single pixel is four times the single-step scan") {
  std::mt19937_64 rng(8);
  const int64_t C = 3, N = 4;
  ParamStore<double> store;
  auto p = ssm::SsmParams<double>::create(store, "s", C, N, rng);
  Tensor<double> feat = testutil::random_tensor({1, 1, 1, C}, rng);
  Var<double> y2d = ssm::scan_2d(ag::constant(feat), p);
  Var<double> y1 =
      ssm::selective_scan(ag::constant(Tensor<double>({1, 1, C}, feat.data)), p);
  for (int64_t c = 0; c < C; ++c)
    CHECK(y2d->value[c] == doctest::Approx(4.0 * y1->value[c]).epsilon(1e-12));
}

TEST_CASE("scan_2d maps zero to zero") {
  std::mt19937_64 rng(9);
  ParamStore<double> store;
  auto p = ssm::SsmParams<double>::create(store, "s", 3, 4, rng);
  Var<double> y = ssm::scan_2d(ag::constant(Tensor<double>({1, 3, 4, 3})), p);
  for (double v : y->value.data) CHECK(v == 0.0);
}

TEST_CASE("scan_2d matches the hand-unrolled four-direction oracle") {
  std::mt19937_64 rng(10);
  for (auto [H, W] : std::vector<std::pair<int64_t, int64_t>>{{2, 2}, {3, 5}}) {
    const int64_t C = 3, N = 4;
    ParamStore<double> store;
    auto p = ssm::SsmParams<double>::create(store, "s" + std::to_string(H), C, N, rng);
    Tensor<double> feat = testutil::random_tensor({1, H, W, C}, rng, 0.5);
    Var<double> y = ssm::scan_2d(ag::constant(feat), p);
    Tensor<double> plane({H, W, C}, feat.data);
    Tensor<double> oracle = scan_2d_oracle(plane, p);
    CHECK(max_abs_diff(Tensor<double>({H, W, C}, y->value.data), oracle) <= 1e-10);
  }
}

TEST_CASE("scan_2d gradcheck on a tiny map") {
  std::mt19937_64 rng(11);
  const int64_t C = 2, N = 2;
  ParamStore<double> store;
  auto p = ssm::SsmParams<double>::create(store, "s", C, N, rng);
  Var<double> x = ag::leaf(testutil::random_tensor({1, 2, 3, C}, rng, 0.5), true);
  std::vector<Var<double>> leaves = {x};
  for (const auto& name : store.names()) leaves.push_back(store.get(name));
  const double err =
      testutil::gradcheck([&] { return ag::mean_all(ssm::scan_2d(x, p)); }, leaves, 1e-6);
  CHECK(err <= 1e-4);
}
