#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "sllie/backbone.hpp"
#include "sllie/reference.hpp"
#include "testutil.hpp"

using namespace sllie;
using testutil::max_abs_diff;

namespace {

backbone::BackboneConfig tiny_config(int64_t width = 8) {
  backbone::BackboneConfig cfg;
  cfg.width = width;
  cfg.n_groups = 1;
  cfg.n_blocks = 1;
  cfg.n_state = 2;
  return cfg;
}

}  // namespace

TEST_CASE("illumination prior of a constant gray image") {
  Var<double> img = ag::constant(Tensor<double>::full({1, 3, 4, 4}, 0.5));
  Var<double> prior = backbone::illumination_prior(img);
  CHECK(prior->value.shape == std::vector<int64_t>{1, 1, 4, 4});
  for (double v : prior->value.data) CHECK(v == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("illumination prior of a single mixed pixel") {
  Tensor<double> img({1, 3, 1, 1});
  img.data = {1.0, 0.0, 0.5};
  Var<double> prior = backbone::illumination_prior(ag::constant(img));
  CHECK(prior->value[0] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("illumination prior matches the elementwise mean oracle") {
  std::mt19937_64 rng(20);
  Tensor<double> img({2, 3, 5, 7});
  fill_uniform(img, rng, 0.0, 1.0);
  Var<double> prior = backbone::illumination_prior(ag::constant(img));
  for (int64_t b = 0; b < 2; ++b)
    for (int64_t h = 0; h < 5; ++h)
      for (int64_t w = 0; w < 7; ++w) {
        const double mean =
            (img.at4(b, 0, h, w) + img.at4(b, 1, h, w) + img.at4(b, 2, h, w)) / 3.0;
        CHECK(prior->value.at4(b, 0, h, w) == doctest::Approx(mean).epsilon(1e-14));
      }
}

TEST_CASE("illumination map: zero input with zero biases gives a zero map") {
  backbone::EnhanceNet<double> net(tiny_config(), 1);
  Var<double> img = ag::constant(Tensor<double>({1, 4, 4, 3}));
  Var<double> prior = ag::constant(Tensor<double>({1, 4, 4, 1}));
  Var<double> map = net.estimate_illumination(img, prior);
  CHECK(map->value.shape == std::vector<int64_t>{1, 4, 4, 3});
  for (double v : map->value.data) CHECK(v == 0.0);
}

TEST_CASE("illumination map shape contract and conv-composition oracle") {
  std::mt19937_64 rng(21);
  backbone::EnhanceNet<double> net(tiny_config(), 2);
  Tensor<double> img({1, 32, 32, 3}), prior({1, 32, 32, 1});
  fill_uniform(img, rng, 0.0, 1.0);
  fill_uniform(prior, rng, 0.0, 1.0);
  Var<double> map = net.estimate_illumination(ag::constant(img), ag::constant(prior));
  CHECK(map->value.shape == std::vector<int64_t>{1, 32, 32, 3});

  // hand-composed: 1x1 conv (4->C), depth-wise 3x3, 1x1 conv (C->3)
  const int64_t C = net.cfg.width;
  Tensor<double> cat({1, 32, 32, 4});
  for (int64_t p = 0; p < 32 * 32; ++p) {
    for (int64_t c = 0; c < 3; ++c) cat[p * 4 + c] = img[p * 3 + c];
    cat[p * 4 + 3] = prior[p];
  }
  Tensor<double> w1({1, 1, 4, C}, net.params.get("iem.pw1.w")->value.data);
  Tensor<double> w2({1, 1, C, 3}, net.params.get("iem.pw2.w")->value.data);
  Tensor<double> t = ref::conv2d_nhwc(cat, w1, net.params.get("iem.pw1.b")->value, 1, 0);
  t = ref::dwconv_nhwc(t, net.params.get("iem.dw.w")->value,
                       net.params.get("iem.dw.b")->value);
  t = ref::conv2d_nhwc(t, w2, net.params.get("iem.pw2.b")->value, 1, 0);
  CHECK(max_abs_diff(map->value, t) <= 1e-12);
}

TEST_CASE("mssm shape contract and zero-maps-to-zero") {
  std::mt19937_64 rng(22);
  backbone::BackboneConfig cfg = tiny_config(16);
  ParamStore<double> store;
  auto p = backbone::MssmParams<double>::create(store, "m", cfg, 16, rng);
  Var<double> x = ag::constant(testutil::random_tensor({1, 5, 6, 16}, rng));
  Var<double> y = backbone::mssm_forward(x, p);
  CHECK(y->value.shape == x->value.shape);

  Var<double> zero = ag::constant(Tensor<double>({1, 3, 3, 16}));
  Var<double> yz = backbone::mssm_forward(zero, p);
  for (double v : yz->value.data) CHECK(v == 0.0);
}

TEST_CASE("mssm gradcheck") {
  std::mt19937_64 rng(23);
  backbone::BackboneConfig cfg = tiny_config(8);
  cfg.n_state = 4;
  ParamStore<double> store;
  auto p = backbone::MssmParams<double>::create(store, "m", cfg, 8, rng);
  Var<double> x = ag::leaf(testutil::random_tensor({1, 4, 4, 8}, rng, 0.5), true);
  std::vector<Var<double>> leaves = {x};
  for (const auto& name : store.names()) leaves.push_back(store.get(name));
  const double err = testutil::gradcheck(
      [&] { return ag::mean_all(backbone::mssm_forward(x, p)); }, leaves, 1e-5, 48);
  CHECK(err <= 1e-4);
}

TEST_CASE("mssb reduces to the identity with zeroed sub-layer outputs") {
  std::mt19937_64 rng(24);
  backbone::BackboneConfig cfg = tiny_config(8);
  ParamStore<double> store;
  auto p = backbone::MssbParams<double>::create(store, "b", cfg, 8, rng);
  std::fill(p.mssm.fc_out_w->value.data.begin(), p.mssm.fc_out_w->value.data.end(), 0.0);
  std::fill(p.ffn_w2->value.data.begin(), p.ffn_w2->value.data.end(), 0.0);
  Tensor<double> x = testutil::random_tensor({1, 4, 4, 8}, rng);
  Var<double> y = backbone::mssb_forward(ag::constant(x), p);
  CHECK(max_abs_diff(y->value, x) == 0.0);
}

TEST_CASE("mssb shape preservation") {
  std::mt19937_64 rng(25);
  backbone::BackboneConfig cfg = tiny_config(16);
  ParamStore<double> store;
  auto p = backbone::MssbParams<double>::create(store, "b", cfg, 16, rng);
  Var<double> x = ag::constant(testutil::random_tensor({1, 8, 8, 16}, rng));
  CHECK(backbone::mssb_forward(x, p)->value.shape == x->value.shape);
}

TEST_CASE("mssb gradcheck") {
  std::mt19937_64 rng(26);
  backbone::BackboneConfig cfg = tiny_config(4);
  ParamStore<double> store;
  auto p = backbone::MssbParams<double>::create(store, "b", cfg, 4, rng);
  Var<double> x = ag::leaf(testutil::random_tensor({1, 3, 3, 4}, rng, 0.5), true);
  std::vector<Var<double>> leaves = {x};
  for (const auto& name : store.names()) leaves.push_back(store.get(name));
  const double err = testutil::gradcheck(
      [&] { return ag::mean_all(backbone::mssb_forward(x, p)); }, leaves, 1e-5, 48);
  CHECK(err <= 1e-4);
}

TEST_CASE("enhance preserves shape, including odd sizes") {
  std::mt19937_64 rng(27);
  backbone::EnhanceNet<double> net(tiny_config(), 3);
  for (auto [H, W] : std::vector<std::pair<int64_t, int64_t>>{{64, 64}, {5, 7}}) {
    Tensor<double> img({1, 3, H, W});
    fill_uniform(img, rng, 0.0, 1.0);
    Var<double> out = net.forward(ag::constant(img));
    CHECK(out->value.shape == img.shape);
  }
  Tensor<double> bad({1, 4, 8, 8});
  CHECK_THROWS(net.forward(ag::constant(bad)));
}

TEST_CASE("identity at initialization, bit-exact") {
  std::mt19937_64 rng(28);
  backbone::EnhanceNet<double> net(tiny_config(), 4);
  Tensor<double> img({1, 3, 12, 10});
  fill_uniform(img, rng, 0.0, 1.0);
  Var<double> out = net.forward(ag::constant(img));
  for (int64_t i = 0; i < img.numel(); ++i) CHECK(out->value[i] == img[i]);
}

TEST_CASE("trainable parameter count at the default configuration") {
  backbone::BackboneConfig cfg;  // defaults: C=64, 2 groups x 2 blocks, lambda=2, N=16
  backbone::EnhanceNet<float> net(cfg, 0);
  const int64_t count = net.params.trainable_count();
  MESSAGE("default backbone trainable parameters: " << count);
  CHECK(count >= 300000);
  CHECK(count <= 700000);
}

TEST_CASE("full-model gradcheck on a tiny config") {
  std::mt19937_64 rng(29);
  backbone::EnhanceNet<double> net(tiny_config(8), 5);
  Var<double> img = ag::leaf(testutil::random_tensor({1, 3, 8, 8}, rng, 0.3), true);
  for (double& v : img->value.data) v = std::abs(v);
  std::vector<Var<double>> leaves = {img};
  for (const auto& name : net.params.names()) leaves.push_back(net.params.get(name));
  const double err = testutil::gradcheck(
      [&] { return ag::mean_all(net.forward(img)); }, leaves, 1e-5, 24);
  CHECK(err <= 1e-3);
}

TEST_CASE("inference path clamps to the unit interval") {
  backbone::EnhanceNet<float> net(tiny_config(), 6);
  std::mt19937_64 rng(30);
  // push the residual conv away from zero so the raw output leaves [0,1]
  auto& w = net.params.get("tail.conv2.w")->value;
  fill_normal(w, rng, 0.5);
  Tensor<float> img({1, 3, 8, 8});
  fill_uniform(img, rng, 0.0, 1.0);
  Tensor<float> out = net.enhance_clamped(img);
  for (float v : out.data) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
}
