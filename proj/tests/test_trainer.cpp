#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <limits>
#include <map>

#include "sllie/trainer.hpp"
#include "testutil.hpp"

using namespace sllie;
using testutil::max_abs_diff;
namespace fs = std::filesystem;

namespace {

trainer::TrainConfig tiny_config() {
  trainer::TrainConfig cfg;
  cfg.epochs = 2;
  cfg.lr_constant_epochs = 1;
  cfg.batch_paired = 1;
  cfg.batch_unpaired = 1;
  cfg.crop = 32;
  cfg.resize = 32;
  cfg.width = 8;
  cfg.n_groups = 1;
  cfg.n_blocks = 1;
  cfg.n_state = 2;
  cfg.disc_channels = 4;
  cfg.checkpoint_every = 1;
  cfg.seed = 11;
  return cfg;
}

Tensor<float> random_image(std::vector<int64_t> shape, uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tensor<float> t(std::move(shape));
  fill_uniform(t, rng, 0.0, 1.0);
  return t;
}

struct FixtureTree {
  fs::path root;
  explicit FixtureTree(const std::string& name) {
    root = fs::temp_directory_path() / name;
    fs::remove_all(root);
    for (const char* d : {"paired/low", "paired/gt", "unpaired/low", "val/low", "val/gt"})
      fs::create_directories(root / d);
  }
  ~FixtureTree() { fs::remove_all(root); }
};

data::DatasetManifest write_tiny_dataset(const FixtureTree& fix) {
  for (int i = 0; i < 2; ++i) {
    const std::string name = "p" + std::to_string(i) + ".png";
    io::save_image((fix.root / "paired" / "low" / name).string(),
                   random_image({1, 3, 40, 40}, uint64_t(i)));
    io::save_image((fix.root / "paired" / "gt" / name).string(),
                   random_image({1, 3, 40, 40}, uint64_t(i + 10)));
    io::save_image((fix.root / "unpaired" / "low" / ("u" + std::to_string(i) + ".png")).string(),
                   random_image({1, 3, 40, 40}, uint64_t(i + 20)));
  }
  io::save_image((fix.root / "val" / "low" / "v.png").string(), random_image({1, 3, 40, 40}, 30));
  io::save_image((fix.root / "val" / "gt" / "v.png").string(), random_image({1, 3, 40, 40}, 31));
  return data::scan_dataset(fix.root.string());
}

Tensor<float> snapshot(const ParamStore<float>& store) {
  std::vector<float> all;
  for (const auto& name : store.names()) {
    const auto& v = store.get(name)->value.data;
    all.insert(all.end(), v.begin(), v.end());
  }
  const int64_t n = int64_t(all.size());
  return Tensor<float>({n}, std::move(all));
}

}  // namespace

TEST_CASE("config parsing with comments, whitespace and overrides") {
  std::istringstream in(
      "# experiment\n"
      "lr = 1e-3   # bumped\n"
      "\n"
      "  epochs=10\n"
      "lr_constant_epochs\t=\t5\n"
      "scr_form = literal\n");
  trainer::TrainConfig cfg = trainer::TrainConfig::parse(in);
  CHECK(cfg.lr == 1e-3);
  CHECK(cfg.epochs == 10);
  CHECK(cfg.lr_constant_epochs == 5);
  CHECK(cfg.scr_form == "literal");
  CHECK(cfg.width == 64);  // untouched default
}

TEST_CASE("config rejects unknown keys and malformed lines") {
  std::istringstream unknown("lr=1e-3\nlearning_rate=1e-3\n");
  CHECK_THROWS_AS(trainer::TrainConfig::parse(unknown), std::invalid_argument);
  std::istringstream malformed("lr 1e-3\n");
  CHECK_THROWS_AS(trainer::TrainConfig::parse(malformed), std::invalid_argument);
}

TEST_CASE("config validation") {
  trainer::TrainConfig cfg;
  cfg.epochs = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = trainer::TrainConfig{};
  cfg.lr_constant_epochs = cfg.epochs;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = trainer::TrainConfig{};
  cfg.scr_form = "cosine";
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  trainer::TrainConfig{}.validate();  // defaults are valid
}

TEST_CASE("canonical form and hash are stable and value-sensitive") {
  trainer::TrainConfig a, b;
  CHECK(a.canonical() == b.canonical());
  CHECK(a.hash() == b.hash());
  b.lr = 1e-3;
  CHECK(a.canonical() != b.canonical());
  CHECK(a.hash() != b.hash());
}

TEST_CASE("learning-rate schedule: constant then linear decay to zero") {
  trainer::TrainConfig cfg;  // epochs 200, constant through 100, lr 2e-4
  CHECK(trainer::lr_at_epoch(cfg, 0) == 2e-4);
  CHECK(trainer::lr_at_epoch(cfg, 99) == 2e-4);
  CHECK(trainer::lr_at_epoch(cfg, 150) == doctest::Approx(1e-4).epsilon(1e-12));
  CHECK(trainer::lr_at_epoch(cfg, 199) == doctest::Approx(2e-6).epsilon(1e-12));
  CHECK(trainer::lr_at_epoch(cfg, 200) == 0.0);
}

TEST_CASE("optimizer rejects non-trainable parameters (teacher isolation)") {
  mean_teacher::ModelPair<float> pair(tiny_config().backbone_config(), 1, 0.999);
  CHECK_THROWS_AS(trainer::AdamW<float>(pair.teacher.params, 1e-3, 0.9, 0.999, 0.0),
                  std::invalid_argument);
  trainer::AdamW<float>(pair.student.params, 1e-3, 0.9, 0.999, 0.0);  // accepted
}

TEST_CASE("first optimizer step moves against the gradient sign") {
  ParamStore<float> store;
  store.add("w", Tensor<float>({4}, {1.0f, -2.0f, 0.5f, 0.0f}), true);
  trainer::AdamW<float> opt(store, 1e-2, 0.9, 0.999, 0.0);
  Var<float> w = store.get("w");
  w->grad_buf().data = {0.3f, -0.7f, 0.0f, 2.0f};
  const Tensor<float> before = w->value;
  opt.step();
  // with bias correction, |update| = lr * |g| / (|g| + eps) ~ lr for g != 0
  CHECK(w->value[0] == doctest::Approx(before[0] - 1e-2).epsilon(1e-4));
  CHECK(w->value[1] == doctest::Approx(before[1] + 1e-2).epsilon(1e-4));
  CHECK(w->value[2] == before[2]);  // zero gradient, zero weight decay
  CHECK(w->value[3] == doctest::Approx(before[3] - 1e-2).epsilon(1e-4));
}

TEST_CASE("weight decay is decoupled from the gradient") {
  ParamStore<float> store;
  store.add("w", Tensor<float>({1}, {2.0f}), true);
  trainer::AdamW<float> opt(store, 1e-2, 0.9, 0.999, 0.1);
  store.get("w")->grad_buf().data = {0.0f};
  opt.step();
  // pure decay: p -= lr * wd * p
  CHECK(store.get("w")->value[0] == doctest::Approx(2.0f * (1.0f - 1e-3f)).epsilon(1e-6));
}

TEST_CASE("supervised losses vanish at initialization when low equals gt") {
  trainer::TrainConfig cfg = tiny_config();
  cfg.batch_unpaired = 0;
  trainer::TrainState state(cfg);
  data::TrainBatch batch;
  batch.paired_low = random_image({1, 3, 32, 32}, 40);
  batch.paired_gt = batch.paired_low;
  trainer::LossRecord rec = trainer::train_step(state, batch, 0);
  std::map<std::string, double> m(rec.begin(), rec.end());
  CHECK(m.at("sup") == 0.0);
  CHECK(m.at("grad") == 0.0);
  CHECK(m.at("ramper") == 0.0);
  CHECK(m.at("total") == 0.0);
  CHECK(state.step == 1);
}

TEST_CASE("consistency and contrastive terms vanish when strong equals weak") {
  trainer::TrainConfig cfg = tiny_config();
  trainer::TrainState state(cfg);
  data::TrainBatch batch;
  batch.paired_low = random_image({1, 3, 32, 32}, 41);
  batch.paired_gt = random_image({1, 3, 32, 32}, 42);
  batch.unpaired_weak = random_image({1, 3, 32, 32}, 43);
  batch.unpaired_strong = batch.unpaired_weak;
  const Tensor<float> teacher_before = snapshot(state.pair.teacher.params);
  trainer::LossRecord rec = trainer::train_step(state, batch, 0);
  std::map<std::string, double> m(rec.begin(), rec.end());
  // identical inputs through identical student/teacher at the shared seed
  CHECK(m.at("un") == 0.0);
  CHECK(m.at("scr") == 0.0);
  for (const auto& [name, value] : m) CHECK(std::isfinite(value));
  CHECK(m.count("sup") == 1);
  CHECK(m.count("adv") == 1);
  CHECK(m.count("disc") == 1);
  CHECK(m.count("total") == 1);
  // student moved, so the exponential average must have moved too
  CHECK(max_abs_diff(snapshot(state.pair.teacher.params), teacher_before) > 0.0f);
}

TEST_CASE("non-finite losses abort with the loss name and step") {
  trainer::TrainConfig cfg = tiny_config();
  cfg.batch_unpaired = 0;
  trainer::TrainState state(cfg);
  auto& w = state.pair.student.params.get("shallow.w")->value;
  w[0] = std::numeric_limits<float>::quiet_NaN();
  data::TrainBatch batch;
  batch.paired_low = random_image({1, 3, 32, 32}, 44);
  batch.paired_gt = batch.paired_low;
  bool threw = false;
  try {
    trainer::train_step(state, batch, 0);
  } catch (const std::runtime_error& e) {
    threw = true;
    const std::string msg = e.what();
    CHECK(msg.find("non-finite loss") != std::string::npos);
    CHECK(msg.find("step 0") != std::string::npos);
  }
  CHECK(threw);
}

TEST_CASE("checkpoint resume is bit-exact against an uninterrupted run") {
  FixtureTree fix("sllie_fixture_resume");
  data::DatasetManifest manifest = write_tiny_dataset(fix);
  trainer::TrainConfig cfg = tiny_config();
  const data::BatchSpec spec = trainer::TrainState(cfg).batch_spec();
  const std::string ckpt = (fix.root / "mid.ckpt").string();

  // interrupted: 2 steps, save, fresh state, load, 2 more steps
  trainer::TrainState a(cfg);
  for (int s = 0; s < 2; ++s)
    trainer::train_step(a, data::make_batch(manifest, a.step, cfg.seed, spec), 0);
  trainer::save_state(a, ckpt);
  trainer::TrainState b(cfg);
  trainer::load_state(b, ckpt);
  CHECK(b.step == 2);
  CHECK(max_abs_diff(snapshot(b.pair.student.params), snapshot(a.pair.student.params)) == 0.0f);
  for (int s = 0; s < 2; ++s)
    trainer::train_step(b, data::make_batch(manifest, b.step, cfg.seed, spec), 0);

  // uninterrupted: 4 steps from scratch
  trainer::TrainState c(cfg);
  for (int s = 0; s < 4; ++s)
    trainer::train_step(c, data::make_batch(manifest, c.step, cfg.seed, spec), 0);

  CHECK(max_abs_diff(snapshot(b.pair.student.params), snapshot(c.pair.student.params)) == 0.0f);
  CHECK(max_abs_diff(snapshot(b.pair.teacher.params), snapshot(c.pair.teacher.params)) == 0.0f);
  CHECK(max_abs_diff(snapshot(b.disc.params), snapshot(c.disc.params)) == 0.0f);
}

TEST_CASE("resume refuses a checkpoint trained under a different config") {
  FixtureTree fix("sllie_fixture_hash");
  trainer::TrainConfig cfg = tiny_config();
  trainer::TrainState state(cfg);
  const std::string ckpt = (fix.root / "s.ckpt").string();
  trainer::save_state(state, ckpt);

  trainer::TrainConfig other = cfg;
  other.lr = 5e-4;
  trainer::TrainState fresh(other);
  bool threw = false;
  try {
    trainer::load_state(fresh, ckpt);
  } catch (const std::runtime_error& e) {
    threw = true;
    const std::string msg = e.what();
    CHECK(msg.find("config differs") != std::string::npos);
    CHECK(msg.find("lr=") != std::string::npos);
  }
  CHECK(threw);
}

TEST_CASE("enhance and evaluate backends round-trip a saved model") {
  FixtureTree fix("sllie_fixture_cmd");
  data::DatasetManifest manifest = write_tiny_dataset(fix);
  (void)manifest;
  trainer::TrainConfig cfg = tiny_config();
  trainer::TrainState state(cfg);
  const std::string ckpt = (fix.root / "m.ckpt").string();
  trainer::save_state(state, ckpt);

  const fs::path in_dir = fix.root / "unpaired" / "low";
  const fs::path out_dir = fix.root / "enhanced";
  std::ostringstream log;
  const int n = trainer::enhance_cmd(ckpt, in_dir.string(), out_dir.string(), false, log);
  CHECK(n == 2);
  // the freshly initialized model is the identity, so outputs match inputs
  Tensor<float> orig = io::load_image((in_dir / "u0.png").string());
  Tensor<float> enh = io::load_image((out_dir / "u0.png").string());
  CHECK(max_abs_diff(orig, enh) == 0.0f);

  std::ostringstream report;
  trainer::evaluate_cmd(ckpt, fix.root.string(), {"psnr", "ssim", "loe"}, report);
  const std::string text = report.str();
  CHECK(text.find("v.png psnr ") != std::string::npos);
  CHECK(text.find("v.png ssim ") != std::string::npos);
  CHECK(text.find("u0.png loe ") != std::string::npos);
  CHECK(text.find("summary psnr ") != std::string::npos);
  CHECK(text.find("summary loe ") != std::string::npos);
}

TEST_CASE("fit writes history lines and periodic checkpoints") {
  FixtureTree fix("sllie_fixture_fit");
  data::DatasetManifest manifest = write_tiny_dataset(fix);
  trainer::TrainConfig cfg = tiny_config();
  cfg.steps_per_epoch = 1;
  trainer::TrainState state(cfg);
  std::ostringstream history;
  trainer::fit(state, manifest, (fix.root / "ckpts").string(), &history);
  CHECK(state.epoch == cfg.epochs);
  CHECK(state.step == 2);
  CHECK(fs::exists(fix.root / "ckpts" / "epoch_1.ckpt"));
  CHECK(fs::exists(fix.root / "ckpts" / "final.ckpt"));
  std::istringstream lines(history.str());
  std::string line;
  int total_lines = 0, step0 = 0;
  while (std::getline(lines, line)) {
    ++total_lines;
    std::istringstream ls(line);
    int64_t step;
    int epoch;
    std::string name;
    double value;
    CHECK(bool(ls >> step >> epoch >> name >> value));
    if (step == 0) ++step0;
  }
  CHECK(total_lines >= 14);  // 7 named losses per semi-supervised step
  CHECK(step0 >= 7);
}
