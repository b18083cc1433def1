#pragma once

#include <cstdlib>
#include <iomanip>
#include <map>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "sllie/adversary.hpp"
#include "sllie/checkpoint.hpp"
#include "sllie/data.hpp"
#include "sllie/losses.hpp"
#include "sllie/metrics.hpp"

// Training loop wiring: optimizer, per-step objective composition, EMA,
// checkpointing and the programmatic backends of the train / enhance /
// evaluate commands.

namespace sllie::trainer {

struct TrainConfig {
  int epochs = 200;
  double lr = 2e-4;
  int lr_constant_epochs = 100;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double weight_decay = 1e-4;
  int64_t batch_paired = 8;
  int64_t batch_unpaired = 8;
  int64_t crop = 256;
  int64_t resize = 256;  // unpaired resize target
  double ema_beta = 0.999;
  double gamma1 = 0.1;
  double gamma2 = 0.1;
  double lambda2 = 0.1;
  double omega = 1.0;
  std::string scr_form = "anchor_ratio";
  int64_t width = 64;
  int64_t n_groups = 2;
  int64_t n_blocks = 2;
  double expansion = 2.0;
  int64_t n_state = 16;
  uint64_t seed = 0;
  uint64_t encoder_seed = 1234;
  double disc_lr = 2e-4;
  int64_t disc_channels = 64;
  int checkpoint_every = 10;  // epochs
  int64_t steps_per_epoch = 0;  // 0 = derive from paired count

  void validate() const {
    if (epochs < 1 || lr <= 0 || batch_paired < 1 || batch_unpaired < 0 || crop < 8)
      throw std::invalid_argument("TrainConfig: epochs >= 1, lr > 0, batch/crop sane");
    if (lr_constant_epochs < 0 || lr_constant_epochs >= epochs)
      throw std::invalid_argument("TrainConfig: lr_constant_epochs must be in [0, epochs)");
    if (scr_form != "anchor_ratio" && scr_form != "literal")
      throw std::invalid_argument("TrainConfig: scr_form must be anchor_ratio or literal");
  }

  backbone::BackboneConfig backbone_config() const {
    backbone::BackboneConfig b;
    b.width = width;
    b.n_groups = n_groups;
    b.n_blocks = n_blocks;
    b.expansion = expansion;
    b.n_state = n_state;
    return b;
  }

  losses::LossSchedule loss_schedule() const {
    losses::LossSchedule s;
    s.gamma1 = gamma1;
    s.gamma2 = gamma2;
    s.lambda2 = lambda2;
    s.omega = omega;
    s.total_epochs = epochs;
    s.scr_form = scr_form == "literal" ? losses::ScrForm::Literal
                                       : losses::ScrForm::AnchorRatio;
    return s;
  }

  std::string canonical() const {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "adam_beta1=" << adam_beta1 << "\nadam_beta2=" << adam_beta2
       << "\nbatch_paired=" << batch_paired << "\nbatch_unpaired=" << batch_unpaired
       << "\ncheckpoint_every=" << checkpoint_every << "\ncrop=" << crop
       << "\ndisc_channels=" << disc_channels << "\ndisc_lr=" << disc_lr
       << "\nema_beta=" << ema_beta << "\nencoder_seed=" << encoder_seed
       << "\nepochs=" << epochs << "\nexpansion=" << expansion << "\ngamma1=" << gamma1
       << "\ngamma2=" << gamma2 << "\nlambda2=" << lambda2 << "\nlr=" << lr
       << "\nlr_constant_epochs=" << lr_constant_epochs << "\nn_blocks=" << n_blocks
       << "\nn_groups=" << n_groups << "\nn_state=" << n_state << "\nomega=" << omega
       << "\nresize=" << resize << "\nscr_form=" << scr_form << "\nseed=" << seed
       << "\nsteps_per_epoch=" << steps_per_epoch << "\nweight_decay=" << weight_decay
       << "\nwidth=" << width << "\n";
    return os.str();
  }

  uint64_t hash() const {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : canonical()) {
      h ^= uint8_t(c);
      h *= 0x100000001b3ULL;
    }
    return h;
  }

  void set(const std::string& key, const std::string& value) {
    auto d = [&] { return std::stod(value); };
    auto i = [&] { return std::stoll(value); };
    if (key == "epochs") epochs = int(i());
    else if (key == "lr") lr = d();
    else if (key == "lr_constant_epochs") lr_constant_epochs = int(i());
    else if (key == "adam_beta1") adam_beta1 = d();
    else if (key == "adam_beta2") adam_beta2 = d();
    else if (key == "weight_decay") weight_decay = d();
    else if (key == "batch_paired") batch_paired = i();
    else if (key == "batch_unpaired") batch_unpaired = i();
    else if (key == "crop") crop = i();
    else if (key == "resize") resize = i();
    else if (key == "ema_beta") ema_beta = d();
    else if (key == "gamma1") gamma1 = d();
    else if (key == "gamma2") gamma2 = d();
    else if (key == "lambda2") lambda2 = d();
    else if (key == "omega") omega = d();
    else if (key == "scr_form") scr_form = value;
    else if (key == "width") width = i();
    else if (key == "n_groups") n_groups = i();
    else if (key == "n_blocks") n_blocks = i();
    else if (key == "expansion") expansion = d();
    else if (key == "n_state") n_state = i();
    else if (key == "seed") seed = uint64_t(i());
    else if (key == "encoder_seed") encoder_seed = uint64_t(i());
    else if (key == "disc_lr") disc_lr = d();
    else if (key == "disc_channels") disc_channels = i();
    else if (key == "checkpoint_every") checkpoint_every = int(i());
    else if (key == "steps_per_epoch") steps_per_epoch = i();
    else throw std::invalid_argument("TrainConfig: unknown key '" + key + "'");
  }

  // flat key=value text; '#' starts a comment; unknown keys rejected
  static TrainConfig parse(std::istream& in) {
    TrainConfig cfg;
    std::string line;
    while (std::getline(in, line)) {
      const auto hash_pos = line.find('#');
      if (hash_pos != std::string::npos) line = line.substr(0, hash_pos);
      const auto first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos) continue;
      const auto last = line.find_last_not_of(" \t\r");
      line = line.substr(first, last - first + 1);
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw std::invalid_argument("TrainConfig: malformed line '" + line + "'");
      auto trim = [](std::string s) {
        const auto a = s.find_first_not_of(" \t");
        const auto b = s.find_last_not_of(" \t");
        return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
      };
      cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    cfg.validate();
    return cfg;
  }

  static TrainConfig parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("TrainConfig: cannot read " + path);
    return parse(in);
  }
};

inline double lr_at_epoch(const TrainConfig& cfg, int epoch) {
  if (epoch < cfg.lr_constant_epochs) return cfg.lr;
  const double frac =
      double(cfg.epochs - epoch) / double(cfg.epochs - cfg.lr_constant_epochs);
  return cfg.lr * std::max(0.0, std::min(1.0, frac));
}

inline bool deterministic_mode() {
  const char* v = std::getenv("SEMI_LLIE_DETERMINISTIC");
  return v && std::string(v) == "1";
}

inline void apply_deterministic_mode() {
#ifdef _OPENMP
  if (deterministic_mode()) omp_set_num_threads(1);
#endif
}

// Decoupled-weight-decay adaptive optimizer. Construction rejects any
// non-trainable parameter, so the teacher can never be registered.
template <typename T>
class AdamW {
 public:
  double lr, beta1, beta2, eps = 1e-8, weight_decay;
  int64_t t = 0;

  AdamW(ParamStore<T>& store, double lr_, double b1, double b2, double wd)
      : lr(lr_), beta1(b1), beta2(b2), weight_decay(wd) {
    for (const auto& name : store.names()) {
      const Var<T>& v = store.get(name);
      if (!v->requires_grad)
        throw std::invalid_argument("AdamW: non-trainable parameter " + name);
      slots_.push_back({name, v, Tensor<T>(v->value.shape), Tensor<T>(v->value.shape)});
    }
  }

  void step() {
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, double(t));
    const double bc2 = 1.0 - std::pow(beta2, double(t));
    for (auto& s : slots_) {
      Tensor<T>& p = s.var->value;
      const Tensor<T>& g = s.var->grad_buf();
      for (int64_t i = 0; i < p.numel(); ++i) {
        const double gi = double(g[i]);
        s.m[i] = T(beta1 * double(s.m[i]) + (1.0 - beta1) * gi);
        s.v[i] = T(beta2 * double(s.v[i]) + (1.0 - beta2) * gi * gi);
        const double mhat = double(s.m[i]) / bc1;
        const double vhat = double(s.v[i]) / bc2;
        p[i] = T(double(p[i]) -
                 lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * double(p[i])));
      }
    }
  }

  void save_state(ckpt::Checkpoint& ck, const std::string& prefix) const {
    for (const auto& s : slots_) {
      ck.add(prefix + ".m." + s.name, s.m.shape, s.m.template cast<float>().data);
      ck.add(prefix + ".v." + s.name, s.v.shape, s.v.template cast<float>().data);
    }
    ck.meta[prefix + ".t"] = t;
  }

  void load_state(const ckpt::Checkpoint& ck, const std::string& prefix) {
    for (auto& s : slots_) {
      const auto& em = ck.get(prefix + ".m." + s.name);
      const auto& ev = ck.get(prefix + ".v." + s.name);
      if (em.shape != s.m.shape || ev.shape != s.v.shape)
        throw std::runtime_error("AdamW: optimizer state shape mismatch at " + s.name);
      for (size_t i = 0; i < em.data.size(); ++i) s.m.data[i] = T(em.data[i]);
      for (size_t i = 0; i < ev.data.size(); ++i) s.v.data[i] = T(ev.data[i]);
    }
    t = ck.meta.at(prefix + ".t").get<int64_t>();
  }

 private:
  struct Slot {
    std::string name;
    Var<T> var;
    Tensor<T> m, v;
  };
  std::vector<Slot> slots_;
};

using LossRecord = std::vector<std::pair<std::string, double>>;

struct TrainState {
  TrainConfig cfg;
  mean_teacher::ModelPair<float> pair;
  adversary::Discriminator<float> disc;
  encoder::SemanticEncoder<float> enc;
  AdamW<float> student_opt;
  AdamW<float> disc_opt;
  losses::LossSchedule sched;
  int64_t step = 0;
  int epoch = 0;

  explicit TrainState(const TrainConfig& c)
      : cfg(c),
        pair(c.backbone_config(), c.seed, c.ema_beta),
        disc(mix_seed(c.seed, 0xd15c), c.disc_channels),
        enc(encoder::SemanticEncoder<float>::build_test_encoder(c.encoder_seed)),
        student_opt(pair.student.params, c.lr, c.adam_beta1, c.adam_beta2, c.weight_decay),
        disc_opt(disc.params, c.disc_lr, c.adam_beta1, c.adam_beta2, c.weight_decay),
        sched(c.loss_schedule()) {
    cfg.validate();
    sched.validate();
  }

  data::BatchSpec batch_spec() const {
    data::BatchSpec spec;
    spec.n_paired = cfg.batch_paired;
    spec.n_unpaired = cfg.batch_unpaired;
    spec.crop = cfg.crop;
    spec.policy.resize_h = cfg.resize;
    spec.policy.resize_w = cfg.resize;
    return spec;
  }
};

namespace detail {

inline void check_finite(double v, const char* name, int64_t step) {
  if (!std::isfinite(v))
    throw std::runtime_error(std::string("non-finite loss '") + name + "' at step " +
                             std::to_string(step));
}

}  // namespace detail

// One optimization step: paired losses, unpaired consistency + contrastive,
// generator adversarial term, student update, discriminator update, EMA.
inline LossRecord train_step(TrainState& state, const data::TrainBatch& batch, int epoch) {
  using F = float;
  const bool semi = batch.unpaired_weak.numel() > 0;
  LossRecord rec;
  auto record = [&](const char* name, const Var<F>& v) {
    const double x = double(v->value[0]);
    detail::check_finite(x, name, state.step);
    rec.emplace_back(name, x);
    return v;
  };

  // (1) paired branch
  Var<F> paired_low = ag::constant(batch.paired_low);
  Var<F> paired_gt = ag::constant(batch.paired_gt);
  Var<F> s_out = state.pair.student.forward(paired_low);
  Var<F> l_sup = record("sup", losses::fidelity_loss(s_out, paired_gt));
  Var<F> l_grad = record("grad", losses::gradient_loss(s_out, paired_gt));
  auto pyr_gt = state.enc.encode(paired_gt);
  auto pyr_enh = state.enc.encode(s_out);
  Var<F> l_ramper = record("ramper", losses::perceptual_loss(pyr_gt, pyr_enh));
  Var<F> sup_prime = losses::supervised_objective(l_sup, l_ramper, l_grad, state.sched);

  Var<F> total;
  Var<F> s_out_u;
  if (semi) {
    // (2) unpaired branch: student on strong aug, teacher (no grad) on weak aug
    Var<F> weak = ag::constant(batch.unpaired_weak);
    Var<F> strong = ag::constant(batch.unpaired_strong);
    s_out_u = state.pair.student.forward(strong);
    Var<F> t_out = state.pair.teacher.forward(weak);
    Var<F> l_un = record("un", losses::consistency_loss(s_out_u, t_out));
    Var<F> anchor = state.enc.final_embedding(s_out_u);
    Var<F> positive = state.enc.final_embedding(t_out);
    Var<F> negative = state.enc.final_embedding(weak);
    Var<F> l_scr = record(
        "scr", losses::scr_loss(anchor, positive, negative, state.sched.omega,
                                state.sched.scr_form));
    Var<F> un_prime = losses::unsupervised_objective(l_un, l_scr);
    // (3) generator adversarial term on the unpaired outputs
    Var<F> l_adv =
        record("adv", adversary::generator_adv_loss(state.disc.discriminate(s_out_u)));
    // (4) overall objective
    total = losses::overall_objective(sup_prime, un_prime, l_adv, epoch, state.sched);
  } else {
    total = sup_prime;
  }
  record("total", total);

  state.pair.student.params.zero_grad();
  state.disc.params.zero_grad();
  ag::backward(total);
  state.student_opt.step();

  if (semi) {
    // (5) discriminator step: paired ground truth real, detached outputs fake
    state.disc.params.zero_grad();
    Var<F> real_logits = state.disc.discriminate(paired_gt);
    Var<F> fake_logits = state.disc.discriminate(ag::detach(s_out_u));
    Var<F> d_loss = record("disc", adversary::discriminator_loss(real_logits, fake_logits));
    ag::backward(d_loss);
    state.disc_opt.step();
  }

  // (6) EMA aggregation into the teacher
  state.pair.update_teacher();
  ++state.step;
  return rec;
}

inline void save_state(const TrainState& state, const std::string& path) {
  ckpt::Checkpoint ck;
  ck.meta["config"] = state.cfg.canonical();
  ck.meta["config_hash"] = state.cfg.hash();
  ck.meta["step"] = state.step;
  ck.meta["epoch"] = state.epoch;
  ck.add_store("student", state.pair.student.params);
  ck.add_store("teacher", state.pair.teacher.params);
  ck.add_store("disc", state.disc.params);
  state.student_opt.save_state(ck, "opt.student");
  state.disc_opt.save_state(ck, "opt.disc");
  ck.save(path);
}

inline void check_config_hash(const ckpt::Checkpoint& ck, const TrainConfig& cfg) {
  const uint64_t have = ck.meta.value("config_hash", uint64_t(0));
  if (have == cfg.hash()) return;
  std::string msg = "checkpoint config differs from the requested config:\n";
  std::istringstream a(ck.meta.value("config", std::string())), b(cfg.canonical());
  std::string la, lb;
  while (std::getline(a, la) && std::getline(b, lb))
    if (la != lb) msg += "  checkpoint: " + la + "  requested: " + lb + "\n";
  throw std::runtime_error(msg);
}

inline void load_state(TrainState& state, const std::string& path) {
  ckpt::Checkpoint ck = ckpt::Checkpoint::load(path);
  check_config_hash(ck, state.cfg);
  ck.load_into_store("student", state.pair.student.params);
  ck.load_into_store("teacher", state.pair.teacher.params);
  ck.load_into_store("disc", state.disc.params);
  state.student_opt.load_state(ck, "opt.student");
  state.disc_opt.load_state(ck, "opt.disc");
  state.step = ck.meta.at("step").get<int64_t>();
  state.epoch = ck.meta.at("epoch").get<int>();
}

// Epoch loop with lr schedule and per-epoch lambda1; periodic checkpoints
// enable bit-exact resume. history receives "step epoch name value" lines.
inline void fit(TrainState& state, const data::DatasetManifest& manifest,
                const std::string& ckpt_dir, std::ostream* history = nullptr,
                std::ostream* log = nullptr) {
  apply_deterministic_mode();
  const data::BatchSpec spec = state.batch_spec();
  const int64_t steps_per_epoch =
      state.cfg.steps_per_epoch > 0
          ? state.cfg.steps_per_epoch
          : (int64_t(manifest.paired.size()) + state.cfg.batch_paired - 1) /
                state.cfg.batch_paired;
  std::filesystem::create_directories(ckpt_dir);
  for (; state.epoch < state.cfg.epochs; ++state.epoch) {
    state.student_opt.lr = lr_at_epoch(state.cfg, state.epoch);
    state.disc_opt.lr = state.cfg.disc_lr * lr_at_epoch(state.cfg, state.epoch) / state.cfg.lr;
    const int64_t epoch_end = int64_t(state.epoch + 1) * steps_per_epoch;
    while (state.step < epoch_end) {
      data::TrainBatch batch = data::make_batch(manifest, state.step, state.cfg.seed, spec);
      const int64_t step_before = state.step;
      LossRecord rec = train_step(state, batch, state.epoch);
      if (history)
        for (const auto& [name, value] : rec)
          *history << step_before << " " << state.epoch << " " << name << " "
                   << std::setprecision(10) << value << "\n";
      if (log && (step_before % 50 == 0)) {
        *log << "epoch " << state.epoch << " step " << step_before;
        for (const auto& [name, value] : rec) *log << " " << name << "=" << value;
        *log << "\n";
      }
    }
    if ((state.epoch + 1) % state.cfg.checkpoint_every == 0)
      save_state(state, ckpt_dir + "/epoch_" + std::to_string(state.epoch + 1) + ".ckpt");
  }
  save_state(state, ckpt_dir + "/final.ckpt");
}

// Rebuild the network stored in a checkpoint. The teacher generally performs
// better and is the default inference model.
inline backbone::EnhanceNet<float> load_model(const std::string& ckpt_path,
                                              bool use_student = false) {
  ckpt::Checkpoint ck = ckpt::Checkpoint::load(ckpt_path);
  std::istringstream cfg_text(ck.meta.at("config").get<std::string>());
  TrainConfig cfg = TrainConfig::parse(cfg_text);
  backbone::EnhanceNet<float> net(cfg.backbone_config(), cfg.seed);
  ck.load_into_store(use_student ? "student" : "teacher", net.params);
  return net;
}

inline int enhance_cmd(const std::string& ckpt_path, const std::string& in_dir,
                       const std::string& out_dir, bool use_student,
                       std::ostream& log = std::cout) {
  apply_deterministic_mode();
  backbone::EnhanceNet<float> net = load_model(ckpt_path, use_student);
  std::filesystem::create_directories(out_dir);
  const auto files = data::detail::sorted_files(in_dir);
  if (files.empty()) throw std::runtime_error("enhance: no images in " + in_dir);
  for (const auto& f : files) {
    Tensor<float> img = io::load_image((std::filesystem::path(in_dir) / f).string());
    Tensor<float> out = net.enhance_clamped(img);
    io::save_image((std::filesystem::path(out_dir) / f).string(), out);
    log << f << " done\n";
  }
  return int(files.size());
}

// Per-image records "image_id metric value" followed by aggregate means.
inline void evaluate_cmd(const std::string& ckpt_path, const std::string& data_root,
                         const std::vector<std::string>& metric_names, std::ostream& out,
                         bool use_student = false) {
  apply_deterministic_mode();
  backbone::EnhanceNet<float> net = load_model(ckpt_path, use_student);
  data::DatasetManifest manifest = data::scan_dataset(data_root);
  auto wants = [&](const std::string& m) {
    return std::find(metric_names.begin(), metric_names.end(), m) != metric_names.end();
  };
  std::map<std::string, std::pair<double, int64_t>> agg;
  auto emit = [&](const std::string& id, const std::string& metric, double v) {
    out << id << " " << metric << " " << std::setprecision(8) << v << "\n";
    agg[metric].first += v;
    agg[metric].second += 1;
  };
  for (const auto& [low_path, gt_path] : manifest.val) {
    const std::string id = std::filesystem::path(low_path).filename().string();
    Tensor<float> low = io::load_image(low_path);
    Tensor<float> gt = io::load_image(gt_path);
    Tensor<float> enh = net.enhance_clamped(low);
    if (wants("psnr")) emit(id, "psnr", metrics::psnr(enh, gt));
    if (wants("ssim")) emit(id, "ssim", metrics::ssim(enh, gt));
    if (wants("loe")) emit(id, "loe", metrics::loe(low, enh));
  }
  // no-reference evaluation only for the unpaired pool
  if (wants("loe"))
    for (const auto& low_path : manifest.unpaired) {
      const std::string id = std::filesystem::path(low_path).filename().string();
      Tensor<float> low = io::load_image(low_path);
      emit(id, "loe", metrics::loe(low, net.enhance_clamped(low)));
    }
  for (const auto& [metric, acc] : agg)
    out << "summary " << metric << " " << std::setprecision(8)
        << acc.first / double(acc.second) << "\n";
}

}  // namespace sllie::trainer
