#include <iostream>

#include <CLI11.hpp>

#include "sllie/trainer.hpp"

using namespace sllie;

int main(int argc, char** argv) {
  CLI::App app{"semi-supervised low-light image enhancement"};
  app.require_subcommand(1);

  std::string config_path, data_root, resume_path, ckpt_path, in_dir, out_dir, metrics_csv;
  std::string ckpt_dir = "checkpoints";
  std::string history_path;
  bool use_student = false;

  auto* train = app.add_subcommand("train", "train the student/teacher pair");
  train->add_option("--config", config_path, "flat key=value config file")->required();
  train->add_option("--data", data_root, "dataset root")->required();
  train->add_option("--resume", resume_path, "checkpoint to resume from");
  train->add_option("--ckpt-dir", ckpt_dir, "checkpoint output directory");
  train->add_option("--history", history_path, "loss history output file");

  auto* enhance = app.add_subcommand("enhance", "enhance a directory of images");
  enhance->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
  enhance->add_option("--in", in_dir, "input image directory")->required();
  enhance->add_option("--out", out_dir, "output image directory")->required();
  enhance->add_flag("--student", use_student, "use student weights instead of teacher");

  auto* evaluate = app.add_subcommand("evaluate", "compute metrics on a dataset");
  evaluate->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
  evaluate->add_option("--data", data_root, "dataset root")->required();
  evaluate->add_option("--metrics", metrics_csv, "comma-separated: psnr,ssim,loe")
      ->default_val("psnr,ssim,loe");
  evaluate->add_flag("--student", use_student, "use student weights instead of teacher");

  CLI11_PARSE(app, argc, argv);

  try {
    trainer::apply_deterministic_mode();
    if (train->parsed()) {
      trainer::TrainConfig cfg = trainer::TrainConfig::parse_file(config_path);
      data::DatasetManifest manifest = data::scan_dataset(data_root);
      for (const auto& w : manifest.warnings) std::cerr << "warning: " << w << "\n";
      if (manifest.unpaired.empty()) cfg.batch_unpaired = 0;
      trainer::TrainState state(cfg);
      if (!resume_path.empty()) trainer::load_state(state, resume_path);
      std::ofstream history;
      if (!history_path.empty()) {
        history.open(history_path, resume_path.empty() ? std::ios::out : std::ios::app);
        if (!history) throw std::runtime_error("cannot write " + history_path);
      }
      trainer::fit(state, manifest, ckpt_dir, history.is_open() ? &history : nullptr,
                   &std::cout);
      std::cout << "final checkpoint: " << ckpt_dir << "/final.ckpt\n";
    } else if (enhance->parsed()) {
      const int n = trainer::enhance_cmd(ckpt_path, in_dir, out_dir, use_student);
      std::cout << n << " images written to " << out_dir << "\n";
    } else if (evaluate->parsed()) {
      std::vector<std::string> metrics;
      std::stringstream ss(metrics_csv);
      std::string item;
      while (std::getline(ss, item, ','))
        if (!item.empty()) metrics.push_back(item);
      trainer::evaluate_cmd(ckpt_path, data_root, metrics, std::cout, use_student);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
