#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>

#include "sllie/image_io.hpp"
#include "sllie/mean_teacher.hpp"

// Dataset manifests, synthetic low-light generation and batch composition.
// Batch content is a pure function of (manifest, step, seed), so prefetch
// order cannot change training results.

namespace sllie::data {

namespace fs = std::filesystem;

struct DatasetManifest {
  std::vector<std::pair<std::string, std::string>> paired;  // (low, gt)
  std::vector<std::string> unpaired;
  std::vector<std::pair<std::string, std::string>> val;
  std::vector<std::string> warnings;
};

namespace detail {

inline std::vector<std::string> sorted_files(const fs::path& dir) {
  std::vector<std::string> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file()) out.push_back(e.path().filename().string());
  std::sort(out.begin(), out.end());
  return out;
}

inline std::vector<std::pair<std::string, std::string>> match_pairs(const fs::path& low_dir,
                                                                    const fs::path& gt_dir,
                                                                    const char* what) {
  const auto lows = sorted_files(low_dir);
  const auto gts = sorted_files(gt_dir);
  std::vector<std::string> offenders;
  std::vector<std::pair<std::string, std::string>> pairs;
  for (const auto& f : lows) {
    if (std::binary_search(gts.begin(), gts.end(), f))
      pairs.emplace_back((low_dir / f).string(), (gt_dir / f).string());
    else
      offenders.push_back("low/" + f);
  }
  for (const auto& f : gts)
    if (!std::binary_search(lows.begin(), lows.end(), f)) offenders.push_back("gt/" + f);
  if (!offenders.empty()) {
    std::string msg = std::string(what) + ": unmatched filenames:";
    for (const auto& o : offenders) msg += " " + o;
    throw std::runtime_error(msg);
  }
  return pairs;
}

}  // namespace detail

// Expects root/paired/{low,gt} (filename-matched), root/unpaired/low and
// optionally root/val/{low,gt}.
inline DatasetManifest scan_dataset(const std::string& root) {
  const fs::path r(root);
  if (!fs::is_directory(r)) throw std::runtime_error("scan_dataset: no such directory " + root);
  DatasetManifest m;
  m.paired = detail::match_pairs(r / "paired" / "low", r / "paired" / "gt", "paired");
  for (const auto& f : detail::sorted_files(r / "unpaired" / "low"))
    m.unpaired.push_back((r / "unpaired" / "low" / f).string());
  if (fs::is_directory(r / "val"))
    m.val = detail::match_pairs(r / "val" / "low", r / "val" / "gt", "val");
  if (m.paired.empty()) throw std::runtime_error("scan_dataset: no paired images under " + root);
  if (m.unpaired.empty())
    m.warnings.push_back("no unpaired images found; running in supervised-only mode");
  return m;
}

// line-delimited export: split <low_path> [gt_path]
inline void export_manifest(const DatasetManifest& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("export_manifest: cannot write " + path);
  for (const auto& [low, gt] : m.paired) out << "paired " << low << " " << gt << "\n";
  for (const auto& low : m.unpaired) out << "unpaired " << low << "\n";
  for (const auto& [low, gt] : m.val) out << "val " << low << " " << gt << "\n";
}

struct SynthDraw {
  double scale = 0.6;   // s in U[0.4, 0.9]
  double gamma = 2.5;   // in U[2.0, 3.5]
  double sigma = 0.01;  // noise stddev, U[0, 0.02]
  uint64_t noise_seed = 0;

  static SynthDraw sample(std::mt19937_64& rng) {
    SynthDraw d;
    d.scale = std::uniform_real_distribution<double>(0.4, 0.9)(rng);
    d.gamma = std::uniform_real_distribution<double>(2.0, 3.5)(rng);
    d.sigma = std::uniform_real_distribution<double>(0.0, 0.02)(rng);
    d.noise_seed = rng();
    return d;
  }
};

// I_low = clip((s * img)^gamma + n), deterministic per draw
template <typename T>
Tensor<T> synthesize_lowlight(const Tensor<T>& img, const SynthDraw& draw) {
  Tensor<T> out = img;
  std::mt19937_64 noise_rng(draw.noise_seed);
  std::normal_distribution<double> noise(0.0, draw.sigma);
  for (T& v : out.data) {
    double x = std::pow(draw.scale * double(v), draw.gamma);
    if (draw.sigma > 0) x += noise(noise_rng);
    v = T(std::clamp(x, 0.0, 1.0));
  }
  return out;
}

// k*90 degree counter-clockwise rotation of a [B,C,H,W] tensor
template <typename T>
Tensor<T> rotate90(const Tensor<T>& img, int k) {
  k = ((k % 4) + 4) % 4;
  if (k == 0) return img;
  const int64_t B = img.dim(0), C = img.dim(1), H = img.dim(2), W = img.dim(3);
  const int64_t Ho = (k % 2) ? W : H, Wo = (k % 2) ? H : W;
  Tensor<T> out({B, C, Ho, Wo});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t h = 0; h < H; ++h)
        for (int64_t w = 0; w < W; ++w) {
          int64_t oh, ow;
          switch (k) {
            case 1: oh = W - 1 - w; ow = h; break;
            case 2: oh = H - 1 - h; ow = W - 1 - w; break;
            default: oh = w; ow = H - 1 - h; break;
          }
          out.at4(b, c, oh, ow) = img.at4(b, c, h, w);
        }
  return out;
}

template <typename T>
Tensor<T> crop(const Tensor<T>& img, int64_t top, int64_t left, int64_t size) {
  const int64_t B = img.dim(0), C = img.dim(1);
  Tensor<T> out({B, C, size, size});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t h = 0; h < size; ++h)
        for (int64_t w = 0; w < size; ++w)
          out.at4(b, c, h, w) = img.at4(b, c, top + h, left + w);
  return out;
}

struct TrainBatch {
  Tensor<float> paired_low, paired_gt;          // [P,3,crop,crop]
  Tensor<float> unpaired_weak, unpaired_strong; // [U,3,resize,resize]
  int64_t step = 0;
  uint64_t seed = 0;
};

struct BatchSpec {
  int64_t n_paired = 8;
  int64_t n_unpaired = 8;
  int64_t crop = 256;
  mean_teacher::AugmentationPolicy policy;  // resize target for unpaired images
};

namespace detail {

// position of the j-th paired draw of global sample index g: shuffled without
// replacement within each epoch
inline size_t epoch_position(size_t count, int64_t g, uint64_t seed) {
  const int64_t epoch = g / int64_t(count);
  const int64_t pos = g % int64_t(count);
  std::vector<size_t> perm(count);
  std::iota(perm.begin(), perm.end(), size_t(0));
  std::mt19937_64 rng(mix_seed(seed, uint64_t(epoch)));
  std::shuffle(perm.begin(), perm.end(), rng);
  return perm[size_t(pos)];
}

// identical crop + k*90 rotation applied to both halves of a pair
template <typename T>
void aligned_crop_rotate(Tensor<T>* low, Tensor<T>* gt, int64_t size, std::mt19937_64& rng) {
  for (Tensor<T>* t : {low, gt}) {
    if (t->dim(2) < size || t->dim(3) < size) {
      static bool warned = false;
      if (!warned) {
        std::cerr << "warning: source image smaller than crop, resizing up\n";
        warned = true;
      }
      const int64_t H = std::max(size, t->dim(2)), W = std::max(size, t->dim(3));
      *t = kernels::bilinear_resize_nchw(*t, H, W);
    }
  }
  if (low->dim(2) != gt->dim(2) || low->dim(3) != gt->dim(3))
    throw std::runtime_error("paired images disagree on size");
  const int64_t top =
      std::uniform_int_distribution<int64_t>(0, low->dim(2) - size)(rng);
  const int64_t left =
      std::uniform_int_distribution<int64_t>(0, low->dim(3) - size)(rng);
  const int rot = int(std::uniform_int_distribution<int64_t>(0, 3)(rng));
  *low = rotate90(crop(*low, top, left, size), rot);
  *gt = rotate90(crop(*gt, top, left, size), rot);
}

}  // namespace detail

// Fully determined by (manifest, step, seed).
inline TrainBatch make_batch(const DatasetManifest& manifest, int64_t step, uint64_t seed,
                             const BatchSpec& spec) {
  TrainBatch batch;
  batch.step = step;
  batch.seed = seed;
  const int64_t P = spec.n_paired, U = spec.n_unpaired;
  batch.paired_low = Tensor<float>({P, 3, spec.crop, spec.crop});
  batch.paired_gt = Tensor<float>({P, 3, spec.crop, spec.crop});
  for (int64_t j = 0; j < P; ++j) {
    const int64_t g = step * P + j;
    const size_t idx = detail::epoch_position(manifest.paired.size(), g, seed);
    Tensor<float> low = io::load_image(manifest.paired[idx].first);
    Tensor<float> gt = io::load_image(manifest.paired[idx].second);
    std::mt19937_64 rng(mix_seed(mix_seed(seed, 0x70617200ULL), uint64_t(g)));
    detail::aligned_crop_rotate(&low, &gt, spec.crop, rng);
    std::copy(low.data.begin(), low.data.end(),
              batch.paired_low.data.begin() + j * 3 * spec.crop * spec.crop);
    std::copy(gt.data.begin(), gt.data.end(),
              batch.paired_gt.data.begin() + j * 3 * spec.crop * spec.crop);
  }
  if (U > 0) {
    if (manifest.unpaired.empty())
      throw std::runtime_error("make_batch: unpaired images requested but manifest has none");
    const int64_t rh = spec.policy.resize_h, rw = spec.policy.resize_w;
    batch.unpaired_weak = Tensor<float>({U, 3, rh, rw});
    batch.unpaired_strong = Tensor<float>({U, 3, rh, rw});
    for (int64_t j = 0; j < U; ++j) {
      const int64_t g = step * U + j;
      const size_t idx = size_t(g % int64_t(manifest.unpaired.size()));
      Tensor<float> img = io::load_image(manifest.unpaired[idx]);
      Tensor<float> weak = mean_teacher::weak_augment(img, spec.policy);
      std::mt19937_64 rng(mix_seed(mix_seed(seed, 0x756e7000ULL), uint64_t(g)));
      const auto draw = mean_teacher::RandomDraw::sample(spec.policy, rng);
      Tensor<float> strong = mean_teacher::strong_augment(img, spec.policy, {draw});
      std::copy(weak.data.begin(), weak.data.end(),
                batch.unpaired_weak.data.begin() + j * 3 * rh * rw);
      std::copy(strong.data.begin(), strong.data.end(),
                batch.unpaired_strong.data.begin() + j * 3 * rh * rw);
    }
  }
  return batch;
}

}  // namespace sllie::data
