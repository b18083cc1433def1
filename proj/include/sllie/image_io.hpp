#pragma once

#include <opencv2/imgcodecs.hpp>

#include "sllie/tensor.hpp"

namespace sllie::io {

// 8-bit PNG/JPEG -> [1,3,H,W] float in [0,1], RGB order
inline Tensor<float> load_image(const std::string& path) {
  cv::Mat img = cv::imread(path, cv::IMREAD_COLOR);
  if (img.empty()) throw std::runtime_error("load_image: cannot read " + path);
  const int64_t H = img.rows, W = img.cols;
  Tensor<float> t({1, 3, H, W});
  for (int64_t h = 0; h < H; ++h) {
    const cv::Vec3b* row = img.ptr<cv::Vec3b>(int(h));
    for (int64_t w = 0; w < W; ++w) {
      // OpenCV loads BGR
      t.at4(0, 0, h, w) = float(row[w][2]) / 255.0f;
      t.at4(0, 1, h, w) = float(row[w][1]) / 255.0f;
      t.at4(0, 2, h, w) = float(row[w][0]) / 255.0f;
    }
  }
  return t;
}

inline void save_image(const std::string& path, const Tensor<float>& t) {
  if (t.dim(0) != 1 || t.dim(1) != 3)
    throw std::invalid_argument("save_image: [1,3,H,W] tensor expected");
  const int64_t H = t.dim(2), W = t.dim(3);
  cv::Mat img(int(H), int(W), CV_8UC3);
  for (int64_t h = 0; h < H; ++h) {
    cv::Vec3b* row = img.ptr<cv::Vec3b>(int(h));
    for (int64_t w = 0; w < W; ++w) {
      auto q = [&](int64_t c) {
        return uchar(std::lround(std::clamp(t.at4(0, c, h, w), 0.0f, 1.0f) * 255.0f));
      };
      row[w] = cv::Vec3b(q(2), q(1), q(0));
    }
  }
  if (!cv::imwrite(path, img)) throw std::runtime_error("save_image: cannot write " + path);
}

}  // namespace sllie::io
