#pragma once

// PSNR and single-scale SSIM on [0, 1] images.

#include <string>
#include <vector>

#include "mhcnn/tensor.hpp"

namespace mhcnn::metrics {

inline constexpr double kPsnrCap = 100.0;

// 10 log10(1 / MSE) after clamping both arguments to [0, 1]. MSE is taken
// jointly over all elements, so color images pool their channels. Identical
// inputs report kPsnrCap.
template <typename T>
double psnr(const Tensor<T>& reference, const Tensor<T>& test);

// Unclamped variant for noise-model checks.
template <typename T>
double psnr_unclamped(const Tensor<T>& reference, const Tensor<T>& test);

// (h, w) or (c, h, w); color is reduced to its channel mean first. 11x11
// Gaussian window (std 1.5), K1 = 0.01, K2 = 0.03, dynamic range 1, averaged
// over valid window positions. Inputs are clamped to [0, 1].
template <typename T>
double ssim(const Tensor<T>& reference, const Tensor<T>& test);

struct MetricRow {
  std::string name;
  double psnr_db = 0.0;
  double ssim = 0.0;
};

struct MetricReport {
  std::vector<MetricRow> rows;

  void add(std::string name, double psnr_db, double ssim_value) {
    rows.push_back({std::move(name), psnr_db, ssim_value});
  }
  double mean_psnr() const;
  double mean_ssim() const;
};

}  // namespace mhcnn::metrics
