#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <unistd.h>

#include "mhcnn/autodiff.hpp"
#include "mhcnn/rng.hpp"
#include "mhcnn/tensor.hpp"

namespace mhcnn::test_support {

template <typename T = double>
Tensor<T> random_tensor(Shape shape, std::uint64_t seed, double stddev = 1.0) {
  return Tensor<T>::gaussian(std::move(shape), 0.0, stddev, seed);
}

// sum(y * R) with a fixed random R: a generic scalar probe of y whose
// gradient w.r.t. y is R.
template <typename T>
ad::Var<T> weighted_sum(const ad::Var<T>& y, std::uint64_t seed) {
  auto& tape = *y.tape();
  return ad::sum(ad::mul(y, tape.constant(random_tensor<T>(y.shape(), seed ^ 0xabcdefULL))));
}

inline double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double max_abs_diff(const Tensor<float>& a, const Tensor<float>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, static_cast<double>(std::abs(a[i] - b[i])));
  return m;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("mhcnn_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter()++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  static int& counter() {
    static int n = 0;
    return n;
  }
  std::filesystem::path path_;
};

}  // namespace mhcnn::test_support
