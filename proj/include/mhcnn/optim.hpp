#pragma once

// Training objective, Adam, and the learning-rate schedule.

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>

#include "mhcnn/autodiff.hpp"
#include "mhcnn/tensor.hpp"

namespace mhcnn::optim {

// Differentiable form lives in ad::l2_loss; this is the plain value.
// sum((predicted - target)^2) / 2N with N = dim 0.
template <typename T>
double l2_loss(const Tensor<T>& predicted, const Tensor<T>& target);

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  std::map<std::string, Tensor<T>> m;
  std::map<std::string, Tensor<T>> v;
  std::uint64_t step = 0;
  double lr = 1e-4;
  AdamOptions options;
};

// One bias-corrected Adam update. grads must cover exactly the keys of params
// with matching shapes; moments are created on first use.
template <typename T>
void adam_step(AdamState<T>& state, std::map<std::string, Tensor<T>>& params,
               const std::map<std::string, Tensor<T>>& grads);

struct LrSchedule {
  double initial = 1e-4;
  double factor = 0.5;
  std::size_t interval = 30;

  // initial * factor^floor(epoch / interval)
  double rate(std::size_t epoch) const;
};

}  // namespace mhcnn::optim
