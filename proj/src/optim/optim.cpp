#include "mhcnn/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace mhcnn::optim {

template <typename T>
double l2_loss(const Tensor<T>& predicted, const Tensor<T>& target) {
  if (predicted.shape() != target.shape())
    throw ShapeError("l2_loss: shape mismatch " + to_string(predicted.shape()) + " vs " + to_string(target.shape()));
  double acc = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const double d = static_cast<double>(predicted[i]) - static_cast<double>(target[i]);
    acc += d * d;
  }
  return acc / (2.0 * static_cast<double>(predicted.dim(0)));
}

template <typename T>
void adam_step(AdamState<T>& state, std::map<std::string, Tensor<T>>& params,
               const std::map<std::string, Tensor<T>>& grads) {
  if (grads.size() != params.size()) throw std::invalid_argument("adam: gradient set does not match parameters");
  for (const auto& [name, p] : params) {
    const auto it = grads.find(name);
    if (it == grads.end()) throw std::invalid_argument("adam: missing gradient for " + name);
    if (it->second.shape() != p.shape())
      throw ShapeError("adam: gradient shape " + to_string(it->second.shape()) + " does not match parameter " +
                       name + " " + to_string(p.shape()));
  }

  ++state.step;
  const auto& o = state.options;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(o.beta1, t);
  const double c2 = 1.0 - std::pow(o.beta2, t);
  for (auto& [name, p] : params) {
    const Tensor<T>& g = grads.at(name);
    auto& m = state.m.try_emplace(name, p.shape()).first->second;
    auto& v = state.v.try_emplace(name, p.shape()).first->second;
    T* pp = p.ptr();
    T* mp = m.ptr();
    T* vp = v.ptr();
    const T* gp = g.ptr();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = gp[i];
      const double mi = o.beta1 * mp[i] + (1.0 - o.beta1) * gi;
      const double vi = o.beta2 * vp[i] + (1.0 - o.beta2) * gi * gi;
      mp[i] = static_cast<T>(mi);
      vp[i] = static_cast<T>(vi);
      pp[i] = static_cast<T>(pp[i] - state.lr * (mi / c1) / (std::sqrt(vi / c2) + o.eps));
    }
  }
}

double LrSchedule::rate(std::size_t epoch) const {
  if (interval == 0) return initial;
  return initial * std::pow(factor, static_cast<double>(epoch / interval));
}

template double l2_loss(const Tensor<float>&, const Tensor<float>&);
template double l2_loss(const Tensor<double>&, const Tensor<double>&);
template void adam_step(AdamState<float>&, std::map<std::string, Tensor<float>>&,
                        const std::map<std::string, Tensor<float>>&);
template void adam_step(AdamState<double>&, std::map<std::string, Tensor<double>>&,
                        const std::map<std::string, Tensor<double>>&);

}  // namespace mhcnn::optim
