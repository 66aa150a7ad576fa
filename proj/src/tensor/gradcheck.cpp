#include "mhcnn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "mhcnn/rng.hpp"

namespace mhcnn::ad {
namespace {

struct Evaluation {
  double value = 0.0;
  std::uint64_t signature = 0;
};

Evaluation evaluate(const LossFunction& loss, const std::map<std::string, Tensor<double>>& params) {
  ScopedKinkProbe probe;
  Tape<double> tape(false);
  for (const auto& [name, value] : params) tape.parameter(name, value);
  const Var<double> out = loss(tape);
  if (out.value().size() != 1) throw ShapeError("gradcheck: loss must be a scalar");
  return {out.value()[0], probe.signature()};
}

std::vector<std::size_t> pick_indices(std::size_t size, std::size_t limit, std::uint64_t seed) {
  std::vector<std::size_t> idx(size);
  std::iota(idx.begin(), idx.end(), 0);
  if (limit == 0 || limit >= size) return idx;
  Rng rng(seed);
  for (std::size_t i = 0; i < limit; ++i) std::swap(idx[i], idx[i + rng.below(size - i)]);
  idx.resize(limit);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

GradcheckResult gradcheck(const LossFunction& loss, const std::map<std::string, Tensor<double>>& params,
                          const GradcheckOptions& options) {
  if (!(options.eps > 0.0)) throw std::invalid_argument("gradcheck: eps must be positive");

  const Evaluation base = evaluate(loss, params);
  const Evaluation again = evaluate(loss, params);
  if (base.value != again.value || base.signature != again.signature)
    throw NonDeterministicError("gradcheck: forward function is not deterministic");

  std::map<std::string, Tensor<double>> analytic;
  {
    Tape<double> tape(true);
    for (const auto& [name, value] : params) tape.parameter(name, value);
    analytic = tape.backward(loss(tape));
  }

  GradcheckResult result;
  auto work = params;
  for (auto& [name, tensor] : work) {
    const Tensor<double>& grad = analytic.at(name);
    const auto indices = pick_indices(tensor.size(), options.max_elements_per_tensor,
                                      mix_seed(options.seed, hash_name(name)));
    for (const std::size_t i : indices) {
      const double original = tensor[i];
      double eps = options.eps;
      Evaluation plus, minus;
      for (int attempt = 0;; ++attempt) {
        tensor[i] = original + eps;
        plus = evaluate(loss, work);
        tensor[i] = original - eps;
        minus = evaluate(loss, work);
        tensor[i] = original;
        const bool smooth = plus.signature == base.signature && minus.signature == base.signature;
        if (smooth || attempt >= options.max_refinements) break;
        eps /= 10.0;
        ++result.refined;
      }
      const double numeric = (plus.value - minus.value) / (2.0 * eps);
      const double a = grad[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double rel = std::abs(a - numeric) / denom;
      ++result.checked;
      if (result.worst_parameter.empty() || rel > result.max_relative_error) {
        result.max_relative_error = rel;
        result.worst_parameter = name;
        result.worst_index = i;
        result.worst_analytic = a;
        result.worst_numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace mhcnn::ad
