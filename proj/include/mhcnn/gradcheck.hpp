#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>

#include "mhcnn/autodiff.hpp"

namespace mhcnn::ad {

class NonDeterministicError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GradcheckOptions {
  double eps = 1e-4;
  // 0 checks every element; otherwise a seeded sample of this many elements
  // per parameter tensor.
  std::size_t max_elements_per_tensor = 0;
  std::uint64_t seed = 0;
  // When a +/- eps step flips an activation sign the difference quotient is
  // taken across a kink; eps is divided by 10 up to this many times.
  int max_refinements = 4;
};

struct GradcheckResult {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
  std::size_t refined = 0;
};

// Builds the scalar loss on a tape whose parameters are already registered.
using LossFunction = std::function<Var<double>(Tape<double>&)>;

// Central-difference check of tape gradients, (f(p + eps) - f(p - eps)) / 2eps,
// with relative error |a - n| / max(|a|, |n|, 1e-8).
// Throws NonDeterministicError when two baseline evaluations differ.
GradcheckResult gradcheck(const LossFunction& loss, const std::map<std::string, Tensor<double>>& params,
                          const GradcheckOptions& options = {});

}  // namespace mhcnn::ad
