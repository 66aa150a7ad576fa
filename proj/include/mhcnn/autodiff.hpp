#pragma once

// Reverse-mode automatic differentiation over Tensor<T>.
//
// A Tape records every op whose inputs require gradients, in execution order.
// Values are shared between the tape and the Var handles, so a tape that is
// not recording (inference) keeps nothing alive beyond the caller's Vars.

#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "mhcnn/tensor.hpp"

namespace mhcnn::ad {

template <typename T>
class Tape;

template <typename T>
class Var {
 public:
  static constexpr std::size_t kUntracked = std::numeric_limits<std::size_t>::max();

  Var() = default;

  const Tensor<T>& value() const { return *value_; }
  const Shape& shape() const { return value_->shape(); }
  std::size_t dim(std::size_t axis) const { return value_->dim(axis); }
  Tape<T>* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool tracked() const { return id_ != kUntracked; }
  bool valid() const { return value_ != nullptr; }

 private:
  friend class Tape<T>;
  Var(Tape<T>* tape, std::size_t id, std::shared_ptr<const Tensor<T>> value)
      : tape_(tape), id_(id), value_(std::move(value)) {}

  Tape<T>* tape_ = nullptr;
  std::size_t id_ = kUntracked;
  std::shared_ptr<const Tensor<T>> value_;
};

template <typename T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor<T>& grad_out)>;

  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }

  Var<T> constant(Tensor<T> value);
  // Registers a named trainable leaf. Names are unique per tape.
  Var<T> parameter(const std::string& name, Tensor<T> value);
  Var<T> param(const std::string& name) const;
  bool has_param(const std::string& name) const { return by_name_.contains(name); }
  const std::vector<std::string>& parameter_names() const { return param_names_; }

  // Appends an op result. When no input requires a gradient (or the tape is
  // not recording) the result is returned untracked and fn is dropped.
  Var<T> record(Tensor<T> value, const std::vector<Var<T>>& inputs, Backward fn);
  Var<T> record(std::shared_ptr<const Tensor<T>> value, const std::vector<Var<T>>& inputs, Backward fn);

  bool requires_grad(const Var<T>& v) const;
  // Adds g into v's gradient; ignored for vars that do not require one.
  void accumulate(const Var<T>& v, const Tensor<T>& g);

  // Gradients for every registered parameter, shape-matching each leaf.
  // Parameters the loss does not depend on get zeros.
  std::map<std::string, Tensor<T>> backward(const Var<T>& loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    std::shared_ptr<const Tensor<T>> value;
    Backward backward;
    bool requires_grad = false;
  };

  bool recording_;
  std::deque<Node> nodes_;
  std::vector<Tensor<T>> grads_;
  std::vector<std::string> param_names_;
  std::unordered_map<std::string, std::size_t> by_name_;
};

// Records the sign pattern of every activation input while active, so the
// gradient checker can tell when a finite-difference step crossed a kink.
class ScopedKinkProbe {
 public:
  ScopedKinkProbe();
  ~ScopedKinkProbe();
  ScopedKinkProbe(const ScopedKinkProbe&) = delete;
  ScopedKinkProbe& operator=(const ScopedKinkProbe&) = delete;

  std::uint64_t signature() const { return hash_; }
  void observe(const double* values, std::size_t n);
  void observe(const float* values, std::size_t n);

 private:
  ScopedKinkProbe* previous_;
  std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

// Ops. Every input Var must belong to the same tape.
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, T k);
template <typename T> Var<T> reshape(const Var<T>& a, Shape shape);
template <typename T> Var<T> permute(const Var<T>& a, const std::vector<std::size_t>& axes);
template <typename T> Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis);
template <typename T> Var<T> rotate90(const Var<T>& a, int quarter_turns);
template <typename T> Var<T> matmul(const Var<T>& a, const Var<T>& b);
// bias may be null.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const std::type_identity_t<Var<T>>* bias, ops::Conv2dParams params);
template <typename T> Var<T> relu(const Var<T>& x);
// x (b, c, h, w), slope (c): one learnable negative slope per channel.
template <typename T> Var<T> prelu(const Var<T>& x, const Var<T>& slope);
template <typename T> Var<T> sigmoid(const Var<T>& x);
template <typename T> Var<T> sum(const Var<T>& x);

struct BatchNormOptions {
  bool training = true;
  double momentum = 0.1;
  double eps = 1e-5;
};

// Per-channel batch norm over (b, h, w). In training mode the batch statistics
// are used and the running estimates (unbiased variance) are updated in place.
template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, Tensor<T>& running_mean,
                  Tensor<T>& running_var, BatchNormOptions options);

// Standardizes each (dim0, dim1) slice of a rank-4 tensor over its last two
// axes. No affine parameters.
template <typename T> Var<T> instance_norm(const Var<T>& x, double eps);

// (b, c, h, w) -> (b, c)
template <typename T> Var<T> global_avg_pool(const Var<T>& x);
// 1-D convolution along the channel axis of a (b, c) tensor, odd kernel,
// zero padding (k - 1) / 2, no bias.
template <typename T> Var<T> channel_conv1d(const Var<T>& g, const Var<T>& kernel);
// x (b, c, h, w) scaled by s (b, c).
template <typename T> Var<T> scale_channels(const Var<T>& x, const Var<T>& s);

// Sum of squared differences over all elements divided by 2N, N = dim 0.
template <typename T> Var<T> l2_loss(const Var<T>& predicted, const Var<T>& target);

template <typename T> Var<T> operator+(const Var<T>& a, const Var<T>& b) { return add(a, b); }
template <typename T> Var<T> operator-(const Var<T>& a, const Var<T>& b) { return sub(a, b); }
template <typename T> Var<T> operator*(const Var<T>& a, const Var<T>& b) { return mul(a, b); }

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace mhcnn::ad
