#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace mhcnn {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);
// Throws ShapeError on an empty shape or a zero dimension.
void validate_shape(const Shape& shape);

// When enabled, autodiff ops reject NaN/Inf in the values they produce.
void set_checked_mode(bool enabled);
bool checked_mode();

/// Dense row-major array. Value type: copies are deep, and ops never mutate
/// their inputs.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<T> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor fill(Shape shape, T value);
  static Tensor gaussian(Shape shape, double mean, double stddev, std::uint64_t seed);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  T* ptr() { return data_.data(); }
  const T* ptr() const { return data_.data(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // Row-major index for rank-4 tensors.
  T& at(std::size_t i0, std::size_t i1, std::size_t i2, std::size_t i3) {
    return data_[((i0 * shape_[1] + i1) * shape_[2] + i2) * shape_[3] + i3];
  }
  const T& at(std::size_t i0, std::size_t i1, std::size_t i2, std::size_t i3) const {
    return data_[((i0 * shape_[1] + i1) * shape_[2] + i2) * shape_[3] + i3];
  }

  bool all_finite() const;

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

// Value-level operations. The autodiff layer wraps these with gradient rules.
namespace ops {

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T k);

// Validates element counts only; the flat data is reused unchanged.
template <typename T> Tensor<T> reshape(const Tensor<T>& t, Shape new_shape);
template <typename T> Tensor<T> permute(const Tensor<T>& t, const std::vector<std::size_t>& axes);
std::vector<std::size_t> inverse_permutation(const std::vector<std::size_t>& axes);

template <typename T> Tensor<T> concat(std::span<const Tensor<T>> tensors, std::size_t axis);
// [start, start + length) along axis.
template <typename T>
Tensor<T> slice(const Tensor<T>& t, std::size_t axis, std::size_t start, std::size_t length);

// (..., m, k) x (..., k, n) -> (..., m, n) with identical leading dims.
template <typename T> Tensor<T> matmul_batched(const Tensor<T>& a, const Tensor<T>& b);

struct Conv2dParams {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

// input (b, cin, h, w), weight (cout, cin, kh, kw), bias (cout) or empty.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const std::type_identity_t<Tensor<T>>* bias,
                 Conv2dParams params);

// Counterclockwise quarter turns of the last two axes of a rank-4 tensor.
template <typename T> Tensor<T> rotate90(const Tensor<T>& t, int quarter_turns);

}  // namespace ops

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace mhcnn
