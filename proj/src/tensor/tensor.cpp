#include "mhcnn/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>

#include "mhcnn/kernels.hpp"
#include "mhcnn/rng.hpp"

namespace mhcnn {
namespace {

std::atomic<bool> g_checked_mode{false};

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b)
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
}

}  // namespace

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

void validate_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("shape must have at least one dimension");
  for (const std::size_t d : shape)
    if (d == 0) throw ShapeError("zero dimension in shape " + to_string(shape));
}

void set_checked_mode(bool enabled) { g_checked_mode.store(enabled, std::memory_order_relaxed); }
bool checked_mode() { return g_checked_mode.load(std::memory_order_relaxed); }

template <typename T>
Tensor<T>::Tensor(Shape shape) : shape_(std::move(shape)) {
  validate_shape(shape_);
  data_.assign(numel(shape_), T{0});
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
  validate_shape(shape_);
  if (data_.size() != numel(shape_))
    throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                     to_string(shape_));
}

template <typename T>
Tensor<T> Tensor<T>::fill(Shape shape, T value) {
  Tensor t(std::move(shape));
  std::fill(t.data_.begin(), t.data_.end(), value);
  return t;
}

template <typename T>
Tensor<T> Tensor<T>::gaussian(Shape shape, double mean, double stddev, std::uint64_t seed) {
  Tensor t(std::move(shape));
  Rng rng(seed);
  for (T& v : t.data_) v = static_cast<T>(rng.gaussian(mean, stddev));
  return t;
}

template <typename T>
bool Tensor<T>::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template class Tensor<float>;
template class Tensor<double>;

namespace ops {

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T k) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * k;
  return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& t, Shape new_shape) {
  validate_shape(new_shape);
  if (numel(new_shape) != t.size())
    throw ShapeError("reshape: cannot view " + to_string(t.shape()) + " as " + to_string(new_shape));
  return Tensor<T>(std::move(new_shape), std::vector<T>(t.data().begin(), t.data().end()));
}

std::vector<std::size_t> inverse_permutation(const std::vector<std::size_t>& axes) {
  std::vector<std::size_t> inverse(axes.size());
  for (std::size_t i = 0; i < axes.size(); ++i) inverse.at(axes[i]) = i;
  return inverse;
}

template <typename T>
Tensor<T> permute(const Tensor<T>& t, const std::vector<std::size_t>& axes) {
  const std::size_t rank = t.rank();
  if (axes.size() != rank) throw ShapeError("permute: axes length does not match rank");
  std::vector<bool> seen(rank, false);
  for (const std::size_t a : axes) {
    if (a >= rank || seen[a]) throw ShapeError("permute: axes are not a permutation");
    seen[a] = true;
  }
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = t.dim(axes[i]);

  // Input strides reordered into output-axis order.
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t i = rank - 1; i > 0; --i) in_strides[i - 1] = in_strides[i] * t.dim(i);
  std::vector<std::size_t> strides(rank);
  for (std::size_t i = 0; i < rank; ++i) strides[i] = in_strides[axes[i]];

  Tensor<T> out(out_shape);
  std::vector<std::size_t> index(rank, 0);
  const std::size_t inner = out_shape[rank - 1];
  const std::size_t inner_stride = strides[rank - 1];
  for (std::size_t pos = 0; pos < out.size(); pos += inner) {
    std::size_t offset = 0;
    for (std::size_t i = 0; i + 1 < rank; ++i) offset += index[i] * strides[i];
    for (std::size_t j = 0; j < inner; ++j) out[pos + j] = t[offset + j * inner_stride];
    for (std::size_t i = rank - 1; i-- > 0;) {
      if (++index[i] < out_shape[i]) break;
      index[i] = 0;
    }
  }
  return out;
}

template <typename T>
Tensor<T> concat(std::span<const Tensor<T>> tensors, std::size_t axis) {
  if (tensors.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = tensors.front().shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& t : tensors) {
    if (t.rank() != first.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t i = 0; i < first.size(); ++i)
      if (i != axis && t.dim(i) != first[i])
        throw ShapeError("concat: dimension mismatch " + to_string(t.shape()) + " vs " +
                         to_string(first));
    out_shape[axis] += t.dim(axis);
  }
  const std::size_t outer = numel(Shape(first.begin(), first.begin() + axis));
  const std::size_t inner = numel(Shape(first.begin() + axis + 1, first.end()));
  Tensor<T> out(out_shape);
  const std::size_t out_block = out_shape[axis] * inner;
  std::size_t offset = 0;
  for (const auto& t : tensors) {
    const std::size_t block = t.dim(axis) * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(t.ptr() + o * block, block, out.ptr() + o * out_block + offset);
    offset += block;
  }
  return out;
}

template <typename T>
Tensor<T> slice(const Tensor<T>& t, std::size_t axis, std::size_t start, std::size_t length) {
  if (axis >= t.rank() || start + length > t.dim(axis) || length == 0)
    throw ShapeError("slice: range out of bounds for " + to_string(t.shape()));
  Shape out_shape = t.shape();
  out_shape[axis] = length;
  const std::size_t outer = numel(Shape(t.shape().begin(), t.shape().begin() + axis));
  const std::size_t inner = numel(Shape(t.shape().begin() + axis + 1, t.shape().end()));
  Tensor<T> out(out_shape);
  const std::size_t in_block = t.dim(axis) * inner;
  const std::size_t block = length * inner;
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(t.ptr() + o * in_block + start * inner, block, out.ptr() + o * block);
  return out;
}

template <typename T>
Tensor<T> matmul_batched(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 2 || b.rank() != a.rank()) throw ShapeError("matmul: rank mismatch");
  const std::size_t r = a.rank();
  for (std::size_t i = 0; i + 2 < r; ++i)
    if (a.dim(i) != b.dim(i))
      throw ShapeError("matmul: batch dimension mismatch " + to_string(a.shape()) + " x " +
                       to_string(b.shape()));
  const std::size_t m = a.dim(r - 2);
  const std::size_t k = a.dim(r - 1);
  const std::size_t n = b.dim(r - 1);
  if (b.dim(r - 2) != k)
    throw ShapeError("matmul: inner dimension mismatch " + to_string(a.shape()) + " x " +
                     to_string(b.shape()));
  Shape out_shape = a.shape();
  out_shape[r - 1] = n;
  Tensor<T> out(out_shape);
  kernels::matmul_batched(a.size() / (m * k), m, k, n, a.ptr(), b.ptr(), out.ptr());
  return out;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight,
                 const std::type_identity_t<Tensor<T>>* bias,
                 Conv2dParams params) {
  if (input.rank() != 4 || weight.rank() != 4) throw ShapeError("conv2d: expects rank-4 input and weight");
  if (input.dim(1) != weight.dim(1))
    throw ShapeError("conv2d: channel mismatch, input " + to_string(input.shape()) + " weight " +
                     to_string(weight.shape()));
  if (params.stride == 0) throw ShapeError("conv2d: stride must be positive");
  if (bias != nullptr && (bias->rank() != 1 || bias->dim(0) != weight.dim(0)))
    throw ShapeError("conv2d: bias must have shape [cout]");
  const kernels::ConvGeometry g{input.dim(0), input.dim(1), input.dim(2), input.dim(3), weight.dim(0),
                                weight.dim(2), weight.dim(3), params.stride, params.padding};
  if (g.out_h() <= 0 || g.out_w() <= 0) throw ShapeError("conv2d: nonpositive output size");
  Tensor<T> out({g.batch, g.out_channels, static_cast<std::size_t>(g.out_h()),
                 static_cast<std::size_t>(g.out_w())});
  kernels::conv2d_forward(g, input.ptr(), weight.ptr(), bias ? bias->ptr() : nullptr, out.ptr());
  return out;
}

template <typename T>
Tensor<T> rotate90(const Tensor<T>& t, int quarter_turns) {
  if (t.rank() != 4) throw ShapeError("rotate90: expects a rank-4 tensor");
  const int k = ((quarter_turns % 4) + 4) % 4;
  if (k == 0) return t;
  const std::size_t planes = t.dim(0) * t.dim(1);
  const std::size_t h = t.dim(2);
  const std::size_t w = t.dim(3);
  const bool swap = (k % 2) == 1;
  const std::size_t oh = swap ? w : h;
  const std::size_t ow = swap ? h : w;
  Tensor<T> out({t.dim(0), t.dim(1), oh, ow});
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = t.ptr() + p * h * w;
    T* dst = out.ptr() + p * oh * ow;
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        std::size_t si = 0, sj = 0;
        switch (k) {
          case 1: si = j; sj = w - 1 - i; break;          // counterclockwise
          case 2: si = h - 1 - i; sj = w - 1 - j; break;
          default: si = h - 1 - j; sj = i; break;         // clockwise
        }
        dst[i * ow + j] = src[si * w + sj];
      }
  }
  return out;
}

#define MHCNN_INSTANTIATE_OPS(T)                                                                   \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                      \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                      \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                      \
  template Tensor<T> scale(const Tensor<T>&, T);                                                   \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                             \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&);                   \
  template Tensor<T> concat(std::span<const Tensor<T>>, std::size_t);                              \
  template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t, std::size_t);               \
  template Tensor<T> matmul_batched(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*, Conv2dParams);   \
  template Tensor<T> rotate90(const Tensor<T>&, int);

MHCNN_INSTANTIATE_OPS(float)
MHCNN_INSTANTIATE_OPS(double)

#undef MHCNN_INSTANTIATE_OPS

}  // namespace ops
}  // namespace mhcnn
