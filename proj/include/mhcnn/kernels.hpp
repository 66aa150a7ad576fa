#pragma once

// Compute kernels behind the tensor ops. The top-level functions are the
// OpenMP-parallel versions used everywhere; kernels::serial holds the naive
// reference loops used by the tests and the benchmark.

#include <cstddef>

namespace mhcnn::kernels {

struct ConvGeometry {
  std::size_t batch = 1;
  std::size_t in_channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t out_channels = 1;
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;

  // Signed so that a too-small input shows up as a nonpositive size.
  long out_h() const {
    return (static_cast<long>(height) + 2 * static_cast<long>(padding) - static_cast<long>(kernel_h)) /
               static_cast<long>(stride) + 1;
  }
  long out_w() const {
    return (static_cast<long>(width) + 2 * static_cast<long>(padding) - static_cast<long>(kernel_w)) /
               static_cast<long>(stride) + 1;
  }
  std::size_t patch_size() const { return in_channels * kernel_h * kernel_w; }
  std::size_t weight_size() const { return out_channels * patch_size(); }
};

// C(m x n) = op(A) * op(B), or += when accumulate is set. Row-major with
// explicit leading dimensions. op(A) is m x k.
template <typename T>
void gemm(bool transpose_a, bool transpose_b, std::size_t m, std::size_t n, std::size_t k,
          const T* a, std::size_t lda, const T* b, std::size_t ldb, T* c, std::size_t ldc,
          bool accumulate);

// a (batch, m, k), b (batch, k, n) -> c (batch, m, n)
template <typename T>
void matmul_batched(std::size_t batch, std::size_t m, std::size_t k, std::size_t n, const T* a,
                    const T* b, T* c);

// bias may be null.
template <typename T>
void conv2d_forward(const ConvGeometry& g, const T* input, const T* weight, const T* bias, T* output);

// Writes (not accumulates) d_input.
template <typename T>
void conv2d_backward_input(const ConvGeometry& g, const T* weight, const T* d_output, T* d_input);

// Writes d_weight, and d_bias when non-null. The batch reduction runs in
// image order so results do not depend on the thread count.
template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, const T* input, const T* d_output, T* d_weight,
                            T* d_bias);

namespace serial {

template <typename T>
void gemm(bool transpose_a, bool transpose_b, std::size_t m, std::size_t n, std::size_t k,
          const T* a, std::size_t lda, const T* b, std::size_t ldb, T* c, std::size_t ldc,
          bool accumulate);

template <typename T>
void matmul_batched(std::size_t batch, std::size_t m, std::size_t k, std::size_t n, const T* a,
                    const T* b, T* c);

template <typename T>
void conv2d_forward(const ConvGeometry& g, const T* input, const T* weight, const T* bias, T* output);

template <typename T>
void conv2d_backward_input(const ConvGeometry& g, const T* weight, const T* d_output, T* d_input);

template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, const T* input, const T* d_output, T* d_weight,
                            T* d_bias);

}  // namespace serial

}  // namespace mhcnn::kernels
