// Naive reference loops. Deliberately share no code with kernels.cpp: these
// are the oracles the parallel kernels are tested against.

#include "mhcnn/kernels.hpp"

namespace mhcnn::kernels::serial {

template <typename T>
void gemm(bool transpose_a, bool transpose_b, std::size_t m, std::size_t n, std::size_t k,
          const T* a, std::size_t lda, const T* b, std::size_t ldb, T* c, std::size_t ldc,
          bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T sum{0};
      for (std::size_t p = 0; p < k; ++p) {
        const T av = transpose_a ? a[p * lda + i] : a[i * lda + p];
        const T bv = transpose_b ? b[j * ldb + p] : b[p * ldb + j];
        sum += av * bv;
      }
      c[i * ldc + j] = accumulate ? c[i * ldc + j] + sum : sum;
    }
  }
}

template <typename T>
void matmul_batched(std::size_t batch, std::size_t m, std::size_t k, std::size_t n, const T* a,
                    const T* b, T* c) {
  for (std::size_t s = 0; s < batch; ++s)
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        T sum{0};
        for (std::size_t p = 0; p < k; ++p) sum += a[(s * m + i) * k + p] * b[(s * k + p) * n + j];
        c[(s * m + i) * n + j] = sum;
      }
}

namespace {

// Input sample under zero padding; returns false outside the image.
bool input_index(const ConvGeometry& g, std::size_t oy, std::size_t ox, std::size_t dy,
                 std::size_t dx, std::size_t& iy, std::size_t& ix) {
  const long y = static_cast<long>(oy * g.stride + dy) - static_cast<long>(g.padding);
  const long x = static_cast<long>(ox * g.stride + dx) - static_cast<long>(g.padding);
  if (y < 0 || x < 0 || y >= static_cast<long>(g.height) || x >= static_cast<long>(g.width))
    return false;
  iy = static_cast<std::size_t>(y);
  ix = static_cast<std::size_t>(x);
  return true;
}

}  // namespace

template <typename T>
void conv2d_forward(const ConvGeometry& g, const T* input, const T* weight, const T* bias, T* output) {
  const auto oh = static_cast<std::size_t>(g.out_h());
  const auto ow = static_cast<std::size_t>(g.out_w());
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t co = 0; co < g.out_channels; ++co)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          T sum = bias != nullptr ? bias[co] : T{0};
          for (std::size_t ci = 0; ci < g.in_channels; ++ci)
            for (std::size_t dy = 0; dy < g.kernel_h; ++dy)
              for (std::size_t dx = 0; dx < g.kernel_w; ++dx) {
                std::size_t iy = 0, ix = 0;
                if (!input_index(g, oy, ox, dy, dx, iy, ix)) continue;
                sum += weight[((co * g.in_channels + ci) * g.kernel_h + dy) * g.kernel_w + dx] *
                       input[((n * g.in_channels + ci) * g.height + iy) * g.width + ix];
              }
          output[((n * g.out_channels + co) * oh + oy) * ow + ox] = sum;
        }
}

template <typename T>
void conv2d_backward_input(const ConvGeometry& g, const T* weight, const T* d_output, T* d_input) {
  const auto oh = static_cast<std::size_t>(g.out_h());
  const auto ow = static_cast<std::size_t>(g.out_w());
  for (std::size_t i = 0; i < g.batch * g.in_channels * g.height * g.width; ++i) d_input[i] = T{0};
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t co = 0; co < g.out_channels; ++co)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          const T gy = d_output[((n * g.out_channels + co) * oh + oy) * ow + ox];
          for (std::size_t ci = 0; ci < g.in_channels; ++ci)
            for (std::size_t dy = 0; dy < g.kernel_h; ++dy)
              for (std::size_t dx = 0; dx < g.kernel_w; ++dx) {
                std::size_t iy = 0, ix = 0;
                if (!input_index(g, oy, ox, dy, dx, iy, ix)) continue;
                d_input[((n * g.in_channels + ci) * g.height + iy) * g.width + ix] +=
                    gy * weight[((co * g.in_channels + ci) * g.kernel_h + dy) * g.kernel_w + dx];
              }
        }
}

template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, const T* input, const T* d_output, T* d_weight,
                            T* d_bias) {
  const auto oh = static_cast<std::size_t>(g.out_h());
  const auto ow = static_cast<std::size_t>(g.out_w());
  for (std::size_t i = 0; i < g.weight_size(); ++i) d_weight[i] = T{0};
  if (d_bias != nullptr)
    for (std::size_t co = 0; co < g.out_channels; ++co) d_bias[co] = T{0};
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t co = 0; co < g.out_channels; ++co)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          const T gy = d_output[((n * g.out_channels + co) * oh + oy) * ow + ox];
          if (d_bias != nullptr) d_bias[co] += gy;
          for (std::size_t ci = 0; ci < g.in_channels; ++ci)
            for (std::size_t dy = 0; dy < g.kernel_h; ++dy)
              for (std::size_t dx = 0; dx < g.kernel_w; ++dx) {
                std::size_t iy = 0, ix = 0;
                if (!input_index(g, oy, ox, dy, dx, iy, ix)) continue;
                d_weight[((co * g.in_channels + ci) * g.kernel_h + dy) * g.kernel_w + dx] +=
                    gy * input[((n * g.in_channels + ci) * g.height + iy) * g.width + ix];
              }
        }
}

#define MHCNN_INSTANTIATE_SERIAL(T)                                                               \
  template void gemm<T>(bool, bool, std::size_t, std::size_t, std::size_t, const T*, std::size_t, \
                        const T*, std::size_t, T*, std::size_t, bool);                            \
  template void matmul_batched<T>(std::size_t, std::size_t, std::size_t, std::size_t, const T*,   \
                                  const T*, T*);                                                  \
  template void conv2d_forward<T>(const ConvGeometry&, const T*, const T*, const T*, T*);         \
  template void conv2d_backward_input<T>(const ConvGeometry&, const T*, const T*, T*);            \
  template void conv2d_backward_weight<T>(const ConvGeometry&, const T*, const T*, T*, T*);

MHCNN_INSTANTIATE_SERIAL(float)
MHCNN_INSTANTIATE_SERIAL(double)

#undef MHCNN_INSTANTIATE_SERIAL

}  // namespace mhcnn::kernels::serial
