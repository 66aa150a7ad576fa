#include "mhcnn/kernels.hpp"

#include <algorithm>
#include <cstring>
#include <vector>

namespace mhcnn::kernels {
namespace {

constexpr std::size_t kColumnBlock = 256;
// Upper bounds on im2col buffer elements per image; larger outputs are
// processed in bands of output rows. Forward and input-gradient bands stay
// L2-sized; the weight gradient wants long dot products instead.
constexpr std::size_t kIm2colBudget = std::size_t{1} << 16;
constexpr std::size_t kIm2colWeightBudget = std::size_t{1} << 20;
constexpr std::size_t kParallelFlops = std::size_t{1} << 16;

// Register-blocked tile: a 4 x kTileCols block of C stays in registers for
// the whole k loop. Each c element accumulates in ascending k.
template <typename T>
constexpr std::size_t kTileCols = 64 / sizeof(T) * 2;

template <typename T>
void gemm_nn_tile(std::size_t k, const T* a, std::size_t lda, const T* b, std::size_t ldb, T* c,
                  std::size_t ldc, bool accumulate) {
  constexpr std::size_t nc = kTileCols<T>;
  T acc[4][nc];
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t j = 0; j < nc; ++j) acc[r][j] = accumulate ? c[r * ldc + j] : T{0};
  for (std::size_t p = 0; p < k; ++p) {
    const T* brow = b + p * ldb;
    const T v0 = a[p], v1 = a[lda + p], v2 = a[2 * lda + p], v3 = a[3 * lda + p];
#pragma omp simd
    for (std::size_t j = 0; j < nc; ++j) {
      const T bv = brow[j];
      acc[0][j] += v0 * bv;
      acc[1][j] += v1 * bv;
      acc[2][j] += v2 * bv;
      acc[3][j] += v3 * bv;
    }
  }
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t j = 0; j < nc; ++j) c[r * ldc + j] = acc[r][j];
}

// C[:, j0:j0+nb] over all m rows. Full tiles go through gemm_nn_tile; the
// ragged edges stream rows of C through L1.
template <typename T>
void gemm_nn_panel(std::size_t m, std::size_t nb, std::size_t k, const T* a, std::size_t lda,
                   const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
  constexpr std::size_t nc = kTileCols<T>;
  const std::size_t full = nb / nc * nc;
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    for (std::size_t j = 0; j < full; j += nc)
      gemm_nn_tile(k, a + i * lda, lda, b + j, ldb, c + i * ldc + j, ldc, accumulate);
    if (full == nb) continue;
    const std::size_t rest = nb - full;
    T* c0 = c + i * ldc + full;
    T* c1 = c0 + ldc;
    T* c2 = c1 + ldc;
    T* c3 = c2 + ldc;
    if (!accumulate) {
      std::fill_n(c0, rest, T{0});
      std::fill_n(c1, rest, T{0});
      std::fill_n(c2, rest, T{0});
      std::fill_n(c3, rest, T{0});
    }
    const T* a0 = a + i * lda;
    const T* a1 = a0 + lda;
    const T* a2 = a1 + lda;
    const T* a3 = a2 + lda;
    for (std::size_t p = 0; p < k; ++p) {
      const T* brow = b + p * ldb + full;
      const T v0 = a0[p], v1 = a1[p], v2 = a2[p], v3 = a3[p];
#pragma omp simd
      for (std::size_t j = 0; j < rest; ++j) {
        const T bv = brow[j];
        c0[j] += v0 * bv;
        c1[j] += v1 * bv;
        c2[j] += v2 * bv;
        c3[j] += v3 * bv;
      }
    }
  }
  for (; i < m; ++i) {
    T* c0 = c + i * ldc;
    if (!accumulate) std::fill_n(c0, nb, T{0});
    const T* a0 = a + i * lda;
    for (std::size_t p = 0; p < k; ++p) {
      const T* brow = b + p * ldb;
      const T v0 = a0[p];
#pragma omp simd
      for (std::size_t j = 0; j < nb; ++j) c0[j] += v0 * brow[j];
    }
  }
}

// C = A * B^T with both operands row-contiguous along k: every c element is
// a dot product. 4 x 4 blocks share the loads.
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b,
             std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
  const bool parallel = m * n * k >= kParallelFlops && m >= 8;
#pragma omp parallel for schedule(static) if (parallel)
  for (std::size_t i0 = 0; i0 < m; i0 += 4) {
    const std::size_t mi = std::min<std::size_t>(4, m - i0);
    for (std::size_t j0 = 0; j0 < n; j0 += 4) {
      const std::size_t nj = std::min<std::size_t>(4, n - j0);
      if (mi == 4 && nj == 4) {
        const T *a0 = a + i0 * lda, *a1 = a0 + lda, *a2 = a1 + lda, *a3 = a2 + lda;
        const T *b0 = b + j0 * ldb, *b1 = b0 + ldb, *b2 = b1 + ldb, *b3 = b2 + ldb;
        T s00{0}, s01{0}, s02{0}, s03{0}, s10{0}, s11{0}, s12{0}, s13{0};
        T s20{0}, s21{0}, s22{0}, s23{0}, s30{0}, s31{0}, s32{0}, s33{0};
#pragma omp simd reduction(+ : s00, s01, s02, s03, s10, s11, s12, s13, s20, s21, s22, s23, s30, s31, s32, s33)
        for (std::size_t p = 0; p < k; ++p) {
          const T x0 = a0[p], x1 = a1[p], x2 = a2[p], x3 = a3[p];
          const T y0 = b0[p], y1 = b1[p], y2 = b2[p], y3 = b3[p];
          s00 += x0 * y0, s01 += x0 * y1, s02 += x0 * y2, s03 += x0 * y3;
          s10 += x1 * y0, s11 += x1 * y1, s12 += x1 * y2, s13 += x1 * y3;
          s20 += x2 * y0, s21 += x2 * y1, s22 += x2 * y2, s23 += x2 * y3;
          s30 += x3 * y0, s31 += x3 * y1, s32 += x3 * y2, s33 += x3 * y3;
        }
        const T s[4][4] = {{s00, s01, s02, s03}, {s10, s11, s12, s13}, {s20, s21, s22, s23}, {s30, s31, s32, s33}};
        for (std::size_t r = 0; r < 4; ++r)
          for (std::size_t q = 0; q < 4; ++q) {
            T& dst = c[(i0 + r) * ldc + j0 + q];
            dst = accumulate ? dst + s[r][q] : s[r][q];
          }
        continue;
      }
      for (std::size_t r = 0; r < mi; ++r)
        for (std::size_t q = 0; q < nj; ++q) {
          const T* ar = a + (i0 + r) * lda;
          const T* bq = b + (j0 + q) * ldb;
          T acc{0};
#pragma omp simd reduction(+ : acc)
          for (std::size_t p = 0; p < k; ++p) acc += ar[p] * bq[p];
          T& dst = c[(i0 + r) * ldc + j0 + q];
          dst = accumulate ? dst + acc : acc;
        }
    }
  }
}

template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b,
             std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
  const std::size_t blocks = (n + kColumnBlock - 1) / kColumnBlock;
  const bool parallel = m * n * k >= kParallelFlops && blocks > 1;
#pragma omp parallel for schedule(static) if (parallel)
  for (std::size_t blk = 0; blk < blocks; ++blk) {
    const std::size_t j0 = blk * kColumnBlock;
    const std::size_t nb = std::min(kColumnBlock, n - j0);
    gemm_nn_panel(m, nb, k, a, lda, b + j0, ldb, c + j0, ldc, accumulate);
  }
}

// rows x cols (leading dim ld) -> cols x rows contiguous
template <typename T>
std::vector<T> transposed(const T* src, std::size_t rows, std::size_t cols, std::size_t ld) {
  std::vector<T> out(rows * cols);
  constexpr std::size_t tile = 32;
  for (std::size_t r0 = 0; r0 < rows; r0 += tile) {
    for (std::size_t c0 = 0; c0 < cols; c0 += tile) {
      const std::size_t r1 = std::min(rows, r0 + tile);
      const std::size_t c1 = std::min(cols, c0 + tile);
      for (std::size_t r = r0; r < r1; ++r)
        for (std::size_t cc = c0; cc < c1; ++cc) out[cc * rows + r] = src[r * ld + cc];
    }
  }
  return out;
}

bool is_pointwise(const ConvGeometry& g) {
  return g.kernel_h == 1 && g.kernel_w == 1 && g.stride == 1 && g.padding == 0;
}

std::size_t band_rows(const ConvGeometry& g, std::size_t budget = kIm2colBudget) {
  const auto ow = static_cast<std::size_t>(g.out_w());
  const std::size_t per_row = std::max<std::size_t>(1, g.patch_size() * ow);
  return std::clamp<std::size_t>(budget / per_row, 1, static_cast<std::size_t>(g.out_h()));
}

// Output columns [lo, hi) of one kernel tap read inside the image row.
struct ValidRange {
  std::size_t lo;
  std::size_t hi;
};

ValidRange valid_columns(const ConvGeometry& g, std::size_t dx, std::size_t ow) {
  const long pad = static_cast<long>(g.padding);
  const long stride = static_cast<long>(g.stride);
  const long w = static_cast<long>(g.width);
  const long d = static_cast<long>(dx);
  // ix = ox * stride - pad + dx must lie in [0, w).
  long lo = pad - d > 0 ? (pad - d + stride - 1) / stride : 0;
  long hi = w + pad - d > 0 ? (w + pad - d + stride - 1) / stride : 0;
  lo = std::min<long>(lo, static_cast<long>(ow));
  hi = std::clamp<long>(hi, lo, static_cast<long>(ow));
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

// cols[(ci*kh + dy)*kw + dx][(oy - oy0)*ow + ox]
template <typename T>
void im2col_band(const ConvGeometry& g, const T* image, std::size_t oy0, std::size_t rows, T* cols) {
  const auto ow = static_cast<std::size_t>(g.out_w());
  const std::size_t ncols = rows * ow;
  const long h = static_cast<long>(g.height);
  const long pad = static_cast<long>(g.padding);
  const std::size_t stride = g.stride;
  std::size_t row = 0;
  for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
    const T* plane = image + ci * g.height * g.width;
    for (std::size_t dy = 0; dy < g.kernel_h; ++dy) {
      for (std::size_t dx = 0; dx < g.kernel_w; ++dx, ++row) {
        const auto [lo, hi] = valid_columns(g, dx, ow);
        T* dst = cols + row * ncols;
        for (std::size_t r = 0; r < rows; ++r) {
          const long iy = static_cast<long>((oy0 + r) * stride) - pad + static_cast<long>(dy);
          T* out = dst + r * ow;
          if (iy < 0 || iy >= h) {
            std::fill_n(out, ow, T{0});
            continue;
          }
          // First source element for ox = lo.
          const T* src = plane + iy * static_cast<long>(g.width) + static_cast<long>(lo * stride) - pad +
                         static_cast<long>(dx);
          std::fill_n(out, lo, T{0});
          if (stride == 1) {
            std::copy_n(src, hi - lo, out + lo);
          } else {
            for (std::size_t ox = lo; ox < hi; ++ox) out[ox] = src[(ox - lo) * stride];
          }
          std::fill(out + hi, out + ow, T{0});
        }
      }
    }
  }
}

template <typename T>
void col2im_band(const ConvGeometry& g, const T* cols, std::size_t oy0, std::size_t rows, T* image) {
  const auto ow = static_cast<std::size_t>(g.out_w());
  const std::size_t ncols = rows * ow;
  const long h = static_cast<long>(g.height);
  const long pad = static_cast<long>(g.padding);
  const std::size_t stride = g.stride;
  std::size_t row = 0;
  for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
    T* plane = image + ci * g.height * g.width;
    for (std::size_t dy = 0; dy < g.kernel_h; ++dy) {
      for (std::size_t dx = 0; dx < g.kernel_w; ++dx, ++row) {
        const auto [lo, hi] = valid_columns(g, dx, ow);
        const T* src = cols + row * ncols;
        for (std::size_t r = 0; r < rows; ++r) {
          const long iy = static_cast<long>((oy0 + r) * stride) - pad + static_cast<long>(dy);
          if (iy < 0 || iy >= h) continue;
          T* dst = plane + iy * static_cast<long>(g.width) + static_cast<long>(lo * stride) - pad +
                   static_cast<long>(dx);
          const T* in = src + r * ow;
          if (stride == 1) {
#pragma omp simd
            for (std::size_t ox = lo; ox < hi; ++ox) dst[ox - lo] += in[ox];
          } else {
            for (std::size_t ox = lo; ox < hi; ++ox) dst[(ox - lo) * stride] += in[ox];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
void gemm(bool transpose_a, bool transpose_b, std::size_t m, std::size_t n, std::size_t k,
          const T* a, std::size_t lda, const T* b, std::size_t ldb, T* c, std::size_t ldc,
          bool accumulate) {
  if (m == 0 || n == 0) return;
  if (k == 0) {
    if (!accumulate)
      for (std::size_t i = 0; i < m; ++i) std::fill_n(c + i * ldc, n, T{0});
    return;
  }
  if (transpose_b && !transpose_a) {
    gemm_nt(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
    return;
  }
  std::vector<T> a_packed;
  std::vector<T> b_packed;
  if (transpose_a) {
    a_packed = transposed(a, k, m, lda);
    a = a_packed.data();
    lda = k;
  }
  if (transpose_b) {
    b_packed = transposed(b, n, k, ldb);
    b = b_packed.data();
    ldb = n;
  }
  gemm_nn(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}

template <typename T>
void matmul_batched(std::size_t batch, std::size_t m, std::size_t k, std::size_t n, const T* a,
                    const T* b, T* c) {
#pragma omp parallel for schedule(static) if (batch > 1 && batch * m * n * k >= kParallelFlops)
  for (std::size_t s = 0; s < batch; ++s) {
    gemm_nn(m, n, k, a + s * m * k, k, b + s * k * n, n, c + s * m * n, n, false);
  }
}

template <typename T>
void conv2d_forward(const ConvGeometry& g, const T* input, const T* weight, const T* bias, T* output) {
  const auto oh = static_cast<std::size_t>(g.out_h());
  const auto ow = static_cast<std::size_t>(g.out_w());
  const std::size_t ohw = oh * ow;
  const std::size_t hw = g.height * g.width;
  const std::size_t patch = g.patch_size();
  const std::size_t rows_per_band = band_rows(g);
#pragma omp parallel for schedule(static) if (g.batch > 1)
  for (std::size_t n = 0; n < g.batch; ++n) {
    const T* x = input + n * g.in_channels * hw;
    T* y = output + n * g.out_channels * ohw;
    if (is_pointwise(g)) {
      gemm_nn(g.out_channels, ohw, g.in_channels, weight, g.in_channels, x, hw, y, ohw, false);
    } else {
      std::vector<T> cols(patch * rows_per_band * ow);
      for (std::size_t oy0 = 0; oy0 < oh; oy0 += rows_per_band) {
        const std::size_t rows = std::min(rows_per_band, oh - oy0);
        const std::size_t ncols = rows * ow;
        im2col_band(g, x, oy0, rows, cols.data());
        gemm_nn(g.out_channels, ncols, patch, weight, patch, cols.data(), ncols, y + oy0 * ow, ohw,
                false);
      }
    }
    if (bias != nullptr) {
      for (std::size_t co = 0; co < g.out_channels; ++co) {
        T* plane = y + co * ohw;
        const T bv = bias[co];
        for (std::size_t i = 0; i < ohw; ++i) plane[i] += bv;
      }
    }
  }
}

template <typename T>
void conv2d_backward_input(const ConvGeometry& g, const T* weight, const T* d_output, T* d_input) {
  const auto oh = static_cast<std::size_t>(g.out_h());
  const auto ow = static_cast<std::size_t>(g.out_w());
  const std::size_t ohw = oh * ow;
  const std::size_t hw = g.height * g.width;
  const std::size_t patch = g.patch_size();
  const std::size_t rows_per_band = band_rows(g);
  // W^T, (patch, out_channels), shared by every image and band.
  const std::vector<T> weight_t = transposed(weight, g.out_channels, patch, patch);
#pragma omp parallel for schedule(static) if (g.batch > 1)
  for (std::size_t n = 0; n < g.batch; ++n) {
    const T* dy = d_output + n * g.out_channels * ohw;
    T* dx = d_input + n * g.in_channels * hw;
    if (is_pointwise(g)) {
      gemm_nn(g.in_channels, hw, g.out_channels, weight_t.data(), g.out_channels, dy, ohw, dx, hw, false);
      continue;
    }
    std::fill_n(dx, g.in_channels * hw, T{0});
    std::vector<T> dcols(patch * rows_per_band * ow);
    for (std::size_t oy0 = 0; oy0 < oh; oy0 += rows_per_band) {
      const std::size_t rows = std::min(rows_per_band, oh - oy0);
      const std::size_t ncols = rows * ow;
      gemm_nn(patch, ncols, g.out_channels, weight_t.data(), g.out_channels, dy + oy0 * ow, ohw, dcols.data(),
              ncols, false);
      col2im_band(g, dcols.data(), oy0, rows, dx);
    }
  }
}

template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, const T* input, const T* d_output, T* d_weight,
                            T* d_bias) {
  const auto oh = static_cast<std::size_t>(g.out_h());
  const auto ow = static_cast<std::size_t>(g.out_w());
  const std::size_t ohw = oh * ow;
  const std::size_t hw = g.height * g.width;
  const std::size_t patch = g.patch_size();
  const std::size_t wsize = g.weight_size();
  const std::size_t rows_per_band = band_rows(g, kIm2colWeightBudget);

  std::vector<T> partial(g.batch * wsize);
#pragma omp parallel for schedule(static) if (g.batch > 1)
  for (std::size_t n = 0; n < g.batch; ++n) {
    const T* x = input + n * g.in_channels * hw;
    const T* dy = d_output + n * g.out_channels * ohw;
    T* dw = partial.data() + n * wsize;
    if (is_pointwise(g)) {
      gemm(false, true, g.out_channels, g.in_channels, hw, dy, ohw, x, hw, dw, g.in_channels, false);
      continue;
    }
    std::vector<T> cols(patch * rows_per_band * ow);
    for (std::size_t oy0 = 0; oy0 < oh; oy0 += rows_per_band) {
      const std::size_t rows = std::min(rows_per_band, oh - oy0);
      const std::size_t ncols = rows * ow;
      im2col_band(g, x, oy0, rows, cols.data());
      gemm(false, true, g.out_channels, patch, ncols, dy + oy0 * ow, ohw, cols.data(), ncols, dw,
           patch, oy0 != 0);
    }
  }
  std::copy_n(partial.data(), wsize, d_weight);
  for (std::size_t n = 1; n < g.batch; ++n) {
    const T* src = partial.data() + n * wsize;
    for (std::size_t i = 0; i < wsize; ++i) d_weight[i] += src[i];
  }

  if (d_bias != nullptr) {
    for (std::size_t co = 0; co < g.out_channels; ++co) {
      T acc{0};
      for (std::size_t n = 0; n < g.batch; ++n) {
        const T* plane = d_output + (n * g.out_channels + co) * ohw;
        for (std::size_t i = 0; i < ohw; ++i) acc += plane[i];
      }
      d_bias[co] = acc;
    }
  }
}

#define MHCNN_INSTANTIATE_KERNELS(T)                                                              \
  template void gemm<T>(bool, bool, std::size_t, std::size_t, std::size_t, const T*, std::size_t, \
                        const T*, std::size_t, T*, std::size_t, bool);                            \
  template void matmul_batched<T>(std::size_t, std::size_t, std::size_t, std::size_t, const T*,   \
                                  const T*, T*);                                                  \
  template void conv2d_forward<T>(const ConvGeometry&, const T*, const T*, const T*, T*);         \
  template void conv2d_backward_input<T>(const ConvGeometry&, const T*, const T*, T*);            \
  template void conv2d_backward_weight<T>(const ConvGeometry&, const T*, const T*, T*, T*);

MHCNN_INSTANTIATE_KERNELS(float)
MHCNN_INSTANTIATE_KERNELS(double)

#undef MHCNN_INSTANTIATE_KERNELS

}  // namespace mhcnn::kernels
