#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "mhcnn/kernels.hpp"
#include "mhcnn/rng.hpp"

using namespace mhcnn;
using mhcnn::kernels::ConvGeometry;

namespace {

std::vector<float> random_vec(std::size_t n, Rng& rng) {
  std::vector<float> v(n);
  for (float& x : v) x = static_cast<float>(rng.gaussian());
  return v;
}

// Tolerance scaled by the reduction length; float accumulation order differs.
void expect_close(const std::vector<float>& a, const std::vector<float>& b, std::size_t reduction) {
  ASSERT_EQ(a.size(), b.size());
  const float tol = 1e-5F * static_cast<float>(reduction + 1);
  for (std::size_t i = 0; i < a.size(); ++i) ASSERT_NEAR(a[i], b[i], tol * (1.0F + std::abs(b[i]))) << i;
}

std::size_t in_range(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); }

}  // namespace

TEST(GemmOracle, RandomCases) {
  Rng rng(2024);
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t m = in_range(rng, 1, 37), n = in_range(rng, 1, 300), k = in_range(rng, 1, 40);
    const bool ta = rng.below(2) == 1, tb = rng.below(2) == 1, acc = rng.below(2) == 1;
    const auto a = random_vec(m * k, rng);
    const auto b = random_vec(k * n, rng);
    auto c_fast = random_vec(m * n, rng);
    auto c_ref = c_fast;
    const std::size_t lda = ta ? m : k, ldb = tb ? k : n;
    kernels::gemm(ta, tb, m, n, k, a.data(), lda, b.data(), ldb, c_fast.data(), n, acc);
    kernels::serial::gemm(ta, tb, m, n, k, a.data(), lda, b.data(), ldb, c_ref.data(), n, acc);
    expect_close(c_fast, c_ref, k);
  }
}

TEST(MatmulOracle, RandomCases) {
  Rng rng(7);
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t batch = in_range(rng, 1, 6), m = in_range(rng, 1, 20), k = in_range(rng, 1, 20),
                      n = in_range(rng, 1, 20);
    const auto a = random_vec(batch * m * k, rng);
    const auto b = random_vec(batch * k * n, rng);
    std::vector<float> fast(batch * m * n), ref(batch * m * n);
    kernels::matmul_batched(batch, m, k, n, a.data(), b.data(), fast.data());
    kernels::serial::matmul_batched(batch, m, k, n, a.data(), b.data(), ref.data());
    expect_close(fast, ref, k);
  }
}

TEST(ConvOracle, RandomCases) {
  Rng rng(99);
  for (int rep = 0; rep < 200; ++rep) {
    ConvGeometry g;
    g.batch = in_range(rng, 1, 3);
    g.in_channels = in_range(rng, 1, 6);
    g.out_channels = in_range(rng, 1, 6);
    g.kernel_h = g.kernel_w = rng.below(2) == 0 ? 1 : 3;
    g.padding = rng.below(2);
    g.stride = 1;
    g.height = in_range(rng, g.kernel_h, 12);
    g.width = in_range(rng, g.kernel_w, 12);
    const auto oh = static_cast<std::size_t>(g.out_h()), ow = static_cast<std::size_t>(g.out_w());
    const std::size_t in_size = g.batch * g.in_channels * g.height * g.width;
    const std::size_t out_size = g.batch * g.out_channels * oh * ow;
    const auto x = random_vec(in_size, rng);
    const auto w = random_vec(g.weight_size(), rng);
    const auto bias = random_vec(g.out_channels, rng);
    const bool with_bias = rng.below(2) == 1;

    std::vector<float> fast(out_size), ref(out_size);
    kernels::conv2d_forward(g, x.data(), w.data(), with_bias ? bias.data() : nullptr, fast.data());
    kernels::serial::conv2d_forward(g, x.data(), w.data(), with_bias ? bias.data() : nullptr, ref.data());
    expect_close(fast, ref, g.patch_size());

    const auto dout = random_vec(out_size, rng);
    std::vector<float> din_fast(in_size, 5.0F), din_ref(in_size, -5.0F);
    kernels::conv2d_backward_input(g, w.data(), dout.data(), din_fast.data());
    kernels::serial::conv2d_backward_input(g, w.data(), dout.data(), din_ref.data());
    expect_close(din_fast, din_ref, g.out_channels * g.kernel_h * g.kernel_w);

    std::vector<float> dw_fast(g.weight_size()), dw_ref(g.weight_size());
    std::vector<float> db_fast(g.out_channels), db_ref(g.out_channels);
    kernels::conv2d_backward_weight(g, x.data(), dout.data(), dw_fast.data(), db_fast.data());
    kernels::serial::conv2d_backward_weight(g, x.data(), dout.data(), dw_ref.data(), db_ref.data());
    expect_close(dw_fast, dw_ref, g.batch * oh * ow);
    expect_close(db_fast, db_ref, g.batch * oh * ow);
  }
}

TEST(ConvOracle, LargeImageBandedIm2col) {
  // Large enough that im2col runs in several row bands.
  Rng rng(5);
  ConvGeometry g{2, 16, 96, 96, 8, 3, 3, 1, 1};
  const auto x = random_vec(g.batch * g.in_channels * g.height * g.width, rng);
  const auto w = random_vec(g.weight_size(), rng);
  std::vector<float> fast(g.batch * g.out_channels * 96 * 96), ref(fast.size());
  kernels::conv2d_forward<float>(g, x.data(), w.data(), nullptr, fast.data());
  kernels::serial::conv2d_forward<float>(g, x.data(), w.data(), nullptr, ref.data());
  expect_close(fast, ref, g.patch_size());
}

TEST(ConvOracle, BackwardWeightIsDeterministic) {
  Rng rng(6);
  ConvGeometry g{4, 5, 10, 10, 3, 3, 3, 1, 1};
  const auto x = random_vec(g.batch * g.in_channels * 100, rng);
  const auto dout = random_vec(g.batch * g.out_channels * 100, rng);
  std::vector<float> a(g.weight_size()), b(g.weight_size());
  kernels::conv2d_backward_weight<float>(g, x.data(), dout.data(), a.data(), nullptr);
  kernels::conv2d_backward_weight<float>(g, x.data(), dout.data(), b.data(), nullptr);
  EXPECT_EQ(a, b);
}

TEST(ConvOracle, DoublePrecisionAgreesTightly) {
  Rng rng(8);
  ConvGeometry g{2, 3, 7, 9, 4, 3, 3, 1, 1};
  std::vector<double> x(g.batch * g.in_channels * 63), w(g.weight_size());
  for (double& v : x) v = rng.gaussian();
  for (double& v : w) v = rng.gaussian();
  std::vector<double> fast(g.batch * g.out_channels * 63), ref(fast.size());
  kernels::conv2d_forward<double>(g, x.data(), w.data(), nullptr, fast.data());
  kernels::serial::conv2d_forward<double>(g, x.data(), w.data(), nullptr, ref.data());
  for (std::size_t i = 0; i < fast.size(); ++i) EXPECT_NEAR(fast[i], ref[i], 1e-12);
}
