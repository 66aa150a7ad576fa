#include <gtest/gtest.h>

#include <cmath>

#include "mhcnn/metrics.hpp"
#include "support.hpp"

using namespace mhcnn;
using namespace mhcnn::metrics;

namespace {

Tensor<double> uniform_image(Shape shape, std::uint64_t seed) {
  Tensor<double> t(std::move(shape));
  Rng rng(seed);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform();
  return t;
}

// Direct 2-D windowed SSIM on a gray (h, w) image.
double ssim_oracle(const Tensor<double>& a, const Tensor<double>& b) {
  const std::size_t h = a.dim(0), w = a.dim(1);
  double k[11][11], s = 0.0;
  for (int i = 0; i < 11; ++i)
    for (int j = 0; j < 11; ++j) s += k[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / (2 * 1.5 * 1.5));
  double total = 0.0;
  for (std::size_t y = 0; y + 11 <= h; ++y)
    for (std::size_t x = 0; x + 11 <= w; ++x) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) {
          const double wt = k[i][j] / s;
          const double va = a[(y + i) * w + x + j], vb = b[(y + i) * w + x + j];
          ma += wt * va;
          mb += wt * vb;
          saa += wt * va * va;
          sbb += wt * vb * vb;
          sab += wt * va * vb;
        }
      const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
      const double c1 = 1e-4, c2 = 9e-4;
      total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
  return total / static_cast<double>((h - 10) * (w - 10));
}

}  // namespace

TEST(Psnr, ClosedForms) {
  const auto ref = Tensor<double>::fill({1, 8, 8}, 0.5);
  EXPECT_NEAR(psnr(ref, Tensor<double>::fill({1, 8, 8}, 0.6)), 20.0, 1e-6);
  EXPECT_NEAR(psnr(ref, Tensor<double>::fill({1, 8, 8}, 0.4)), 20.0, 1e-6);
  EXPECT_NEAR(psnr(ref, Tensor<double>::fill({1, 8, 8}, 0.51)), 40.0, 1e-6);
  EXPECT_EQ(psnr(ref, ref), kPsnrCap);
  // 1e-12 error would be 240 dB; the cap applies.
  EXPECT_EQ(psnr(ref, Tensor<double>::fill({1, 8, 8}, 0.5 + 1e-12)), kPsnrCap);
}

TEST(Psnr, ClampsInputsButUnclampedDoesNot) {
  const auto ref = Tensor<double>::fill({1, 4, 4}, 1.0);
  const auto over = Tensor<double>::fill({1, 4, 4}, 1.3);
  EXPECT_EQ(psnr(ref, over), kPsnrCap);
  EXPECT_NEAR(psnr_unclamped(ref, over), 10.0 * std::log10(1.0 / 0.09), 1e-9);
}

TEST(Psnr, ColorPoolsChannels) {
  // Errors 0.1, 0, 0 across three channels: MSE 0.01 / 3.
  auto ref = Tensor<double>::fill({3, 4, 4}, 0.5);
  auto test = ref;
  for (std::size_t i = 0; i < 16; ++i) test[i] = 0.6;
  EXPECT_NEAR(psnr(ref, test), 10.0 * std::log10(300.0), 1e-9);
  EXPECT_THROW(psnr(ref, Tensor<double>({1, 4, 4})), ShapeError);
}

TEST(Psnr, FloatInstantiation) {
  const auto ref = Tensor<float>::fill({1, 4, 4}, 0.25F);
  EXPECT_EQ(psnr(ref, ref), kPsnrCap);
  EXPECT_NEAR(psnr(ref, Tensor<float>::fill({1, 4, 4}, 0.75F)), 10.0 * std::log10(4.0), 1e-5);
}

TEST(Ssim, IdentitySymmetryAndBounds) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto a = uniform_image({1, 16 + seed, 20}, seed);
    auto b = a;
    for (std::size_t i = 0; i < b.size(); ++i) b[i] = std::clamp(b[i] + 0.2 * std::sin(0.37 * i), 0.0, 1.0);
    EXPECT_NEAR(ssim(a, a), 1.0, 1e-9);
    const double ab = ssim(a, b);
    EXPECT_NEAR(ab, ssim(b, a), 1e-9);
    EXPECT_LT(ab, 1.0);
    EXPECT_GE(ab, -1.0);
  }
}

TEST(Ssim, MatchesDirectWindowOracle) {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const auto a = uniform_image({13 + seed, 17}, seed);
    const auto b = uniform_image({13 + seed, 17}, seed + 50);
    EXPECT_NEAR(ssim(a, b), ssim_oracle(a, b), 1e-12);
    auto c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = 0.7 * c[i] + 0.1;
    EXPECT_NEAR(ssim(a, c), ssim_oracle(a, c), 1e-12);
  }
}

TEST(Ssim, DecreasesWithNoise) {
  const auto a = uniform_image({1, 32, 32}, 3);
  double last = 1.0;
  for (double sigma : {0.02, 0.05, 0.1, 0.2}) {
    const auto n = Tensor<double>::gaussian({1, 32, 32}, 0.0, sigma, 9);
    auto b = a;
    for (std::size_t i = 0; i < b.size(); ++i) b[i] += n[i];
    const double s = ssim(a, b);
    EXPECT_LT(s, last);
    last = s;
  }
}

TEST(Ssim, ColorUsesChannelMean) {
  const auto a = uniform_image({3, 16, 16}, 1);
  const auto b = uniform_image({3, 16, 16}, 2);
  Tensor<double> ga({16, 16}), gb({16, 16});
  for (std::size_t i = 0; i < 256; ++i) {
    ga[i] = (a[i] + a[256 + i] + a[512 + i]) / 3.0;
    gb[i] = (b[i] + b[256 + i] + b[512 + i]) / 3.0;
  }
  EXPECT_NEAR(ssim(a, b), ssim(ga, gb), 1e-12);
}

TEST(Ssim, Errors) {
  EXPECT_THROW(ssim(Tensor<double>({1, 10, 20}), Tensor<double>({1, 10, 20})), ShapeError);
  EXPECT_THROW(ssim(Tensor<double>({1, 12, 12}), Tensor<double>({1, 12, 13})), ShapeError);
  EXPECT_THROW(ssim(Tensor<double>({12}), Tensor<double>({12})), ShapeError);
}

TEST(Report, MeansMatchRows) {
  MetricReport r;
  r.add("a", 30.0, 0.8);
  r.add("b", 20.0, 0.6);
  r.add("c", 25.0, 0.7);
  EXPECT_DOUBLE_EQ(r.mean_psnr(), 25.0);
  EXPECT_NEAR(r.mean_ssim(), 0.7, 1e-15);
  EXPECT_EQ(MetricReport{}.mean_psnr(), 0.0);
}
