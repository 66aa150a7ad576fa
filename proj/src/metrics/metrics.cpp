#include "mhcnn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace mhcnn::metrics {
namespace {

constexpr int kWindow = 11;
constexpr double kWindowSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (a != b) throw ShapeError(std::string(what) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

template <typename T>
double mse(const Tensor<T>& a, const Tensor<T>& b, bool clamp) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double x = a[i], y = b[i];
    if (clamp) {
      x = clamp01(x);
      y = clamp01(y);
    }
    acc += (x - y) * (x - y);
  }
  return acc / static_cast<double>(a.size());
}

double to_db(double m) {
  if (m <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / m));
}

struct Gray {
  std::size_t h = 0, w = 0;
  std::vector<double> v;
};

template <typename T>
Gray to_gray(const Tensor<T>& t) {
  Gray g;
  std::size_t c = 1;
  if (t.rank() == 2) {
    g.h = t.dim(0);
    g.w = t.dim(1);
  } else if (t.rank() == 3) {
    c = t.dim(0);
    g.h = t.dim(1);
    g.w = t.dim(2);
  } else {
    throw ShapeError("ssim: expected (h, w) or (c, h, w), got " + to_string(t.shape()));
  }
  const std::size_t n = g.h * g.w;
  g.v.assign(n, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < n; ++i) g.v[i] += clamp01(t[ch * n + i]);
  for (double& x : g.v) x /= static_cast<double>(c);
  return g;
}

std::vector<double> gaussian_taps() {
  std::vector<double> k(kWindow);
  const int r = kWindow / 2;
  for (int i = 0; i < kWindow; ++i) k[i] = std::exp(-0.5 * (i - r) * (i - r) / (kWindowSigma * kWindowSigma));
  const double s = std::accumulate(k.begin(), k.end(), 0.0);
  for (double& x : k) x /= s;
  return k;
}

// Valid-mode separable filtering: (h, w) -> (h - 10, w - 10).
std::vector<double> filter(const std::vector<double>& img, std::size_t h, std::size_t w,
                           const std::vector<double>& k) {
  const std::size_t oh = h - kWindow + 1, ow = w - kWindow + 1;
  std::vector<double> rows(h * ow), out(oh * ow);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < kWindow; ++i) acc += k[i] * img[y * w + x + i];
      rows[y * ow + x] = acc;
    }
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < kWindow; ++i) acc += k[i] * rows[(y + i) * ow + x];
      out[y * ow + x] = acc;
    }
  return out;
}

}  // namespace

template <typename T>
double psnr(const Tensor<T>& reference, const Tensor<T>& test) {
  require_same_shape(reference.shape(), test.shape(), "psnr");
  return to_db(mse(reference, test, true));
}

template <typename T>
double psnr_unclamped(const Tensor<T>& reference, const Tensor<T>& test) {
  require_same_shape(reference.shape(), test.shape(), "psnr");
  return to_db(mse(reference, test, false));
}

template <typename T>
double ssim(const Tensor<T>& reference, const Tensor<T>& test) {
  require_same_shape(reference.shape(), test.shape(), "ssim");
  const Gray a = to_gray(reference);
  const Gray b = to_gray(test);
  if (a.h < static_cast<std::size_t>(kWindow) || a.w < static_cast<std::size_t>(kWindow))
    throw ShapeError("ssim: image smaller than the 11x11 window");
  const std::size_t n = a.v.size();
  std::vector<double> aa(n), bb(n), ab(n);
  for (std::size_t i = 0; i < n; ++i) {
    aa[i] = a.v[i] * a.v[i];
    bb[i] = b.v[i] * b.v[i];
    ab[i] = a.v[i] * b.v[i];
  }
  const auto k = gaussian_taps();
  const auto mu_a = filter(a.v, a.h, a.w, k);
  const auto mu_b = filter(b.v, a.h, a.w, k);
  const auto e_aa = filter(aa, a.h, a.w, k);
  const auto e_bb = filter(bb, a.h, a.w, k);
  const auto e_ab = filter(ab, a.h, a.w, k);
  double total = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double ma = mu_a[i], mb = mu_b[i];
    const double va = e_aa[i] - ma * ma, vb = e_bb[i] - mb * mb, cov = e_ab[i] - ma * mb;
    total += ((2.0 * ma * mb + kC1) * (2.0 * cov + kC2)) / ((ma * ma + mb * mb + kC1) * (va + vb + kC2));
  }
  return total / static_cast<double>(mu_a.size());
}

double MetricReport::mean_psnr() const {
  if (rows.empty()) return 0.0;
  double s = 0.0;
  for (const auto& r : rows) s += r.psnr_db;
  return s / static_cast<double>(rows.size());
}

double MetricReport::mean_ssim() const {
  if (rows.empty()) return 0.0;
  double s = 0.0;
  for (const auto& r : rows) s += r.ssim;
  return s / static_cast<double>(rows.size());
}

template double psnr(const Tensor<float>&, const Tensor<float>&);
template double psnr(const Tensor<double>&, const Tensor<double>&);
template double psnr_unclamped(const Tensor<float>&, const Tensor<float>&);
template double psnr_unclamped(const Tensor<double>&, const Tensor<double>&);
template double ssim(const Tensor<float>&, const Tensor<float>&);
template double ssim(const Tensor<double>&, const Tensor<double>&);

}  // namespace mhcnn::metrics
