#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "mhcnn/rng.hpp"
#include "mhcnn/runtime.hpp"

namespace mhcnn::runtime {
namespace {

std::size_t reflect(std::size_t i, std::size_t n) {
  if (n == 1) return 0;
  const std::size_t period = 2 * (n - 1);
  const std::size_t j = i % period;
  return j < n ? j : period - j;
}

Tensor<float> crop_top_left(const Tensor<float>& chw, std::size_t h, std::size_t w) {
  const std::size_t c = chw.dim(0), sh = chw.dim(1), sw = chw.dim(2);
  Tensor<float> out({c, h, w});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y) std::copy_n(chw.ptr() + (ch * sh + y) * sw, w, out.ptr() + (ch * h + y) * w);
  return out;
}

template <typename Row, typename F>
double mean_of(const std::vector<Row>& rows, F field) {
  if (rows.empty()) return 0.0;
  double s = 0.0;
  for (const auto& r : rows) s += field(r);
  return s / static_cast<double>(rows.size());
}

}  // namespace

std::size_t padded_side(std::size_t h, std::size_t w) {
  const std::size_t side = std::max(h, w);
  return (side + 3) / 4 * 4;
}

Tensor<float> reflect_pad(const Tensor<float>& chw, std::size_t side) {
  if (chw.rank() != 3) throw ShapeError("reflect_pad: expected (c, h, w)");
  const std::size_t c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
  if (side < h || side < w) throw ShapeError("reflect_pad: target smaller than image");
  Tensor<float> out({c, side, side});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < side; ++y) {
      const std::size_t sy = reflect(y, h);
      for (std::size_t x = 0; x < side; ++x) out[(ch * side + y) * side + x] = chw[(ch * h + sy) * w + reflect(x, w)];
    }
  return out;
}

Tensor<float> denoise_tensor(nn::Model<float>& model, const Tensor<float>& noisy_chw,
                             std::map<std::string, Tensor<float>>* taps) {
  if (noisy_chw.rank() != 3) throw ShapeError("denoise: expected (c, h, w), got " + to_string(noisy_chw.shape()));
  const std::size_t c = noisy_chw.dim(0), h = noisy_chw.dim(1), w = noisy_chw.dim(2);
  if (c != model.config().in_channels)
    throw ShapeError("denoise: image has " + std::to_string(c) + " channels, model expects " +
                     std::to_string(model.config().in_channels));
  const std::size_t side = padded_side(h, w);
  const auto padded = side == h && side == w ? noisy_chw : reflect_pad(noisy_chw, side);
  const auto out = model.infer(ops::reshape(padded, {1, c, side, side}), taps);
  const auto chw = ops::reshape(out, {c, side, side});
  return side == h && side == w ? chw : crop_top_left(chw, h, w);
}

data::ImageBuffer denoise_image(nn::Model<float>& model, const data::ImageBuffer& image) {
  return data::from_float(denoise_tensor(model, data::to_float(image)));
}

double EvalReport::mean_noisy_psnr() const { return mean_of(rows, [](const EvalRow& r) { return r.noisy_psnr; }); }
double EvalReport::mean_psnr() const { return mean_of(rows, [](const EvalRow& r) { return r.psnr; }); }
double EvalReport::mean_ssim() const { return mean_of(rows, [](const EvalRow& r) { return r.ssim; }); }

metrics::MetricReport EvalReport::metrics() const {
  metrics::MetricReport m;
  for (const auto& r : rows) m.add(r.name, r.psnr, r.ssim);
  return m;
}

EvalReport evaluate(nn::Model<float>& model, const std::vector<std::pair<std::string, Tensor<float>>>& clean,
                    double sigma, std::uint64_t seed) {
  if (clean.empty()) throw data::DataError("evaluate: empty dataset");
  EvalReport report;
  report.sigma = sigma;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    const auto& [name, ref] = clean[i];
    const auto noisy = data::add_awgn(ref, {sigma, mix_seed(seed, i)});
    const auto out = denoise_tensor(model, noisy);
    report.rows.push_back({name, metrics::psnr(ref, noisy), metrics::psnr(ref, out), metrics::ssim(ref, out)});
  }
  return report;
}

EvalReport evaluate_pairs(nn::Model<float>& model, const std::vector<data::ImagePair>& pairs) {
  if (pairs.empty()) throw data::DataError("evaluate: empty dataset");
  EvalReport report;
  for (const auto& p : pairs) {
    const auto ref = data::to_float(p.clean);
    const auto noisy = data::to_float(p.noisy);
    const auto out = denoise_tensor(model, noisy);
    report.rows.push_back({p.name, metrics::psnr(ref, noisy), metrics::psnr(ref, out), metrics::ssim(ref, out)});
  }
  return report;
}

std::vector<std::pair<std::string, Tensor<float>>> load_eval_images(const ImageSource& source,
                                                                     std::size_t channels) {
  std::vector<std::pair<std::string, Tensor<float>>> out;
  if (source.kind == ImageSource::Kind::synthetic) {
    const auto images = data::gen_synthetic(source.count, source.size, source.seed, channels);
    for (std::size_t i = 0; i < images.size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "synthetic_%03zu", i);
      out.emplace_back(name, data::to_float(images[i]));
    }
    return out;
  }
  if (source.kind == ImageSource::Kind::paired) throw data::DataError("evaluate: use evaluate_pairs for paired data");
  for (auto& [name, img] : data::load_folder(source.path)) {
    if (img.channels != channels)
      throw data::DataError(name + " has " + std::to_string(img.channels) + " channels, model expects " +
                            std::to_string(channels));
    out.emplace_back(name, data::to_float(img));
  }
  if (out.empty()) throw data::DataError("evaluate: no .pgm/.ppm images in " + source.path);
  return out;
}

void write_report(std::ostream& out, const EvalReport& report) {
  out << "# PSNR on clamped float output (before 8-bit quantization); sigma " << report.sigma << "\n";
  out << "image\tnoisy_psnr\tpsnr\tssim\n";
  char buf[256];
  for (const auto& r : report.rows) {
    std::snprintf(buf, sizeof buf, "%s\t%.4f\t%.4f\t%.6f\n", r.name.c_str(), r.noisy_psnr, r.psnr, r.ssim);
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "mean\t%.4f\t%.4f\t%.6f\n", report.mean_noisy_psnr(), report.mean_psnr(),
                report.mean_ssim());
  out << buf;
}

data::ImageBuffer feature_grid(const Tensor<float>& chw) {
  if (chw.rank() != 3) throw ShapeError("feature_grid: expected (c, h, w)");
  const std::size_t c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
  const auto cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(c))));
  const std::size_t rows = (c + cols - 1) / cols;
  // One-pixel black gutter between tiles.
  data::ImageBuffer grid(rows * (h + 1) - 1, cols * (w + 1) - 1, 1);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const float* p = chw.ptr() + ch * h * w;
    const auto [lo, hi] = std::minmax_element(p, p + h * w);
    const double range = static_cast<double>(*hi) - *lo;
    const std::size_t oy = (ch / cols) * (h + 1), ox = (ch % cols) * (w + 1);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const double v = range > 0.0 ? (p[y * w + x] - *lo) / range : 128.0 / 255.0;
        grid.at(oy + y, ox + x) = static_cast<std::uint8_t>(std::floor(v * 255.0 + 0.5));
      }
  }
  return grid;
}

std::size_t dump_features(nn::Model<float>& model, const data::ImageBuffer& image, const std::string& stage,
                          const std::filesystem::path& out_dir) {
  bool known = stage == "mpa_out";
  for (std::size_t i = 0; i < model.config().heads; ++i) known = known || stage == "head" + std::to_string(i);
  if (!known) throw std::invalid_argument("unknown feature stage '" + stage + "'");
  std::map<std::string, Tensor<float>> taps;
  denoise_tensor(model, data::to_float(image), &taps);
  const auto& f = taps.at(stage);
  const auto chw = ops::reshape(f, {f.dim(1), f.dim(2), f.dim(3)});
  std::filesystem::create_directories(out_dir);
  data::save_pnm(out_dir / (stage + ".pgm"), feature_grid(chw));
  return chw.dim(0);
}

}  // namespace mhcnn::runtime
