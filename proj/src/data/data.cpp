#include "mhcnn/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <map>
#include <numbers>
#include <numeric>

#include "mhcnn/rng.hpp"

namespace mhcnn::data {
namespace {

bool is_space(std::uint8_t c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }

class HeaderReader {
 public:
  explicit HeaderReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::string token() {
    skip_space_and_comments();
    std::string out;
    while (pos_ < bytes_.size() && !is_space(bytes_[pos_])) out.push_back(static_cast<char>(bytes_[pos_++]));
    if (out.empty()) throw PnmError("pnm: truncated header");
    return out;
  }

  std::size_t number(const char* what) {
    const std::string t = token();
    if (!std::all_of(t.begin(), t.end(), [](char c) { return c >= '0' && c <= '9'; }) || t.size() > 9)
      throw PnmError(std::string("pnm: bad ") + what + " '" + t + "'");
    return std::stoul(t);
  }

  // Exactly one whitespace byte separates the header from the samples.
  std::size_t payload_offset() {
    if (pos_ >= bytes_.size() || !is_space(bytes_[pos_])) throw PnmError("pnm: truncated header");
    return pos_ + 1;
  }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (is_space(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

Tensor<float> rotate_chw(const Tensor<float>& t, int k) {
  const Shape& s = t.shape();
  const auto r = ops::rotate90(ops::reshape(t, {1, s[0], s[1], s[2]}), k);
  return ops::reshape(r, {r.dim(1), r.dim(2), r.dim(3)});
}

void require_chw(const Tensor<float>& t, const char* what) {
  if (t.rank() != 3) throw ShapeError(std::string(what) + ": expected (c, h, w), got " + to_string(t.shape()));
}

}  // namespace

ImageBuffer::ImageBuffer(std::size_t h, std::size_t w, std::size_t c)
    : height(h), width(w), channels(c), pixels(h * w * c, 0) {
  if (h == 0 || w == 0) throw DataError("image dimensions must be positive");
  if (c != 1 && c != 3) throw DataError("image must have 1 or 3 channels");
}

ImageBuffer read_pnm(std::span<const std::uint8_t> bytes) {
  HeaderReader header(bytes);
  const std::string magic = header.token();
  std::size_t channels = 0;
  if (magic == "P5") {
    channels = 1;
  } else if (magic == "P6") {
    channels = 3;
  } else {
    throw PnmError("pnm: bad magic '" + magic + "', expected P5 or P6");
  }
  const std::size_t width = header.number("width");
  const std::size_t height = header.number("height");
  const std::size_t maxval = header.number("maxval");
  if (width == 0 || height == 0) throw PnmError("pnm: zero image dimension");
  if (maxval != 255) throw PnmError("pnm: maxval must be 255, got " + std::to_string(maxval));
  const std::size_t offset = header.payload_offset();
  const std::size_t need = width * height * channels;
  if (bytes.size() - offset < need)
    throw PnmError("pnm: truncated pixel data, need " + std::to_string(need) + " bytes, have " +
                   std::to_string(bytes.size() - offset));
  ImageBuffer img(height, width, channels);
  std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(offset), need, img.pixels.begin());
  return img;
}

std::vector<std::uint8_t> write_pnm(const ImageBuffer& image) {
  if (image.pixels.size() != image.height * image.width * image.channels)
    throw DataError("image pixel count does not match its dimensions");
  const std::string header = std::string(image.channels == 3 ? "P6" : "P5") + "\n" + std::to_string(image.width) +
                             " " + std::to_string(image.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), image.pixels.begin(), image.pixels.end());
  return out;
}

ImageBuffer load_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return read_pnm(bytes);
  } catch (const PnmError& e) {
    throw PnmError(path.string() + ": " + e.what());
  }
}

void save_pnm(const std::filesystem::path& path, const ImageBuffer& image) {
  const auto bytes = write_pnm(image);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

Tensor<float> to_float(const ImageBuffer& image) {
  const std::size_t c = image.channels, h = image.height, w = image.width;
  Tensor<float> out({c, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch)
        out[(ch * h + y) * w + x] = static_cast<float>(image.at(y, x, ch)) / 255.0F;
  return out;
}

ImageBuffer from_float(const Tensor<float>& chw) {
  require_chw(chw, "from_float");
  const std::size_t c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
  ImageBuffer img(h, w, c);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const float v = std::clamp(chw[(ch * h + y) * w + x], 0.0F, 1.0F);
        img.at(y, x, ch) = static_cast<std::uint8_t>(std::floor(v * 255.0F + 0.5F));
      }
  return img;
}

Tensor<float> add_awgn(const Tensor<float>& clean, const NoiseSpec& spec) {
  if (!(spec.sigma >= 0.0)) throw std::invalid_argument("noise sigma must be >= 0");
  Tensor<float> out = clean;
  if (spec.sigma == 0.0) return out;
  Rng rng(spec.seed);
  const double stddev = spec.sigma / 255.0;
  for (float& v : out.data()) v = static_cast<float>(v + stddev * rng.gaussian());
  return out;
}

std::vector<ImageBuffer> gen_synthetic(std::size_t count, std::size_t size, std::uint64_t seed,
                                       std::size_t channels) {
  if (size < 16) throw std::invalid_argument("synthetic images need size >= 16");
  if (channels != 1 && channels != 3) throw std::invalid_argument("synthetic images need 1 or 3 channels");
  constexpr double two_pi = 2.0 * std::numbers::pi;
  std::vector<ImageBuffer> out;
  out.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    Rng rng(mix_seed(seed, n));
    const double s = static_cast<double>(size);
    // Background gradient.
    const double angle = rng.uniform() * two_pi;
    const double g0 = 0.15 + 0.2 * rng.uniform(), g1 = 0.55 + 0.3 * rng.uniform();
    // Two textures, one coarse and one fine.
    struct Wave {
      double fx, fy, phase, amp;
    };
    Wave waves[2];
    for (int i = 0; i < 2; ++i) {
      const double cycles = i == 0 ? 1.0 + 2.0 * rng.uniform() : 5.0 + 6.0 * rng.uniform();
      const double dir = rng.uniform() * two_pi;
      waves[i] = {cycles * std::cos(dir) / s, cycles * std::sin(dir) / s, rng.uniform() * two_pi,
                  i == 0 ? 0.12 : 0.06};
    }
    struct Rect {
      std::size_t y0, x0, y1, x1;
      double level;
    };
    std::vector<Rect> rects(3 + rng.below(4));
    for (auto& r : rects) {
      const std::size_t h = size / 8 + rng.below(size / 3), w = size / 8 + rng.below(size / 3);
      r.y0 = rng.below(size - h);
      r.x0 = rng.below(size - w);
      r.y1 = r.y0 + h;
      r.x1 = r.x0 + w;
      r.level = 0.05 + 0.9 * rng.uniform();
    }
    double tint[3] = {1.0, 1.0, 1.0};
    if (channels == 3)
      for (double& t : tint) t = 0.7 + 0.3 * rng.uniform();

    ImageBuffer img(size, size, channels);
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x) {
        const double u = (std::cos(angle) * (x - s / 2) + std::sin(angle) * (y - s / 2)) / s + 0.5;
        double v = g0 + (g1 - g0) * u;
        for (const auto& wv : waves) v += wv.amp * std::sin(two_pi * (wv.fx * x + wv.fy * y) + wv.phase);
        for (const auto& r : rects)
          if (y >= r.y0 && y < r.y1 && x >= r.x0 && x < r.x1) v = 0.7 * r.level + 0.3 * v;
        for (std::size_t c = 0; c < channels; ++c) {
          const double p = std::clamp(v * tint[c], 0.0, 1.0);
          img.at(y, x, c) = static_cast<std::uint8_t>(std::floor(p * 255.0 + 0.5));
        }
      }
    out.push_back(std::move(img));
  }
  return out;
}

std::vector<PatchLocation> patch_locations(const std::vector<Tensor<float>>& images, const PatchOptions& options) {
  const std::size_t p = options.patch_size;
  if (p == 0 || options.stride == 0) throw std::invalid_argument("patch size and stride must be positive");
  if (images.empty()) throw DataError("no images to extract patches from");
  std::vector<PatchLocation> grid;
  for (std::size_t i = 0; i < images.size(); ++i) {
    require_chw(images[i], "patch_locations");
    const std::size_t h = images[i].dim(1), w = images[i].dim(2);
    if (h < p || w < p)
      throw DataError("image " + std::to_string(i) + " (" + std::to_string(h) + "x" + std::to_string(w) +
                      ") is smaller than the patch size " + std::to_string(p));
    for (std::size_t y = 0; y + p <= h; y += options.stride)
      for (std::size_t x = 0; x + p <= w; x += options.stride) grid.push_back({i, y, x});
  }
  if (options.count == 0 || options.count == grid.size()) return grid;

  Rng rng(options.seed);
  if (options.count < grid.size()) {
    for (std::size_t i = 0; i < options.count; ++i) std::swap(grid[i], grid[i + rng.below(grid.size() - i)]);
    grid.resize(options.count);
    return grid;
  }
  while (grid.size() < options.count) {
    const std::size_t i = rng.below(images.size());
    const std::size_t h = images[i].dim(1), w = images[i].dim(2);
    grid.push_back({i, rng.below(h - p + 1), rng.below(w - p + 1)});
  }
  return grid;
}

Tensor<float> crop(const Tensor<float>& chw, std::size_t y, std::size_t x, std::size_t size) {
  require_chw(chw, "crop");
  const std::size_t c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
  if (y + size > h || x + size > w) throw ShapeError("crop: window exceeds image bounds");
  Tensor<float> out({c, size, size});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t r = 0; r < size; ++r)
      std::copy_n(chw.ptr() + (ch * h + y + r) * w + x, size, out.ptr() + (ch * size + r) * size);
  return out;
}

PatchSet extract_patches(const std::vector<Tensor<float>>& images, const PatchOptions& options,
                         const NoiseSpec& noise) {
  PatchSet set;
  set.patch_size = options.patch_size;
  for (const auto& loc : patch_locations(images, options))
    set.clean.push_back(crop(images[loc.image], loc.y, loc.x, options.patch_size));
  renoise(set, noise);
  return set;
}

PatchSet extract_paired_patches(const std::vector<Tensor<float>>& clean, const std::vector<Tensor<float>>& noisy,
                                const PatchOptions& options) {
  if (clean.size() != noisy.size()) throw DataError("paired data: clean/noisy image counts differ");
  for (std::size_t i = 0; i < clean.size(); ++i)
    if (clean[i].shape() != noisy[i].shape())
      throw DataError("paired data: image " + std::to_string(i) + " has mismatched clean/noisy shapes");
  PatchSet set;
  set.patch_size = options.patch_size;
  for (const auto& loc : patch_locations(clean, options)) {
    set.clean.push_back(crop(clean[loc.image], loc.y, loc.x, options.patch_size));
    set.noisy.push_back(crop(noisy[loc.image], loc.y, loc.x, options.patch_size));
  }
  return set;
}

void renoise(PatchSet& set, const NoiseSpec& noise) {
  set.noisy.resize(set.clean.size());
  for (std::size_t i = 0; i < set.clean.size(); ++i)
    set.noisy[i] = add_awgn(set.clean[i], {noise.sigma, mix_seed(noise.seed, i)});
}

int augment_turns(std::uint64_t seed) {
  Rng rng(seed);
  return static_cast<int>(rng.below(4));
}

std::pair<Tensor<float>, Tensor<float>> augment(const Tensor<float>& clean, const Tensor<float>& noisy,
                                                std::uint64_t seed) {
  require_chw(clean, "augment");
  if (clean.shape() != noisy.shape()) throw ShapeError("augment: clean/noisy shapes differ");
  if (clean.dim(1) != clean.dim(2)) throw ShapeError("augment: patches must be square");
  const int k = augment_turns(seed);
  if (k == 0) return {clean, noisy};
  return {rotate_chw(clean, k), rotate_chw(noisy, k)};
}

std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, std::size_t batch_size, std::uint64_t seed) {
  if (batch_size == 0) throw std::invalid_argument("batch size must be >= 1");
  if (n == 0) throw DataError("cannot batch an empty patch set");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; start += batch_size)
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + batch_size)));
  return out;
}

Tensor<float> stack(const std::vector<Tensor<float>>& items) {
  if (items.empty()) throw ShapeError("stack: no tensors");
  Shape shape{items.size()};
  for (const std::size_t d : items.front().shape()) shape.push_back(d);
  Tensor<float> out(shape);
  const std::size_t n = items.front().size();
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].shape() != items.front().shape()) throw ShapeError("stack: shape mismatch");
    std::copy_n(items[i].ptr(), n, out.ptr() + i * n);
  }
  return out;
}

BatchIterator::BatchIterator(const PatchSet& set, std::size_t batch_size, std::uint64_t seed, bool augment)
    : set_(set), order_(batch_indices(set.size(), batch_size, seed)), seed_(seed), augment_(augment) {
  if (set.noisy.size() != set.clean.size()) throw DataError("patch set clean/noisy lists are not aligned");
}

bool BatchIterator::next(Batch& out) {
  if (cursor_ >= order_.size()) return false;
  std::vector<Tensor<float>> clean, noisy;
  for (const std::size_t i : order_[cursor_]) {
    if (augment_) {
      auto [c, n] = augment(set_.clean[i], set_.noisy[i], mix_seed(seed_, 0x1000000ULL + i));
      clean.push_back(std::move(c));
      noisy.push_back(std::move(n));
    } else {
      clean.push_back(set_.clean[i]);
      noisy.push_back(set_.noisy[i]);
    }
  }
  out.clean = stack(clean);
  out.noisy = stack(noisy);
  ++cursor_;
  return true;
}

std::vector<std::pair<std::string, ImageBuffer>> load_folder(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  std::map<std::string, std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const auto ext = entry.path().extension().string();
    if (entry.is_regular_file() && (ext == ".pgm" || ext == ".ppm"))
      files.emplace(entry.path().filename().string(), entry.path());
  }
  std::vector<std::pair<std::string, ImageBuffer>> out;
  for (const auto& [name, path] : files) out.emplace_back(name, load_pnm(path));
  return out;
}

std::vector<ImagePair> load_paired_folder(const std::filesystem::path& root) {
  auto clean = load_folder(root / "clean");
  const auto noisy = load_folder(root / "noisy");
  std::map<std::string, const ImageBuffer*> by_stem;
  for (const auto& [name, img] : noisy) by_stem[std::filesystem::path(name).stem().string()] = &img;
  std::vector<ImagePair> out;
  for (auto& [name, img] : clean) {
    const auto stem = std::filesystem::path(name).stem().string();
    const auto it = by_stem.find(stem);
    if (it == by_stem.end()) throw DataError("paired data: no noisy counterpart for " + name);
    if (it->second->height != img.height || it->second->width != img.width ||
        it->second->channels != img.channels)
      throw DataError("paired data: size mismatch for " + name);
    out.push_back({stem, std::move(img), *it->second});
  }
  if (out.size() != noisy.size()) throw DataError("paired data: noisy folder has unmatched files");
  return out;
}

}  // namespace mhcnn::data
