#pragma once

// Image I/O, noise synthesis, the procedural corpus, and patch sampling.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mhcnn/tensor.hpp"

namespace mhcnn::data {

class PnmError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// 8-bit raster, row-major, channel-interleaved for color.
struct ImageBuffer {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 1;
  std::vector<std::uint8_t> pixels;

  ImageBuffer() = default;
  ImageBuffer(std::size_t h, std::size_t w, std::size_t c);

  std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c = 0) { return pixels[(y * width + x) * channels + c]; }
  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c = 0) const {
    return pixels[(y * width + x) * channels + c];
  }

  friend bool operator==(const ImageBuffer&, const ImageBuffer&) = default;
};

// Binary P5 (gray) or P6 (RGB), maxval 255.
ImageBuffer read_pnm(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> write_pnm(const ImageBuffer& image);
ImageBuffer load_pnm(const std::filesystem::path& path);
void save_pnm(const std::filesystem::path& path, const ImageBuffer& image);

// (channels, h, w) in [0, 1].
Tensor<float> to_float(const ImageBuffer& image);
// Clamps to [0, 1], scales by 255 and rounds half up.
ImageBuffer from_float(const Tensor<float>& chw);

struct NoiseSpec {
  // Standard deviation on the 0..255 scale.
  double sigma = 25.0;
  std::uint64_t seed = 0;
};

// clean + N(0, (sigma / 255)^2) per element. Not clamped.
Tensor<float> add_awgn(const Tensor<float>& clean, const NoiseSpec& spec);

// Procedural images: a smooth gradient, two or more sinusoidal textures and
// hard-edged rectangles. size >= 16.
std::vector<ImageBuffer> gen_synthetic(std::size_t count, std::size_t size, std::uint64_t seed,
                                       std::size_t channels = 1);

struct PatchLocation {
  std::size_t image = 0;
  std::size_t y = 0;
  std::size_t x = 0;

  friend bool operator==(const PatchLocation&, const PatchLocation&) = default;
};

struct PatchOptions {
  std::size_t patch_size = 32;
  std::size_t stride = 32;
  // 0 keeps the full grid. Fewer than the grid takes a seeded subset; more
  // adds uniformly random offsets.
  std::size_t count = 0;
  std::uint64_t seed = 0;
};

// images[i] is (c, h, w).
std::vector<PatchLocation> patch_locations(const std::vector<Tensor<float>>& images, const PatchOptions& options);
// (c, p, p) window of a (c, h, w) image.
Tensor<float> crop(const Tensor<float>& chw, std::size_t y, std::size_t x, std::size_t size);

struct PatchSet {
  std::size_t patch_size = 0;
  std::vector<Tensor<float>> clean;
  std::vector<Tensor<float>> noisy;

  std::size_t size() const { return clean.size(); }
  bool empty() const { return clean.empty(); }
};

// Clean patches from every image, each paired with independently drawn noise.
PatchSet extract_patches(const std::vector<Tensor<float>>& images, const PatchOptions& options,
                         const NoiseSpec& noise);
// Same-location crops from aligned clean/noisy images.
PatchSet extract_paired_patches(const std::vector<Tensor<float>>& clean, const std::vector<Tensor<float>>& noisy,
                                const PatchOptions& options);
// Redraws every noisy member as clean + fresh AWGN; patch i uses mix_seed(seed, i).
void renoise(PatchSet& set, const NoiseSpec& noise);

// Uniform quarter-turn count drawn from the seed.
int augment_turns(std::uint64_t seed);
// Rotates both members by the same augment_turns(seed).
std::pair<Tensor<float>, Tensor<float>> augment(const Tensor<float>& clean, const Tensor<float>& noisy,
                                                std::uint64_t seed);

// Seeded shuffle of 0..n-1 split into batches; the last may be short.
std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, std::size_t batch_size, std::uint64_t seed);
// Stacks equally shaped (c, p, p) tensors into (b, c, p, p).
Tensor<float> stack(const std::vector<Tensor<float>>& items);

struct Batch {
  Tensor<float> clean;
  Tensor<float> noisy;
};

// One epoch over a patch set. Each patch appears exactly once.
class BatchIterator {
 public:
  BatchIterator(const PatchSet& set, std::size_t batch_size, std::uint64_t seed, bool augment = false);

  bool next(Batch& out);
  std::size_t batches() const { return order_.size(); }

 private:
  const PatchSet& set_;
  std::vector<std::vector<std::size_t>> order_;
  std::uint64_t seed_;
  bool augment_;
  std::size_t cursor_ = 0;
};

// Every .pgm/.ppm file in dir, sorted by filename.
std::vector<std::pair<std::string, ImageBuffer>> load_folder(const std::filesystem::path& dir);

struct ImagePair {
  std::string name;
  ImageBuffer clean;
  ImageBuffer noisy;
};

// <root>/clean/<name> and <root>/noisy/<name>, matched by basename.
std::vector<ImagePair> load_paired_folder(const std::filesystem::path& root);

}  // namespace mhcnn::data
