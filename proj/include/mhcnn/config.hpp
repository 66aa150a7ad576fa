#pragma once

// Run configuration: a single JSON document with a fixed schema. Unknown keys
// and out-of-range values are rejected with ConfigError.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "mhcnn/nn.hpp"

namespace mhcnn::runtime {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ImageSource {
  enum class Kind { synthetic, folder, paired };
  Kind kind = Kind::synthetic;
  // synthetic
  std::size_t count = 16;
  std::size_t size = 64;
  std::uint64_t seed = 1;
  // folder / paired
  std::string path;

  friend bool operator==(const ImageSource&, const ImageSource&) = default;
};

struct RunConfig {
  nn::ModelConfig model{8, 3, {0, 1, 2}, true, 1, 0};
  double noise_sigma = 25.0;
  std::size_t patch_size = 32;
  std::size_t patch_stride = 16;
  // Size of the patch pool; validation_fraction of it is held out.
  std::size_t patches_per_epoch = 256;
  double validation_fraction = 0.1;
  std::size_t batch_size = 8;
  std::size_t epochs = 1;
  // Stops early once this many updates ran; 0 means no cap.
  std::size_t max_iterations = 0;
  double lr = 1e-4;
  double decay_factor = 0.5;
  std::size_t decay_interval = 30;
  ImageSource data;
  // Held-out images for evaluation after training.
  ImageSource eval{ImageSource::Kind::synthetic, 4, 64, 9001, {}};
  std::uint64_t seed = 0;
  std::string output_dir = "run";

  // Throws ConfigError.
  void validate() const;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::filesystem::path& path);
// Canonical JSON form; parse_config(to_json(c)) == c.
std::string to_json(const RunConfig& config);

}  // namespace mhcnn::runtime
