#pragma once

// Binary checkpoint:
//   "MHCK" | u32 version | u32 n + config JSON | u32 count |
//   count x (u32 n + name | u32 rank | rank x u32 dim | f32 payload) | u32 crc32
// Integers and floats are little-endian. The CRC covers every preceding byte.

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

#include "mhcnn/config.hpp"
#include "mhcnn/nn.hpp"

namespace mhcnn::runtime {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  RunConfig config;
  nn::Model<float> model;
};

std::vector<std::uint8_t> serialize_checkpoint(const nn::Model<float>& model, const RunConfig& config);
// Validates magic, version, checksum, and every tensor against the model the
// embedded config builds.
Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const nn::Model<float>& model, const RunConfig& config);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace mhcnn::runtime
