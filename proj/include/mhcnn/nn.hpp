#pragma once

// MHCNN building blocks and the assembled model.
//
// Parameters live in a name -> tensor map owned by the model; blocks only know
// their name prefix and dimensions. A forward pass binds the parameters to a
// tape and each block looks its tensors up by name.

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mhcnn/autodiff.hpp"
#include "mhcnn/tensor.hpp"

namespace mhcnn::nn {

template <typename T>
using ParamMap = std::map<std::string, Tensor<T>>;

inline constexpr double kNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;
inline constexpr double kPreluInitSlope = 0.25;

struct ModelConfig {
  std::size_t width = 128;
  std::size_t heads = 3;
  // Counterclockwise quarter turns applied to the input of each head.
  std::vector<int> angles{0, 1, 2};
  bool use_mpa = true;
  std::size_t in_channels = 1;
  std::uint64_t seed = 0;

  // Throws std::invalid_argument.
  void validate() const;
  std::size_t fused_channels() const { return heads * width; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Adaptive ECA kernel length: |log2(C)/2 + 1/2| rounded to the odd integer
// in its [2m, 2m + 2) bracket.
std::size_t eca_kernel_size(std::size_t channels);

// Mutable state threaded through a forward pass.
template <typename T>
struct ForwardContext {
  ad::Tape<T>& tape;
  ParamMap<T>& buffers;
  bool training = false;
  // Optional intermediate features: "head<i>" and "mpa_out".
  std::map<std::string, Tensor<T>>* taps = nullptr;
};

// Three conv3x3 + PReLU stages with concatenative inputs (c, 2c, 3c channels,
// each emitting c), then conv3x3 + batch norm + ReLU from 4c back to c.
class DenseBlock {
 public:
  DenseBlock(std::string prefix, std::size_t width) : prefix_(std::move(prefix)), width_(width) {}

  template <typename T>
  void init(ParamMap<T>& params, ParamMap<T>& buffers, std::uint64_t seed) const;
  template <typename T>
  ad::Var<T> forward(ForwardContext<T>& ctx, const ad::Var<T>& x) const;

  const std::string& prefix() const { return prefix_; }
  std::size_t width() const { return width_; }

 private:
  std::string prefix_;
  std::size_t width_;
};

// Entry 1x1 conv to `width` channels, then two dense blocks.
class PathBlock {
 public:
  PathBlock(std::string prefix, std::size_t in_channels, std::size_t width);

  template <typename T>
  void init(ParamMap<T>& params, ParamMap<T>& buffers, std::uint64_t seed) const;
  template <typename T>
  ad::Var<T> forward(ForwardContext<T>& ctx, const ad::Var<T>& image) const;

 private:
  std::string prefix_;
  std::size_t in_channels_;
  std::size_t width_;
  std::vector<DenseBlock> blocks_;
};

// Multi-path attention. Stream 0 is the unrotated head; every other stream is
// projected onto it through two batched matrix products, each followed by
// instance norm. With use_mpa off, streams are rotated back into
// registration and concatenated instead.
class MPABlock {
 public:
  MPABlock(std::string prefix, std::size_t width, std::vector<int> angles, bool use_mpa);

  template <typename T>
  void init(ParamMap<T>& params, std::uint64_t seed) const;
  // streams[i] is the output of head i, each (b, c, s, s).
  template <typename T>
  ad::Var<T> forward(ForwardContext<T>& ctx, const std::vector<ad::Var<T>>& streams) const;
  // The concatenation fed to the fusion conv; exposed for tests.
  template <typename T>
  ad::Var<T> pre_fusion(ForwardContext<T>& ctx, const std::vector<ad::Var<T>>& streams) const;

  std::size_t out_channels() const { return angles_.size() * width_; }

 private:
  template <typename T>
  ad::Var<T> project(ForwardContext<T>& ctx, const ad::Var<T>& base, const ad::Var<T>& rotated) const;

  std::string prefix_;
  std::size_t width_;
  std::vector<int> angles_;
  bool use_mpa_;
};

class ECALayer {
 public:
  ECALayer(std::string prefix, std::size_t channels)
      : prefix_(std::move(prefix)), channels_(channels), kernel_(eca_kernel_size(channels)) {}

  template <typename T>
  void init(ParamMap<T>& params, std::uint64_t seed) const;
  template <typename T>
  ad::Var<T> forward(ForwardContext<T>& ctx, const ad::Var<T>& x) const;
  // The per-channel gate, (b, c), each value in (0, 1).
  template <typename T>
  ad::Var<T> attention(ForwardContext<T>& ctx, const ad::Var<T>& x) const;

  std::size_t kernel_size() const { return kernel_; }

 private:
  std::string prefix_;
  std::size_t channels_;
  std::size_t kernel_;
};

// Four dense blocks at the fused width, then conv3x3 down to the image channels.
class TailBlock {
 public:
  TailBlock(std::string prefix, std::size_t channels, std::size_t out_channels);

  template <typename T>
  void init(ParamMap<T>& params, ParamMap<T>& buffers, std::uint64_t seed) const;
  template <typename T>
  ad::Var<T> forward(ForwardContext<T>& ctx, const ad::Var<T>& noise_maps) const;

  std::string output_weight() const { return prefix_ + ".out.weight"; }
  std::string output_bias() const { return prefix_ + ".out.bias"; }

 private:
  std::string prefix_;
  std::size_t channels_;
  std::size_t out_channels_;
  std::vector<DenseBlock> blocks_;
};

template <typename T>
class Model {
 public:
  explicit Model(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  ParamMap<T>& parameters() { return params_; }
  const ParamMap<T>& parameters() const { return params_; }
  // Batch-norm running statistics.
  ParamMap<T>& buffers() { return buffers_; }
  const ParamMap<T>& buffers() const { return buffers_; }
  std::size_t parameter_count() const;

  // Registers every parameter on the tape under its name.
  void bind(ad::Tape<T>& tape) const;

  // input (b, in_channels, s, s) -> (b, in_channels, s, s). The tape must
  // already be bound.
  ad::Var<T> forward(ad::Tape<T>& tape, const ad::Var<T>& input, bool training,
                     std::map<std::string, Tensor<T>>* taps = nullptr);
  // Eval-mode pass on a non-recording tape.
  Tensor<T> infer(const Tensor<T>& input, std::map<std::string, Tensor<T>>* taps = nullptr);

  // Zeroes the tail's final conv, making the model the identity map.
  void zero_tail_output();

  const std::vector<PathBlock>& heads() const { return heads_; }
  const MPABlock& mpa() const { return mpa_; }
  const ECALayer& eca() const { return eca_; }
  const TailBlock& tail() const { return tail_; }

  template <typename U>
  Model<U> cast() const {
    Model<U> out(config_);
    for (auto& [name, t] : out.parameters()) t = params_.at(name).template cast<U>();
    for (auto& [name, t] : out.buffers()) t = buffers_.at(name).template cast<U>();
    return out;
  }

 private:
  ModelConfig config_;
  std::vector<PathBlock> heads_;
  MPABlock mpa_;
  ECALayer eca_;
  TailBlock tail_;
  ParamMap<T> params_;
  ParamMap<T> buffers_;
};

extern template class Model<float>;
extern template class Model<double>;

}  // namespace mhcnn::nn
