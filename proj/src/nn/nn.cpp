#include "mhcnn/nn.hpp"

#include <cmath>
#include <stdexcept>

#include "mhcnn/rng.hpp"

namespace mhcnn::nn {
namespace {

template <typename T>
void he_conv(ParamMap<T>& params, const std::string& name, Shape shape, std::uint64_t seed) {
  std::size_t fan_in = 1;
  for (std::size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  params[name] = Tensor<T>::gaussian(std::move(shape), 0.0, stddev, mix_seed(seed, hash_name(name)));
}

template <typename T>
ad::Var<T> conv(ForwardContext<T>& ctx, const ad::Var<T>& x, const std::string& prefix, bool with_bias,
                std::size_t padding) {
  const auto w = ctx.tape.param(prefix + ".weight");
  if (!with_bias) return ad::conv2d(x, w, nullptr, {1, padding});
  const auto b = ctx.tape.param(prefix + ".bias");
  return ad::conv2d(x, w, &b, {1, padding});
}

void require_channels(const Shape& s, std::size_t channels, const char* block) {
  if (s.size() != 4 || s[1] != channels)
    throw ShapeError(std::string(block) + ": expected " + std::to_string(channels) +
                     " input channels, got " + to_string(s));
}

}  // namespace

void ModelConfig::validate() const {
  if (width < 1) throw std::invalid_argument("model width must be >= 1");
  if (heads < 1) throw std::invalid_argument("model needs at least one head");
  if (angles.size() != heads) throw std::invalid_argument("angles must list one quarter-turn count per head");
  if (angles.front() != 0) throw std::invalid_argument("the first head must receive the unrotated image");
  for (const int a : angles)
    if (a < 0 || a > 3) throw std::invalid_argument("angles must be quarter turns in 0..3");
  if (in_channels != 1 && in_channels != 3) throw std::invalid_argument("in_channels must be 1 or 3");
}

std::size_t eca_kernel_size(std::size_t channels) {
  const double t = std::abs(std::log2(static_cast<double>(channels)) / 2.0 + 0.5);
  const auto k = static_cast<std::size_t>(t);
  return k % 2 == 1 ? k : k + 1;
}

// ---- DenseBlock -----------------------------------------------------------

template <typename T>
void DenseBlock::init(ParamMap<T>& params, ParamMap<T>& buffers, std::uint64_t seed) const {
  const std::size_t c = width_;
  for (std::size_t s = 0; s < 3; ++s) {
    const std::string stage = prefix_ + ".stage" + std::to_string(s);
    he_conv(params, stage + ".weight", {c, (s + 1) * c, 3, 3}, seed);
    params[stage + ".bias"] = Tensor<T>::zeros({c});
    params[stage + ".slope"] = Tensor<T>::fill({c}, static_cast<T>(kPreluInitSlope));
  }
  const std::string fuse = prefix_ + ".compress";
  // No bias: batch norm removes any per-channel offset.
  he_conv(params, fuse + ".weight", {c, 4 * c, 3, 3}, seed);
  params[fuse + ".bn_gamma"] = Tensor<T>::fill({c}, T{1});
  params[fuse + ".bn_beta"] = Tensor<T>::zeros({c});
  buffers[fuse + ".bn_mean"] = Tensor<T>::zeros({c});
  buffers[fuse + ".bn_var"] = Tensor<T>::fill({c}, T{1});
}

template <typename T>
ad::Var<T> DenseBlock::forward(ForwardContext<T>& ctx, const ad::Var<T>& x) const {
  require_channels(x.shape(), width_, "dense block");
  std::vector<ad::Var<T>> features{x};
  for (std::size_t s = 0; s < 3; ++s) {
    const std::string stage = prefix_ + ".stage" + std::to_string(s);
    const auto in = features.size() == 1 ? x : ad::concat(features, 1);
    auto y = conv(ctx, in, stage, true, 1);
    y = ad::prelu(y, ctx.tape.param(stage + ".slope"));
    features.push_back(y);
  }
  const std::string fuse = prefix_ + ".compress";
  auto y = conv(ctx, ad::concat(features, 1), fuse, false, 1);
  y = ad::batch_norm(y, ctx.tape.param(fuse + ".bn_gamma"), ctx.tape.param(fuse + ".bn_beta"),
                     ctx.buffers.at(fuse + ".bn_mean"), ctx.buffers.at(fuse + ".bn_var"),
                     {ctx.training, kBatchNormMomentum, kNormEps});
  return ad::relu(y);
}

// ---- PathBlock ------------------------------------------------------------

PathBlock::PathBlock(std::string prefix, std::size_t in_channels, std::size_t width)
    : prefix_(std::move(prefix)), in_channels_(in_channels), width_(width) {
  blocks_.emplace_back(prefix_ + ".dense0", width_);
  blocks_.emplace_back(prefix_ + ".dense1", width_);
}

template <typename T>
void PathBlock::init(ParamMap<T>& params, ParamMap<T>& buffers, std::uint64_t seed) const {
  he_conv(params, prefix_ + ".entry.weight", {width_, in_channels_, 1, 1}, seed);
  params[prefix_ + ".entry.bias"] = Tensor<T>::zeros({width_});
  for (const auto& b : blocks_) b.init(params, buffers, seed);
}

template <typename T>
ad::Var<T> PathBlock::forward(ForwardContext<T>& ctx, const ad::Var<T>& image) const {
  require_channels(image.shape(), in_channels_, "path block");
  auto x = conv(ctx, image, prefix_ + ".entry", true, 0);
  for (const auto& b : blocks_) x = b.forward(ctx, x);
  return x;
}

// ---- MPABlock -------------------------------------------------------------

MPABlock::MPABlock(std::string prefix, std::size_t width, std::vector<int> angles, bool use_mpa)
    : prefix_(std::move(prefix)), width_(width), angles_(std::move(angles)), use_mpa_(use_mpa) {}

template <typename T>
void MPABlock::init(ParamMap<T>& params, std::uint64_t seed) const {
  if (use_mpa_) {
    for (std::size_t i = 0; i < angles_.size(); ++i) {
      const std::string proj = prefix_ + ".proj" + std::to_string(i);
      he_conv(params, proj + ".weight", {width_, width_, 1, 1}, seed);
      params[proj + ".bias"] = Tensor<T>::zeros({width_});
    }
  }
  const std::size_t c = out_channels();
  he_conv(params, prefix_ + ".fusion.weight", {c, c, 1, 1}, seed);
  params[prefix_ + ".fusion.bias"] = Tensor<T>::zeros({c});
}

template <typename T>
ad::Var<T> MPABlock::project(ForwardContext<T>&, const ad::Var<T>& base, const ad::Var<T>& rotated) const {
  // base, rotated: (b, c, s, s)
  const auto base_rows = ad::permute(base, {0, 2, 1, 3});    // (b, s, c, s)
  const auto rot_cols = ad::permute(rotated, {0, 2, 3, 1});  // (b, s, s, c)
  auto fused = ad::instance_norm(ad::matmul(base_rows, rot_cols), kNormEps);  // (b, s, c, c)
  auto back = ad::instance_norm(ad::matmul(fused, base_rows), kNormEps);     // (b, s, c, s)
  return ad::permute(back, {0, 2, 1, 3});
}

template <typename T>
ad::Var<T> MPABlock::pre_fusion(ForwardContext<T>& ctx, const std::vector<ad::Var<T>>& streams) const {
  if (streams.size() != angles_.size()) throw ShapeError("mpa: expected one stream per head");
  const Shape& shape = streams.front().shape();
  if (shape.size() != 4 || shape[1] != width_) throw ShapeError("mpa: stream channel mismatch");
  if (shape[2] != shape[3]) throw ShapeError("mpa: streams must have square spatial dims");
  for (const auto& s : streams)
    if (s.shape() != shape) throw ShapeError("mpa: stream shape mismatch");

  std::vector<ad::Var<T>> parts;
  parts.reserve(streams.size());
  if (use_mpa_) {
    const auto base = conv(ctx, streams[0], prefix_ + ".proj0", true, 0);
    for (std::size_t i = 1; i < streams.size(); ++i) {
      const auto rotated = conv(ctx, streams[i], prefix_ + ".proj" + std::to_string(i), true, 0);
      parts.push_back(project(ctx, base, rotated));
    }
    parts.push_back(base);
  } else {
    for (std::size_t i = 1; i < streams.size(); ++i) parts.push_back(ad::rotate90(streams[i], -angles_[i]));
    parts.push_back(streams[0]);
  }
  return parts.size() == 1 ? parts.front() : ad::concat(parts, 1);
}

template <typename T>
ad::Var<T> MPABlock::forward(ForwardContext<T>& ctx, const std::vector<ad::Var<T>>& streams) const {
  return conv(ctx, pre_fusion(ctx, streams), prefix_ + ".fusion", true, 0);
}

// ---- ECALayer -------------------------------------------------------------

template <typename T>
void ECALayer::init(ParamMap<T>& params, std::uint64_t seed) const {
  const std::string name = prefix_ + ".weight";
  params[name] = Tensor<T>::gaussian({kernel_}, 0.0, std::sqrt(2.0 / static_cast<double>(kernel_)),
                                     mix_seed(seed, hash_name(name)));
}

template <typename T>
ad::Var<T> ECALayer::attention(ForwardContext<T>& ctx, const ad::Var<T>& x) const {
  require_channels(x.shape(), channels_, "eca");
  return ad::sigmoid(ad::channel_conv1d(ad::global_avg_pool(x), ctx.tape.param(prefix_ + ".weight")));
}

template <typename T>
ad::Var<T> ECALayer::forward(ForwardContext<T>& ctx, const ad::Var<T>& x) const {
  return ad::scale_channels(x, attention(ctx, x));
}

// ---- TailBlock ------------------------------------------------------------

TailBlock::TailBlock(std::string prefix, std::size_t channels, std::size_t out_channels)
    : prefix_(std::move(prefix)), channels_(channels), out_channels_(out_channels) {
  for (int i = 0; i < 4; ++i) blocks_.emplace_back(prefix_ + ".dense" + std::to_string(i), channels_);
}

template <typename T>
void TailBlock::init(ParamMap<T>& params, ParamMap<T>& buffers, std::uint64_t seed) const {
  for (const auto& b : blocks_) b.init(params, buffers, seed);
  he_conv(params, output_weight(), {out_channels_, channels_, 3, 3}, seed);
  params[output_bias()] = Tensor<T>::zeros({out_channels_});
}

template <typename T>
ad::Var<T> TailBlock::forward(ForwardContext<T>& ctx, const ad::Var<T>& noise_maps) const {
  require_channels(noise_maps.shape(), channels_, "tail");
  auto x = noise_maps;
  for (const auto& b : blocks_) x = b.forward(ctx, x);
  return conv(ctx, x, prefix_ + ".out", true, 1);
}

// ---- Model ----------------------------------------------------------------

namespace {

std::vector<PathBlock> make_heads(const ModelConfig& config) {
  config.validate();
  std::vector<PathBlock> heads;
  for (std::size_t i = 0; i < config.heads; ++i)
    heads.emplace_back("head" + std::to_string(i), config.in_channels, config.width);
  return heads;
}

}  // namespace

template <typename T>
Model<T>::Model(ModelConfig config)
    : config_(std::move(config)),
      heads_(make_heads(config_)),
      mpa_("mpa", config_.width, config_.angles, config_.use_mpa),
      eca_("eca", config_.fused_channels()),
      tail_("tail", config_.fused_channels(), config_.in_channels) {
  const std::uint64_t seed = config_.seed;
  for (const auto& h : heads_) h.init(params_, buffers_, seed);
  mpa_.init(params_, seed);
  he_conv(params_, "lift.weight", {config_.fused_channels(), config_.in_channels, 1, 1}, seed);
  params_["lift.bias"] = Tensor<T>::zeros({config_.fused_channels()});
  eca_.init(params_, seed);
  tail_.init(params_, buffers_, seed);
}

template <typename T>
std::size_t Model<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_) n += t.size();
  return n;
}

template <typename T>
void Model<T>::bind(ad::Tape<T>& tape) const {
  for (const auto& [name, t] : params_) tape.parameter(name, t);
}

template <typename T>
ad::Var<T> Model<T>::forward(ad::Tape<T>& tape, const ad::Var<T>& input, bool training,
                             std::map<std::string, Tensor<T>>* taps) {
  const Shape& s = input.shape();
  if (s.size() != 4 || s[1] != config_.in_channels)
    throw ShapeError("model: expected (b, " + std::to_string(config_.in_channels) + ", s, s) input, got " +
                     to_string(s));
  if (s[2] != s[3]) throw ShapeError("model: input must be square, got " + to_string(s));

  ForwardContext<T> ctx{tape, buffers_, training, taps};
  std::vector<ad::Var<T>> streams;
  for (std::size_t i = 0; i < heads_.size(); ++i) {
    const auto head_in = config_.angles[i] == 0 ? input : ad::rotate90(input, config_.angles[i]);
    streams.push_back(heads_[i].forward(ctx, head_in));
    if (taps != nullptr) (*taps)["head" + std::to_string(i)] = streams.back().value();
  }
  const auto fused = mpa_.forward(ctx, streams);
  if (taps != nullptr) (*taps)["mpa_out"] = fused.value();
  const auto w = tape.param("lift.weight");
  const auto b = tape.param("lift.bias");
  const auto lifted = ad::conv2d(input, w, &b, {1, 0});
  const auto noise_maps = ad::sub(lifted, fused);
  const auto noise = tail_.forward(ctx, eca_.forward(ctx, noise_maps));
  return ad::sub(input, noise);
}

template <typename T>
Tensor<T> Model<T>::infer(const Tensor<T>& input, std::map<std::string, Tensor<T>>* taps) {
  ad::Tape<T> tape(false);
  bind(tape);
  return forward(tape, tape.constant(input), false, taps).value();
}

template <typename T>
void Model<T>::zero_tail_output() {
  auto& w = params_.at(tail_.output_weight());
  auto& b = params_.at(tail_.output_bias());
  w = Tensor<T>::zeros(w.shape());
  b = Tensor<T>::zeros(b.shape());
}

#define MHCNN_INSTANTIATE_NN(T)                                                                      \
  template void DenseBlock::init<T>(ParamMap<T>&, ParamMap<T>&, std::uint64_t) const;                \
  template ad::Var<T> DenseBlock::forward<T>(ForwardContext<T>&, const ad::Var<T>&) const;           \
  template void PathBlock::init<T>(ParamMap<T>&, ParamMap<T>&, std::uint64_t) const;                 \
  template ad::Var<T> PathBlock::forward<T>(ForwardContext<T>&, const ad::Var<T>&) const;            \
  template void MPABlock::init<T>(ParamMap<T>&, std::uint64_t) const;                                \
  template ad::Var<T> MPABlock::forward<T>(ForwardContext<T>&, const std::vector<ad::Var<T>>&) const; \
  template ad::Var<T> MPABlock::pre_fusion<T>(ForwardContext<T>&, const std::vector<ad::Var<T>>&)    \
      const;                                                                                         \
  template void ECALayer::init<T>(ParamMap<T>&, std::uint64_t) const;                                \
  template ad::Var<T> ECALayer::forward<T>(ForwardContext<T>&, const ad::Var<T>&) const;             \
  template ad::Var<T> ECALayer::attention<T>(ForwardContext<T>&, const ad::Var<T>&) const;           \
  template void TailBlock::init<T>(ParamMap<T>&, ParamMap<T>&, std::uint64_t) const;                 \
  template ad::Var<T> TailBlock::forward<T>(ForwardContext<T>&, const ad::Var<T>&) const;            \
  template class Model<T>;

MHCNN_INSTANTIATE_NN(float)
MHCNN_INSTANTIATE_NN(double)

#undef MHCNN_INSTANTIATE_NN

}  // namespace mhcnn::nn
