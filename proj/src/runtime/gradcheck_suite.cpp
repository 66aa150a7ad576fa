#include <chrono>

#include "mhcnn/gradcheck.hpp"
#include "mhcnn/rng.hpp"
#include "mhcnn/runtime.hpp"

namespace mhcnn::runtime {
namespace {

using ParamsD = nn::ParamMap<double>;

Tensor<double> probe_weights(const Shape& shape, std::uint64_t seed) {
  return Tensor<double>::gaussian(shape, 0.0, 1.0, seed);
}

// sum(y * R) for a fixed random R, so every output element carries gradient.
ad::Var<double> probe(const ad::Var<double>& y, std::uint64_t seed) {
  auto& tape = *y.tape();
  return ad::sum(ad::mul(y, tape.constant(probe_weights(y.shape(), seed))));
}

GradcheckRow timed(const std::string& block, const ad::LossFunction& loss, const ParamsD& params,
                   const ad::GradcheckOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  const auto r = ad::gradcheck(loss, params, options);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {block, r.max_relative_error, r.checked, r.worst_parameter + "[" + std::to_string(r.worst_index) + "]",
          seconds};
}

}  // namespace

std::vector<GradcheckRow> run_gradcheck_suite(const GradcheckSuiteOptions& options) {
  const std::uint64_t seed = options.seed;
  const ad::GradcheckOptions exhaustive{1e-4, 0, seed, 4};
  std::vector<GradcheckRow> rows;

  {
    nn::DenseBlock block("dense", 4);
    ParamsD params, buffers;
    block.init(params, buffers, seed);
    params["input"] = Tensor<double>::gaussian({2, 4, 6, 6}, 0.0, 1.0, mix_seed(seed, 1));
    rows.push_back(timed(
        "DenseBlock",
        [&](ad::Tape<double>& t) {
          auto local = buffers;
          nn::ForwardContext<double> ctx{t, local, true};
          return probe(block.forward(ctx, t.param("input")), mix_seed(seed, 2));
        },
        params, exhaustive));
  }
  {
    nn::PathBlock block("path", 1, 4);
    ParamsD params, buffers;
    block.init(params, buffers, seed);
    params["input"] = Tensor<double>::gaussian({2, 1, 6, 6}, 0.0, 1.0, mix_seed(seed, 3));
    rows.push_back(timed(
        "PathBlock",
        [&](ad::Tape<double>& t) {
          auto local = buffers;
          nn::ForwardContext<double> ctx{t, local, true};
          return probe(block.forward(ctx, t.param("input")), mix_seed(seed, 4));
        },
        params, exhaustive));
  }
  {
    nn::MPABlock block("mpa", 4, {0, 1, 2}, true);
    ParamsD params, buffers;
    block.init(params, seed);
    for (int i = 0; i < 3; ++i)
      params["stream" + std::to_string(i)] =
          Tensor<double>::gaussian({2, 4, 6, 6}, 0.0, 1.0, mix_seed(seed, 5 + static_cast<std::uint64_t>(i)));
    rows.push_back(timed(
        "MPA",
        [&](ad::Tape<double>& t) {
          nn::ForwardContext<double> ctx{t, buffers, true};
          return probe(block.forward(ctx, {t.param("stream0"), t.param("stream1"), t.param("stream2")}),
                       mix_seed(seed, 8));
        },
        params, exhaustive));
  }
  {
    nn::ECALayer block("eca", 12);
    ParamsD params, buffers;
    block.init(params, seed);
    params["input"] = Tensor<double>::gaussian({2, 12, 4, 4}, 0.0, 1.0, mix_seed(seed, 9));
    rows.push_back(timed(
        "ECA",
        [&](ad::Tape<double>& t) {
          nn::ForwardContext<double> ctx{t, buffers, true};
          return probe(block.forward(ctx, t.param("input")), mix_seed(seed, 10));
        },
        params, exhaustive));
  }
  {
    nn::TailBlock block("tail", 12, 1);
    ParamsD params, buffers;
    block.init(params, buffers, seed);
    params["input"] = Tensor<double>::gaussian({2, 12, 6, 6}, 0.0, 1.0, mix_seed(seed, 11));
    // The tail is the largest block; sample its tensors like the full model.
    rows.push_back(timed(
        "Tail",
        [&](ad::Tape<double>& t) {
          auto local = buffers;
          nn::ForwardContext<double> ctx{t, local, true};
          return probe(block.forward(ctx, t.param("input")), mix_seed(seed, 12));
        },
        params, {1e-4, options.model_elements_per_tensor, seed, 4}));
  }
  {
    nn::ModelConfig cfg{4, 3, {0, 1, 2}, true, 1, seed};
    nn::Model<double> model(cfg);
    const auto input = Tensor<double>::gaussian({2, 1, 8, 8}, 0.5, 0.25, mix_seed(seed, 13));
    const auto target = Tensor<double>::gaussian({2, 1, 8, 8}, 0.5, 0.25, mix_seed(seed, 14));
    rows.push_back(timed(
        "MHCNN (width 4, 8x8)",
        [&](ad::Tape<double>& t) {
          auto local = model;
          const auto out = local.forward(t, t.constant(input), true);
          return ad::l2_loss(out, t.constant(target));
        },
        model.parameters(), {1e-4, options.model_elements_per_tensor, seed, 4}));
  }
  return rows;
}

}  // namespace mhcnn::runtime
