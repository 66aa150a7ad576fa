#pragma once

// Training, inference, evaluation, the ablation harness, feature dumps and
// the gradient-check suite.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "mhcnn/checkpoint.hpp"
#include "mhcnn/config.hpp"
#include "mhcnn/data.hpp"
#include "mhcnn/metrics.hpp"
#include "mhcnn/nn.hpp"

namespace mhcnn::runtime {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LogEntry {
  std::size_t epoch = 0;
  std::size_t iteration = 0;
  double loss = 0.0;
  double lr = 0.0;
  double seconds = 0.0;
};

// One tab-separated line: epoch iter loss lr seconds.
std::string format_log_line(const LogEntry& e);

struct TrainResult {
  std::vector<LogEntry> log;
  std::vector<double> validation_loss;  // one per completed epoch
  std::filesystem::path last_checkpoint;
  std::filesystem::path best_checkpoint;
  std::filesystem::path log_path;
  nn::Model<float> model;
};

struct TrainHooks {
  // Receives every log line as it is produced.
  std::function<void(const LogEntry&)> on_iteration;
};

// Loads or synthesizes the clean training images.
std::vector<Tensor<float>> load_clean_images(const ImageSource& source, std::size_t channels);

// Writes <output_dir>/log.tsv, last.mhck and best.mhck.
TrainResult train(const RunConfig& config, const TrainHooks& hooks = {});

// Reflect-pads to the smallest square whose side is a multiple of 4, runs the
// model in eval mode and crops back. (c, h, w) in, (c, h, w) out, unclamped.
Tensor<float> denoise_tensor(nn::Model<float>& model, const Tensor<float>& noisy_chw,
                             std::map<std::string, Tensor<float>>* taps = nullptr);
// Full 8-bit path: to_float, denoise, clamp and quantize.
data::ImageBuffer denoise_image(nn::Model<float>& model, const data::ImageBuffer& image);

// Side of the padded square for an h x w image.
std::size_t padded_side(std::size_t h, std::size_t w);
// Reflect padding (mirrored about the edge pixel, folded when the pad exceeds
// the image) to side x side.
Tensor<float> reflect_pad(const Tensor<float>& chw, std::size_t side);

struct EvalRow {
  std::string name;
  double noisy_psnr = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  double sigma = 0.0;

  double mean_noisy_psnr() const;
  double mean_psnr() const;
  double mean_ssim() const;
  metrics::MetricReport metrics() const;
};

// Adds AWGN (image i uses mix_seed(seed, i)) and scores the denoised result
// against the clean image. PSNR is measured on the clamped float output,
// before 8-bit quantization.
EvalReport evaluate(nn::Model<float>& model, const std::vector<std::pair<std::string, Tensor<float>>>& clean,
                    double sigma, std::uint64_t seed);
// Scores clean/noisy pairs directly.
EvalReport evaluate_pairs(nn::Model<float>& model, const std::vector<data::ImagePair>& pairs);
std::vector<std::pair<std::string, Tensor<float>>> load_eval_images(const ImageSource& source,
                                                                     std::size_t channels);
void write_report(std::ostream& out, const EvalReport& report);

struct AblationVariant {
  std::string label;
  nn::ModelConfig model;
};

// The seven comparison configurations derived from a base model config.
std::vector<AblationVariant> ablation_variants(const nn::ModelConfig& base);

struct AblationRow {
  std::string label;
  std::size_t parameters = 0;
  std::size_t iterations = 0;
  double final_loss = 0.0;
  double noisy_psnr = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
};

// Trains and evaluates each variant with the base config's seed and budget;
// variant i writes under <output_dir>/variant<i>.
std::vector<AblationRow> run_ablation(const RunConfig& base, const TrainHooks& hooks = {});
void write_ablation_table(std::ostream& out, const std::vector<AblationRow>& rows);

// Stages: head<i> or mpa_out. Each channel is min-max normalized (constant
// channels become mid gray) and tiled into one PGM. Returns the tile count.
std::size_t dump_features(nn::Model<float>& model, const data::ImageBuffer& image, const std::string& stage,
                          const std::filesystem::path& out_dir);
// The tiled grid for one (c, h, w) feature tensor.
data::ImageBuffer feature_grid(const Tensor<float>& chw);

struct GradcheckRow {
  std::string block;
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::string worst;
  double seconds = 0.0;
};

struct GradcheckSuiteOptions {
  std::uint64_t seed = 0;
  // Per-tensor element sample for the full model; 0 checks everything.
  std::size_t model_elements_per_tensor = 16;
};

// DenseBlock, PathBlock, MPA, ECA, Tail and the full width-4 model on 8x8
// inputs, all in 64-bit with eps 1e-4.
std::vector<GradcheckRow> run_gradcheck_suite(const GradcheckSuiteOptions& options = {});

}  // namespace mhcnn::runtime
