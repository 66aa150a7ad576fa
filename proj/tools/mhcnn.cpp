// mhcnn: train, run and inspect the denoiser from the command line.
//
// Exit codes: 0 success, 1 usage error, 2 runtime failure.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "mhcnn/checkpoint.hpp"
#include "mhcnn/config.hpp"
#include "mhcnn/data.hpp"
#include "mhcnn/metrics.hpp"
#include "mhcnn/runtime.hpp"

namespace fs = std::filesystem;
using namespace mhcnn;

namespace {

constexpr double kGradcheckTolerance = 1e-5;

void print_log_line(const runtime::LogEntry& e) { std::cout << runtime::format_log_line(e) << std::endl; }

int cmd_train(const fs::path& config_path, const std::optional<std::string>& output_dir) {
  auto config = runtime::load_config(config_path);
  if (output_dir) config.output_dir = *output_dir;
  std::cout << "epoch\titer\tloss\tlr\tseconds\n";
  auto result = runtime::train(config, {print_log_line});
  std::cerr << "wrote " << result.last_checkpoint.string() << ", " << result.best_checkpoint.string() << ", "
            << result.log_path.string() << '\n';
  if (!result.validation_loss.empty()) {
    auto best = runtime::load_checkpoint(result.best_checkpoint);
    const auto images = runtime::load_eval_images(config.eval, config.model.in_channels);
    const auto report = runtime::evaluate(best.model, images, config.noise_sigma, config.eval.seed);
    std::fprintf(stderr, "held-out (best checkpoint, sigma %g): noisy %.4f dB, denoised %.4f dB, ssim %.4f\n",
                 config.noise_sigma, report.mean_noisy_psnr(), report.mean_psnr(), report.mean_ssim());
  }
  return 0;
}

int cmd_denoise(const fs::path& model_path, const fs::path& input, const fs::path& output,
                const std::optional<fs::path>& clean_path) {
  auto ckpt = runtime::load_checkpoint(model_path);
  const auto noisy = data::to_float(data::load_pnm(input));
  const auto out = runtime::denoise_tensor(ckpt.model, noisy);
  data::save_pnm(output, data::from_float(out));
  if (clean_path) {
    const auto clean = data::to_float(data::load_pnm(*clean_path));
    if (clean.shape() != noisy.shape()) throw data::DataError("--dump-psnr: reference image shape differs from input");
    std::printf("psnr_noisy\t%.4f\npsnr_denoised\t%.4f\nssim_denoised\t%.6f\n", metrics::psnr(clean, noisy),
                metrics::psnr(clean, out), metrics::ssim(clean, out));
  }
  return 0;
}

int cmd_eval(const fs::path& model_path, const fs::path& dir, double sigma, std::uint64_t seed,
             const std::optional<fs::path>& report_path) {
  auto ckpt = runtime::load_checkpoint(model_path);
  runtime::EvalReport report;
  if (fs::is_directory(dir / "clean") && fs::is_directory(dir / "noisy")) {
    report = runtime::evaluate_pairs(ckpt.model, data::load_paired_folder(dir));
  } else {
    runtime::ImageSource source;
    source.kind = runtime::ImageSource::Kind::folder;
    source.path = dir.string();
    report = runtime::evaluate(ckpt.model, runtime::load_eval_images(source, ckpt.config.model.in_channels), sigma,
                               seed);
  }
  runtime::write_report(std::cout, report);
  if (report_path) {
    std::ofstream out(*report_path);
    if (!out) throw data::DataError("cannot write " + report_path->string());
    runtime::write_report(out, report);
  }
  return 0;
}

int cmd_ablate(const fs::path& config_path, const std::optional<std::string>& output_dir) {
  auto config = runtime::load_config(config_path);
  if (output_dir) config.output_dir = *output_dir;
  const auto rows = runtime::run_ablation(config);
  runtime::write_ablation_table(std::cout, rows);
  std::ofstream table(fs::path(config.output_dir) / "ablation.tsv");
  if (!table) throw data::DataError("cannot write ablation table under " + config.output_dir);
  runtime::write_ablation_table(table, rows);
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, std::size_t sample) {
  const auto rows = runtime::run_gradcheck_suite({seed, sample});
  bool ok = true;
  std::printf("block\tmax_rel_error\tchecked\tworst\tseconds\n");
  for (const auto& r : rows) {
    std::printf("%s\t%.3e\t%zu\t%s\t%.2f\n", r.block.c_str(), r.max_relative_error, r.checked, r.worst.c_str(),
                r.seconds);
    ok = ok && r.max_relative_error <= kGradcheckTolerance;
  }
  if (!ok) {
    std::fprintf(stderr, "gradcheck: error above %.0e\n", kGradcheckTolerance);
    return 2;
  }
  return 0;
}

int cmd_dump_features(const fs::path& model_path, const fs::path& input, const std::string& stage,
                      const fs::path& out_dir) {
  auto ckpt = runtime::load_checkpoint(model_path);
  const auto tiles = runtime::dump_features(ckpt.model, data::load_pnm(input), stage, out_dir);
  std::printf("%s\t%zu tiles\t%s\n", stage.c_str(), tiles, (out_dir / (stage + ".pgm")).string().c_str());
  return 0;
}

int cmd_gen_data(std::size_t count, std::size_t size, std::uint64_t seed, std::size_t channels,
                 const fs::path& out_dir) {
  fs::create_directories(out_dir);
  const auto images = data::gen_synthetic(count, size, seed, channels);
  const char* ext = channels == 1 ? "pgm" : "ppm";
  for (std::size_t i = 0; i < images.size(); ++i) {
    char name[48];
    std::snprintf(name, sizeof name, "synthetic_%03zu.%s", i, ext);
    data::save_pnm(out_dir / name, images[i]);
  }
  std::printf("wrote %zu images to %s\n", images.size(), out_dir.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MHCNN image denoiser"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::string> output_dir;
  auto* train = app.add_subcommand("train", "Train a model from a JSON config");
  train->add_option("--config", config_path, "Run config (JSON)")->required();
  train->add_option("--output-dir", output_dir, "Override the config's output_dir");

  std::string model_path, input, output;
  std::optional<fs::path> clean_path;
  auto* denoise = app.add_subcommand("denoise", "Denoise one PGM/PPM image");
  denoise->add_option("--model", model_path, "Checkpoint (.mhck)")->required();
  denoise->add_option("--input", input, "Noisy input image")->required();
  denoise->add_option("--output", output, "Denoised output image")->required();
  denoise->add_option("--dump-psnr", clean_path, "Clean reference; prints PSNR/SSIM");

  std::string data_dir;
  double sigma = 25.0;
  std::uint64_t seed = 0;
  std::optional<fs::path> report_path;
  auto* eval = app.add_subcommand("eval", "Score a model on a folder of clean images (or clean/ + noisy/ pairs)");
  eval->add_option("--model", model_path, "Checkpoint (.mhck)")->required();
  eval->add_option("--data", data_dir, "Image folder")->required();
  eval->add_option("--sigma", sigma, "AWGN level on the 0..255 scale")->check(CLI::Range(0.0, 255.0));
  eval->add_option("--seed", seed, "Noise seed");
  eval->add_option("--report", report_path, "Also write the report here");

  auto* ablate = app.add_subcommand("ablate", "Train and score the seven comparison variants");
  ablate->add_option("--config", config_path, "Base run config (JSON)")->required();
  ablate->add_option("--output-dir", output_dir, "Override the config's output_dir");

  std::size_t sample = runtime::GradcheckSuiteOptions{}.model_elements_per_tensor;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every block in 64-bit");
  gradcheck->add_option("--seed", seed, "Seed for inputs and sampling");
  gradcheck->add_option("--sample", sample, "Elements per tensor for the sampled checks; 0 checks all");

  std::string stage, out_dir;
  auto* features = app.add_subcommand("dump-features", "Write a tiled PGM of intermediate features");
  features->add_option("--model", model_path, "Checkpoint (.mhck)")->required();
  features->add_option("--input", input, "Input image")->required();
  features->add_option("--stage", stage, "head<i> or mpa_out")->required();
  features->add_option("--out", out_dir, "Output directory")->required();

  std::size_t count = 16, size = 64, channels = 1;
  auto* gen = app.add_subcommand("gen-data", "Write procedural training images");
  gen->add_option("--count", count, "Number of images")->check(CLI::PositiveNumber);
  gen->add_option("--size", size, "Side length (>= 16)")->check(CLI::Range(std::size_t{16}, std::size_t{1} << 14));
  gen->add_option("--seed", seed, "Generator seed");
  gen->add_option("--channels", channels, "1 (PGM) or 3 (PPM)")->check(CLI::IsMember({1, 3}));
  gen->add_option("--out", out_dir, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "mhcnn: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (*train) return cmd_train(config_path, output_dir);
    if (*denoise) return cmd_denoise(model_path, input, output, clean_path);
    if (*eval) return cmd_eval(model_path, data_dir, sigma, seed, report_path);
    if (*ablate) return cmd_ablate(config_path, output_dir);
    if (*gradcheck) return cmd_gradcheck(seed, sample);
    if (*features) return cmd_dump_features(model_path, input, stage, out_dir);
    if (*gen) return cmd_gen_data(count, size, seed, channels, out_dir);
  } catch (const std::exception& e) {
    std::cerr << "mhcnn: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
