#include <cstdio>
#include <ostream>

#include "mhcnn/rng.hpp"
#include "mhcnn/runtime.hpp"

namespace mhcnn::runtime {

std::vector<AblationVariant> ablation_variants(const nn::ModelConfig& base) {
  auto variant = [&](std::string label, std::vector<int> angles, bool use_mpa) {
    nn::ModelConfig m = base;
    m.heads = angles.size();
    m.angles = std::move(angles);
    m.use_mpa = use_mpa;
    return AblationVariant{std::move(label), m};
  };
  return {
      variant("MHCNN", {0, 1, 2}, true),
      variant("MHCNN with 2 heads", {0, 1}, true),
      variant("MHCNN with 1 head", {0}, true),
      variant("MHCNN (0°, 0°, 0°)", {0, 0, 0}, true),
      variant("MHCNN (0°, 90°, 270°)", {0, 1, 3}, true),
      variant("MHCNN (0°, 180°, 270°)", {0, 2, 3}, true),
      variant("MHCNN without MPA", {0, 1, 2}, false),
  };
}

std::vector<AblationRow> run_ablation(const RunConfig& base, const TrainHooks& hooks) {
  base.validate();
  const auto eval_images = load_eval_images(base.eval, base.model.in_channels);
  const auto variants = ablation_variants(base.model);
  std::vector<AblationRow> rows;
  for (std::size_t i = 0; i < variants.size(); ++i) {
    RunConfig cfg = base;
    cfg.model = variants[i].model;
    cfg.output_dir = (std::filesystem::path(base.output_dir) / ("variant" + std::to_string(i))).string();
    auto result = train(cfg, hooks);
    const auto report = evaluate(result.model, eval_images, base.noise_sigma, mix_seed(base.seed, 0xab1a7e));
    rows.push_back({variants[i].label, result.model.parameter_count(), result.log.size(),
                    result.log.empty() ? 0.0 : result.log.back().loss, report.mean_noisy_psnr(),
                    report.mean_psnr(), report.mean_ssim()});
  }
  return rows;
}

void write_ablation_table(std::ostream& out, const std::vector<AblationRow>& rows) {
  out << "variant\tparameters\titerations\tfinal_loss\tnoisy_psnr\tpsnr\tssim\n";
  char buf[320];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s\t%zu\t%zu\t%.6g\t%.4f\t%.4f\t%.6f\n", r.label.c_str(), r.parameters,
                  r.iterations, r.final_loss, r.noisy_psnr, r.psnr, r.ssim);
    out << buf;
  }
}

}  // namespace mhcnn::runtime
