#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

#include "mhcnn/optim.hpp"
#include "mhcnn/rng.hpp"
#include "mhcnn/runtime.hpp"

namespace mhcnn::runtime {
namespace {

// Salts for the independent random streams of one run.
enum Stream : std::uint64_t { kPatchSample = 1, kInitialNoise, kSplit, kEpochNoise = 1000, kEpochOrder = 2000000 };

std::vector<Tensor<float>> to_tensors(const std::vector<data::ImageBuffer>& images, std::size_t channels) {
  std::vector<Tensor<float>> out;
  for (const auto& img : images) {
    if (img.channels != channels)
      throw data::DataError("image has " + std::to_string(img.channels) + " channels, model expects " +
                            std::to_string(channels));
    out.push_back(data::to_float(img));
  }
  return out;
}

struct Split {
  data::PatchSet train;
  data::PatchSet validation;
};

Split split_patches(const data::PatchSet& pool, double fraction, std::uint64_t seed) {
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
  std::size_t n_val = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(pool.size())));
  if (fraction > 0.0 && n_val == 0) n_val = 1;
  if (n_val >= pool.size()) n_val = pool.size() - 1;
  Split s;
  s.train.patch_size = s.validation.patch_size = pool.patch_size;
  for (std::size_t k = 0; k < order.size(); ++k) {
    auto& dst = k < order.size() - n_val ? s.train : s.validation;
    dst.clean.push_back(pool.clean[order[k]]);
    dst.noisy.push_back(pool.noisy[order[k]]);
  }
  return s;
}

// Mean l2 loss over a patch set in eval mode.
double validation_loss(nn::Model<float>& model, const data::PatchSet& set, std::size_t batch_size) {
  double sum_sq = 0.0;
  for (std::size_t start = 0; start < set.size(); start += batch_size) {
    const std::size_t end = std::min(set.size(), start + batch_size);
    std::vector<Tensor<float>> clean(set.clean.begin() + start, set.clean.begin() + end);
    std::vector<Tensor<float>> noisy(set.noisy.begin() + start, set.noisy.begin() + end);
    const auto out = model.infer(data::stack(noisy));
    const auto target = data::stack(clean);
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double d = static_cast<double>(out[i]) - target[i];
      sum_sq += d * d;
    }
  }
  return sum_sq / (2.0 * static_cast<double>(set.size()));
}

}  // namespace

std::string format_log_line(const LogEntry& e) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%zu\t%zu\t%.9g\t%.6g\t%.3f", e.epoch, e.iteration, e.loss, e.lr, e.seconds);
  return buf;
}

std::vector<Tensor<float>> load_clean_images(const ImageSource& source, std::size_t channels) {
  switch (source.kind) {
    case ImageSource::Kind::synthetic:
      return to_tensors(data::gen_synthetic(source.count, source.size, source.seed, channels), channels);
    case ImageSource::Kind::folder: {
      std::vector<data::ImageBuffer> images;
      for (auto& [name, img] : data::load_folder(source.path)) images.push_back(std::move(img));
      if (images.empty()) throw data::DataError("no .pgm/.ppm images in " + source.path);
      return to_tensors(images, channels);
    }
    case ImageSource::Kind::paired:
      break;
  }
  throw data::DataError("paired sources carry their own noisy images");
}

TrainResult train(const RunConfig& config, const TrainHooks& hooks) {
  config.validate();
  const std::filesystem::path out_dir(config.output_dir);
  std::filesystem::create_directories(out_dir);

  TrainResult result{{}, {}, out_dir / "last.mhck", out_dir / "best.mhck", out_dir / "log.tsv",
                     nn::Model<float>(config.model)};
  std::ofstream log(result.log_path, std::ios::trunc);
  if (!log) throw TrainingError("cannot write " + result.log_path.string());
  auto& model = result.model;

  if (config.epochs == 0) {
    save_checkpoint(result.last_checkpoint, model, config);
    save_checkpoint(result.best_checkpoint, model, config);
    return result;
  }

  const std::size_t channels = config.model.in_channels;
  const data::PatchOptions patch_opts{config.patch_size, config.patch_stride, config.patches_per_epoch,
                                      mix_seed(config.seed, kPatchSample)};
  const bool synthetic_noise = config.data.kind != ImageSource::Kind::paired;
  data::PatchSet pool;
  if (synthetic_noise) {
    pool = data::extract_patches(load_clean_images(config.data, channels), patch_opts,
                                 {config.noise_sigma, mix_seed(config.seed, kInitialNoise)});
  } else {
    std::vector<data::ImageBuffer> clean, noisy;
    for (auto& p : data::load_paired_folder(config.data.path)) {
      clean.push_back(std::move(p.clean));
      noisy.push_back(std::move(p.noisy));
    }
    if (clean.empty()) throw data::DataError("no image pairs under " + config.data.path);
    pool = data::extract_paired_patches(to_tensors(clean, channels), to_tensors(noisy, channels), patch_opts);
  }
  auto [train_set, val_set] = split_patches(pool, config.validation_fraction, mix_seed(config.seed, kSplit));

  optim::AdamState<float> adam;
  const optim::LrSchedule schedule{config.lr, config.decay_factor, config.decay_interval};
  const auto start = std::chrono::steady_clock::now();
  double best = std::numeric_limits<double>::infinity();
  std::size_t iteration = 0;
  bool stop = false;
  bool saved_best = false;

  for (std::size_t epoch = 0; epoch < config.epochs && !stop; ++epoch) {
    adam.lr = schedule.rate(epoch);
    if (synthetic_noise) data::renoise(train_set, {config.noise_sigma, mix_seed(config.seed, kEpochNoise + epoch)});
    data::BatchIterator batches(train_set, config.batch_size, mix_seed(config.seed, kEpochOrder + epoch), true);
    data::Batch batch;
    double epoch_loss = 0.0;
    std::size_t epoch_batches = 0;
    while (batches.next(batch)) {
      ad::Tape<float> tape;
      model.bind(tape);
      const auto out = model.forward(tape, tape.constant(batch.noisy), true);
      const auto loss = ad::l2_loss(out, tape.constant(batch.clean));
      const double value = loss.value()[0];
      if (!std::isfinite(value))
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", iteration " +
                            std::to_string(iteration + 1));
      const auto grads = tape.backward(loss);
      optim::adam_step(adam, model.parameters(), grads);
      ++iteration;
      epoch_loss += value;
      ++epoch_batches;

      const LogEntry entry{epoch, iteration, value, adam.lr,
                           std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()};
      result.log.push_back(entry);
      log << format_log_line(entry) << '\n' << std::flush;
      if (hooks.on_iteration) hooks.on_iteration(entry);
      if (config.max_iterations != 0 && iteration >= config.max_iterations) {
        stop = true;
        break;
      }
    }

    const double val = val_set.empty() ? epoch_loss / static_cast<double>(epoch_batches)
                                       : validation_loss(model, val_set, config.batch_size);
    result.validation_loss.push_back(val);
    save_checkpoint(result.last_checkpoint, model, config);
    if (val < best || !saved_best) {
      best = val;
      saved_best = true;
      save_checkpoint(result.best_checkpoint, model, config);
    }
  }
  return result;
}

}  // namespace mhcnn::runtime
