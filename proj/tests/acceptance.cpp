// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fail.
//
//   acceptance [--only N] [--work DIR]

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "mhcnn/checkpoint.hpp"
#include "mhcnn/data.hpp"
#include "mhcnn/metrics.hpp"
#include "mhcnn/rng.hpp"
#include "mhcnn/runtime.hpp"

namespace fs = std::filesystem;
using namespace mhcnn;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

fs::path g_work;

double elapsed_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::vector<std::uint8_t> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

runtime::RunConfig desk_config() { return runtime::load_config(fs::path(MHCNN_SOURCE_DIR) / "configs/desk.json"); }

// ---- 1 ----------------------------------------------------------------------

Outcome gradient_fidelity() {
  const auto start = std::chrono::steady_clock::now();
  const auto rows = runtime::run_gradcheck_suite({});
  const double seconds = elapsed_since(start);
  bool ok = rows.size() == 6 && seconds <= 120.0;
  std::string detail;
  for (const auto& r : rows) {
    ok = ok && r.max_relative_error <= 1e-5;
    detail += fmt("%s %.2e; ", r.block.c_str(), r.max_relative_error);
  }
  return {ok, detail + fmt("%.1f s (limit 120 s)", seconds)};
}

// ---- 2 ----------------------------------------------------------------------

double conv_oracle_error(Rng& rng) {
  const std::size_t b = 1 + rng.below(2), cin = 1 + rng.below(4), cout = 1 + rng.below(4);
  const std::size_t k = 1 + 2 * rng.below(3);
  const std::size_t pad = rng.below(k / 2 + 1);
  const std::size_t stride = 1 + rng.below(2);
  const std::size_t h = k + rng.below(7), w = k + rng.below(7);
  const bool use_bias = rng.below(2) == 1;
  const auto x = Tensor<float>::gaussian({b, cin, h, w}, 0, 1, rng.next_u64());
  const auto wt = Tensor<float>::gaussian({cout, cin, k, k}, 0, 1, rng.next_u64());
  const auto bias = Tensor<float>::gaussian({cout}, 0, 1, rng.next_u64());
  const auto y = ops::conv2d(x, wt, use_bias ? &bias : nullptr, {stride, pad});
  const std::size_t oh = (h + 2 * pad - k) / stride + 1, ow = (w + 2 * pad - k) / stride + 1;
  if (y.shape() != Shape{b, cout, oh, ow}) return INFINITY;
  double worst = 0.0;
  for (std::size_t n = 0; n < b; ++n)
    for (std::size_t co = 0; co < cout; ++co)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          double acc = use_bias ? bias[co] : 0.0;
          for (std::size_t ci = 0; ci < cin; ++ci)
            for (std::size_t ky = 0; ky < k; ++ky)
              for (std::size_t kx = 0; kx < k; ++kx) {
                const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
                acc += static_cast<double>(x.at(n, ci, iy, ix)) * wt.at(co, ci, ky, kx);
              }
          worst = std::max(worst, std::abs(acc - y.at(n, co, oy, ox)));
        }
  return worst;
}

double matmul_oracle_error(Rng& rng) {
  const std::size_t b0 = 1 + rng.below(3), b1 = 1 + rng.below(3);
  const std::size_t m = 1 + rng.below(8), kk = 1 + rng.below(8), n = 1 + rng.below(8);
  const auto a = Tensor<float>::gaussian({b0, b1, m, kk}, 0, 1, rng.next_u64());
  const auto bm = Tensor<float>::gaussian({b0, b1, kk, n}, 0, 1, rng.next_u64());
  const auto c = ops::matmul_batched(a, bm);
  if (c.shape() != Shape{b0, b1, m, n}) return INFINITY;
  double worst = 0.0;
  for (std::size_t i0 = 0; i0 < b0; ++i0)
    for (std::size_t i1 = 0; i1 < b1; ++i1)
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          double acc = 0.0;
          for (std::size_t p = 0; p < kk; ++p) acc += static_cast<double>(a.at(i0, i1, i, p)) * bm.at(i0, i1, p, j);
          worst = std::max(worst, std::abs(acc - c.at(i0, i1, i, j)));
        }
  return worst;
}

Outcome oracle_equivalence() {
  Rng rng(2024);
  double conv = 0.0, mm = 0.0;
  for (int i = 0; i < 200; ++i) conv = std::max(conv, conv_oracle_error(rng));
  for (int i = 0; i < 200; ++i) mm = std::max(mm, matmul_oracle_error(rng));
  return {conv <= 1e-5 && mm <= 1e-5,
          fmt("conv2d max |err| %.2e over 200 cases, matmul_batched %.2e over 200 cases (limit 1e-5)", conv, mm)};
}

// ---- 3 ----------------------------------------------------------------------

Outcome residual_identity() {
  Rng rng(3);
  std::size_t exact = 0;
  for (int i = 0; i < 50; ++i) {
    const std::size_t channels = i % 2 == 0 ? 1 : 3;
    const std::size_t side = std::vector<std::size_t>{8, 16, 32}[i % 3];
    const std::size_t batch = 1 + rng.below(2);
    nn::Model<float> model({8, 3, {0, 1, 2}, true, channels, rng.next_u64()});
    model.zero_tail_output();
    const auto x = Tensor<float>::gaussian({batch, channels, side, side}, 0.5, 0.3, rng.next_u64());
    Tensor<float> y;
    if (i % 4 == 3) {
      ad::Tape<float> tape;
      model.bind(tape);
      y = model.forward(tape, tape.constant(x), true).value();
    } else {
      y = model.infer(x);
    }
    exact += y == x ? 1 : 0;
  }
  return {exact == 50, fmt("%zu/50 inputs reproduced bit-exact (gray/color, sizes 8/16/32)", exact)};
}

// ---- 4 ----------------------------------------------------------------------

Outcome structural_contract() {
  bool ok = true;
  std::string mpa;
  for (std::size_t heads = 1; heads <= 3; ++heads) {
    std::vector<int> angles{0, 1, 2};
    angles.resize(heads);
    nn::Model<float> model({8, heads, angles, true, 1, 0});
    std::map<std::string, Tensor<float>> taps;
    model.infer(Tensor<float>::gaussian({1, 1, 16, 16}, 0.5, 0.2, heads), &taps);
    const std::size_t c = taps.at("mpa_out").dim(1);
    ok = ok && c == heads * 8 && model.mpa().out_channels() == heads * 8;
    mpa += fmt("%zu heads -> %zu channels; ", heads, c);
  }
  Rng rng(4);
  std::size_t shapes_ok = 0;
  const std::size_t trials = 24;
  for (std::size_t i = 0; i < trials; ++i) {
    const std::size_t heads = 1 + rng.below(3);
    std::vector<int> angles;
    for (std::size_t h = 0; h < heads; ++h) angles.push_back(h == 0 ? 0 : static_cast<int>(rng.below(4)));
    const std::size_t channels = rng.below(2) == 0 ? 1 : 3;
    const std::size_t width = std::vector<std::size_t>{2, 4, 8}[rng.below(3)];
    const std::size_t side = 4 * (1 + rng.below(6));
    const std::size_t batch = 1 + rng.below(3);
    nn::Model<float> model({width, heads, angles, rng.below(2) == 0, channels, rng.next_u64()});
    const Shape in{batch, channels, side, side};
    shapes_ok += model.infer(Tensor<float>::gaussian(in, 0.5, 0.2, i)).shape() == in ? 1 : 0;
  }
  ok = ok && shapes_ok == trials;
  return {ok, mpa + fmt("model output shape == input shape in %zu/%zu random configs", shapes_ok, trials)};
}

// ---- 5 ----------------------------------------------------------------------

Outcome awgn_statistics() {
  const auto images = data::gen_synthetic(1, 1000, 5);
  const auto clean = data::to_float(images[0]);  // 10^6 samples
  bool ok = true;
  std::string detail;
  for (double sigma : {15.0, 25.0, 50.0}) {
    const auto noisy = data::add_awgn(clean, {sigma, static_cast<std::uint64_t>(sigma)});
    double sum = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < noisy.size(); ++i) {
      const double d = static_cast<double>(noisy[i]) - clean[i];
      sum += d;
      sq += d * d;
    }
    const double n = static_cast<double>(noisy.size());
    const double std = std::sqrt(sq / n - (sum / n) * (sum / n));
    const double target = sigma / 255.0;
    const double psnr = metrics::psnr_unclamped(clean, noisy);
    const double want = 20.0 * std::log10(255.0 / sigma);
    const bool this_ok = std::abs(std - target) <= 0.02 * target && std::abs(psnr - want) <= 0.15;
    ok = ok && this_ok;
    detail += fmt("sigma %g: std %.5f (target %.5f), PSNR %.3f dB (target %.3f); ", sigma, std, target, psnr, want);
  }
  return {ok, detail};
}

// ---- 6 ----------------------------------------------------------------------

Outcome desk_learning() {
  auto cfg = desk_config();
  cfg.output_dir = (g_work / "desk").string();
  fs::remove_all(cfg.output_dir);
  const auto start = std::chrono::steady_clock::now();
  auto result = runtime::train(cfg);
  const auto images = runtime::load_eval_images(cfg.eval, cfg.model.in_channels);
  const auto report = runtime::evaluate(result.model, images, cfg.noise_sigma, cfg.eval.seed);
  const double seconds = elapsed_since(start);
  if (result.log.size() < 10) return {false, "training produced fewer than 10 iterations"};
  const double initial = result.log.front().loss;
  double final_loss = 0.0;
  for (std::size_t i = result.log.size() - 10; i < result.log.size(); ++i) final_loss += result.log[i].loss;
  final_loss /= 10.0;
  const double gain = report.mean_psnr() - report.mean_noisy_psnr();
  const bool ok = result.log.size() == 200 && gain >= 0.5 && final_loss <= 0.5 * initial && seconds <= 600.0;
  return {ok, fmt("%zu iterations; held-out PSNR %.3f -> %.3f dB (gain %.3f, need 0.5); loss %.4g -> %.4g "
                  "(mean of last 10; need <= %.4g); %.0f s (limit 600 s)",
                  result.log.size(), report.mean_noisy_psnr(), report.mean_psnr(), gain, initial, final_loss,
                  0.5 * initial, seconds)};
}

// ---- 7 ----------------------------------------------------------------------

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(MHCNN_CLI) + " " + args + " >" + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome ablation_harness() {
  auto cfg = desk_config();
  cfg.max_iterations = 20;
  cfg.eval.count = 2;
  const fs::path dir = g_work / "ablate";
  fs::remove_all(dir);
  fs::create_directories(dir);
  cfg.output_dir = dir.string();
  std::ofstream(dir / "base.json") << runtime::to_json(cfg);
  const int code = run_cli("ablate --config " + (dir / "base.json").string(), dir / "stdout.txt");
  if (code != 0) return {false, fmt("mhcnn ablate exited %d", code)};

  std::ifstream table(dir / "ablation.tsv");
  std::vector<std::vector<std::string>> rows;
  for (std::string line; std::getline(table, line);) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, '\t');) cells.push_back(cell);
    rows.push_back(cells);
  }
  const std::vector<std::string> labels{"MHCNN",
                                        "MHCNN with 2 heads",
                                        "MHCNN with 1 head",
                                        "MHCNN (0°, 0°, 0°)",
                                        "MHCNN (0°, 90°, 270°)",
                                        "MHCNN (0°, 180°, 270°)",
                                        "MHCNN without MPA"};
  if (rows.size() != 8) return {false, fmt("expected header + 7 rows, got %zu lines", rows.size())};
  bool ok = true;
  for (std::size_t i = 0; i < 7; ++i) {
    const auto& r = rows[i + 1];
    ok = ok && r.size() == 7 && r[0] == labels[i] && r[2] == "20" && std::isfinite(std::stod(r[5])) &&
         fs::exists(dir / ("variant" + std::to_string(i)) / "last.mhck");
    // Shared seed and eval set: the noisy baseline is the same for every row.
    ok = ok && r[4] == rows[1][4];
  }
  return {ok, fmt("7 variant rows with matching labels, 20 iterations each, shared noisy baseline %s dB",
                  rows[1][4].c_str())};
}

// ---- 8 ----------------------------------------------------------------------

Outcome metric_correctness() {
  const auto ref = Tensor<double>::fill({1, 32, 32}, 0.4);
  const double p20 = metrics::psnr(ref, Tensor<double>::fill({1, 32, 32}, 0.5));
  const double cap = metrics::psnr(ref, ref);
  const auto images = data::gen_synthetic(2, 48, 8);
  const auto a = data::to_float(images[0]).cast<double>();
  const auto b = data::to_float(images[1]).cast<double>();
  const double self = metrics::ssim(a, a);
  const double ab = metrics::ssim(a, b), ba = metrics::ssim(b, a);
  const bool ok = std::abs(p20 - 20.0) <= 1e-6 && std::abs(cap - 100.0) <= 1e-6 && std::abs(self - 1.0) <= 1e-9 &&
                  std::abs(ab - ba) <= 1e-9;
  return {ok, fmt("PSNR(0.1 error) %.9f dB, PSNR(identity) %.9f dB, SSIM(x,x) %.12f, |SSIM(a,b)-SSIM(b,a)| %.1e",
                  p20, cap, self, std::abs(ab - ba))};
}

// ---- 9 ----------------------------------------------------------------------

Outcome persistence() {
  const fs::path dir = g_work / "persist";
  fs::remove_all(dir);
  fs::create_directories(dir);
  auto cfg = desk_config();
  nn::Model<float> model(cfg.model);
  Rng rng(9);
  for (auto* map : {&model.parameters(), &model.buffers()})
    for (auto& [name, t] : *map)
      for (auto& v : t.data()) v += static_cast<float>(rng.gaussian(0.0, 0.05));
  runtime::save_checkpoint(dir / "m.mhck", model, cfg);
  const auto back = runtime::load_checkpoint(dir / "m.mhck");
  bool round_trip = back.config == cfg;
  for (const auto& [name, t] : model.parameters()) round_trip = round_trip && back.model.parameters().at(name) == t;
  for (const auto& [name, t] : model.buffers()) round_trip = round_trip && back.model.buffers().at(name) == t;
  const auto bytes = read_bytes(dir / "m.mhck");
  round_trip = round_trip && runtime::serialize_checkpoint(back.model, back.config) == bytes;

  // Every byte of a minimal model, then random positions in the desk model.
  std::size_t trials = 0, caught = 0;
  auto flip_check = [&](std::vector<std::uint8_t> b, std::size_t pos, std::uint8_t mask) {
    b[pos] ^= mask;
    ++trials;
    try {
      runtime::deserialize_checkpoint(b);
    } catch (const runtime::CheckpointError&) {
      ++caught;
    }
  };
  runtime::RunConfig small;
  small.model = {1, 1, {0}, true, 1, 0};
  const auto small_bytes = runtime::serialize_checkpoint(nn::Model<float>(small.model), small);
  for (std::size_t i = 0; i < small_bytes.size(); ++i) flip_check(small_bytes, i, 0x01);
  for (int i = 0; i < 300; ++i)
    flip_check(bytes, rng.below(bytes.size()), static_cast<std::uint8_t>(1 + rng.below(255)));

  std::size_t pnm_ok = 0;
  for (std::size_t c : {1u, 3u}) {
    data::ImageBuffer img(37, 23, c);
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.below(256));
    const auto path = dir / (c == 1 ? "x.pgm" : "x.ppm");
    data::save_pnm(path, img);
    pnm_ok += data::load_pnm(path) == img && data::write_pnm(data::load_pnm(path)) == read_bytes(path) ? 1 : 0;
  }
  const bool ok = round_trip && caught == trials && pnm_ok == 2;
  return {ok, fmt("checkpoint round-trip %s (%zu bytes); %zu/%zu single-byte corruptions detected; PNM round-trip "
                  "%zu/2",
                  round_trip ? "bit-exact" : "MISMATCH", bytes.size(), caught, trials, pnm_ok)};
}

// ---- 10 ---------------------------------------------------------------------

std::vector<std::string> loss_columns(const fs::path& log) {
  std::vector<std::string> out;
  std::ifstream in(log);
  for (std::string line; std::getline(in, line);) out.push_back(line.substr(0, line.rfind('\t')));
  return out;
}

Outcome determinism() {
  auto cfg = desk_config();
  cfg.max_iterations = 40;
  cfg.output_dir = (g_work / "determinism").string();
  const fs::path out(cfg.output_dir);
  const fs::path first = g_work / "determinism_first";
  fs::remove_all(out);
  fs::remove_all(first);
  runtime::train(cfg);
  fs::rename(out, first);
  runtime::train(cfg);
  const auto log_a = loss_columns(first / "log.tsv"), log_b = loss_columns(out / "log.tsv");
  const bool logs = !log_a.empty() && log_a == log_b;
  const bool last = read_bytes(first / "last.mhck") == read_bytes(out / "last.mhck");
  const bool best = read_bytes(first / "best.mhck") == read_bytes(out / "best.mhck");
  return {logs && last && best, fmt("%zu log lines %s (seconds column excluded); last.mhck %s; best.mhck %s",
                                    log_a.size(), logs ? "identical" : "DIFFER", last ? "identical" : "DIFFER",
                                    best ? "identical" : "DIFFER")};
}

}  // namespace

int main(int argc, char** argv) {
  int only = 0;
  g_work = fs::path(MHCNN_BINARY_DIR) / "acceptance_work";
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--only") == 0 && i + 1 < argc) {
      only = std::atoi(argv[++i]);
    } else if (std::strcmp(argv[i], "--work") == 0 && i + 1 < argc) {
      g_work = argv[++i];
    } else {
      std::fprintf(stderr, "usage: %s [--only N] [--work DIR]\n", argv[0]);
      return 1;
    }
  }
  fs::create_directories(g_work);

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"gradient fidelity", gradient_fidelity},   {"oracle equivalence", oracle_equivalence},
      {"residual identity", residual_identity},   {"structural contract", structural_contract},
      {"AWGN statistics", awgn_statistics},       {"desk-scale learning", desk_learning},
      {"ablation harness", ablation_harness},     {"metric correctness", metric_correctness},
      {"persistence", persistence},               {"determinism", determinism},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (only != 0 && static_cast<std::size_t>(only) != i + 1) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::printf("%s %2zu %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail.c_str(),
                elapsed_since(start));
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
