// Times the OpenMP kernels against the serial reference loops on the shapes
// the desk model actually runs, plus one full training step.
//
//   bench_kernels [--reps N]

#include <omp.h>

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "mhcnn/kernels.hpp"
#include "mhcnn/nn.hpp"
#include "mhcnn/optim.hpp"
#include "mhcnn/tensor.hpp"

using namespace mhcnn;

namespace {

double seconds_per_call(int reps, const std::function<void()>& f) {
  f();  // warm-up
  const auto start = std::chrono::steady_clock::now();
  for (int i = 0; i < reps; ++i) f();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() / reps;
}

std::vector<float> random_vec(std::size_t n, std::uint64_t seed) {
  const auto t = Tensor<float>::gaussian({n}, 0.0, 1.0, seed);
  return {t.data().begin(), t.data().end()};
}

void row(const char* name, double flops, double parallel, double serial) {
  std::printf("%-34s %10.3f %10.3f %8.2fx %8.2f\n", name, parallel * 1e3, serial * 1e3, serial / parallel,
              flops / parallel * 1e-9);
}

void bench_gemm(int reps, std::size_t m, std::size_t n, std::size_t k, bool tb) {
  const auto a = random_vec(m * k, 1), b = random_vec(k * n, 2);
  std::vector<float> c(m * n);
  const std::size_t ldb = tb ? k : n;
  const double p = seconds_per_call(
      reps, [&] { kernels::gemm(false, tb, m, n, k, a.data(), k, b.data(), ldb, c.data(), n, false); });
  const double s = seconds_per_call(
      reps, [&] { kernels::serial::gemm(false, tb, m, n, k, a.data(), k, b.data(), ldb, c.data(), n, false); });
  char name[64];
  std::snprintf(name, sizeof name, "gemm%s %zux%zux%zu", tb ? "_nt" : "", m, n, k);
  row(name, 2.0 * m * n * k, p, s);
}

void bench_conv(int reps, std::size_t batch, std::size_t cin, std::size_t cout, std::size_t side, std::size_t kernel) {
  kernels::ConvGeometry g{batch, cin, side, side, cout, kernel, kernel, 1, kernel / 2};
  const auto x = random_vec(batch * cin * side * side, 3);
  const auto w = random_vec(g.weight_size(), 4);
  const auto bias = random_vec(cout, 5);
  const auto dy = random_vec(batch * cout * side * side, 6);
  std::vector<float> y(dy.size()), dx(x.size()), dw(w.size()), db(cout);
  const double flops = 2.0 * batch * cout * side * side * g.patch_size();
  char name[64];

  std::snprintf(name, sizeof name, "conv%zu fwd b%zu %zu->%zu %zux%zu", kernel, batch, cin, cout, side, side);
  row(name, flops, seconds_per_call(reps, [&] { kernels::conv2d_forward(g, x.data(), w.data(), bias.data(), y.data()); }),
      seconds_per_call(reps, [&] { kernels::serial::conv2d_forward(g, x.data(), w.data(), bias.data(), y.data()); }));
  std::snprintf(name, sizeof name, "conv%zu bwd-in b%zu %zu->%zu", kernel, batch, cin, cout);
  row(name, flops, seconds_per_call(reps, [&] { kernels::conv2d_backward_input(g, w.data(), dy.data(), dx.data()); }),
      seconds_per_call(reps, [&] { kernels::serial::conv2d_backward_input(g, w.data(), dy.data(), dx.data()); }));
  std::snprintf(name, sizeof name, "conv%zu bwd-w b%zu %zu->%zu", kernel, batch, cin, cout);
  row(name, flops,
      seconds_per_call(reps, [&] { kernels::conv2d_backward_weight(g, x.data(), dy.data(), dw.data(), db.data()); }),
      seconds_per_call(reps,
                       [&] { kernels::serial::conv2d_backward_weight(g, x.data(), dy.data(), dw.data(), db.data()); }));
}

void bench_matmul(int reps, std::size_t batch, std::size_t m, std::size_t k, std::size_t n) {
  const auto a = random_vec(batch * m * k, 7), b = random_vec(batch * k * n, 8);
  std::vector<float> c(batch * m * n);
  char name[64];
  std::snprintf(name, sizeof name, "matmul_batched %zu x %zux%zux%zu", batch, m, k, n);
  row(name, 2.0 * batch * m * n * k,
      seconds_per_call(reps, [&] { kernels::matmul_batched(batch, m, k, n, a.data(), b.data(), c.data()); }),
      seconds_per_call(reps, [&] { kernels::serial::matmul_batched(batch, m, k, n, a.data(), b.data(), c.data()); }));
}

void bench_train_step(int reps) {
  nn::Model<float> model({8, 3, {0, 1, 2}, true, 1, 0});
  const auto noisy = Tensor<float>::gaussian({8, 1, 32, 32}, 0.5, 0.2, 1);
  const auto clean = Tensor<float>::gaussian({8, 1, 32, 32}, 0.5, 0.1, 2);
  optim::AdamState<float> adam;
  const double t = seconds_per_call(reps, [&] {
    ad::Tape<float> tape;
    model.bind(tape);
    const auto out = model.forward(tape, tape.constant(noisy), true);
    const auto loss = ad::l2_loss(out, tape.constant(clean));
    optim::adam_step(adam, model.parameters(), tape.backward(loss));
  });
  std::printf("train step (width 8, 3 heads, batch 8, 32x32): %.1f ms\n", t * 1e3);
}

}  // namespace

int main(int argc, char** argv) {
  int reps = 5;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--reps") == 0 && i + 1 < argc) {
      reps = std::max(1, std::atoi(argv[++i]));
    } else {
      std::fprintf(stderr, "usage: %s [--reps N]\n", argv[0]);
      return 1;
    }
  }
  std::printf("threads: %d, reps: %d\n", omp_get_max_threads(), reps);
  std::printf("%-34s %10s %10s %9s %8s\n", "kernel", "omp ms", "serial ms", "speedup", "GFLOP/s");
  bench_gemm(reps, 24, 1024, 216, false);
  bench_gemm(reps, 96, 1024, 216, false);
  bench_gemm(reps, 24, 864, 1024, true);
  bench_conv(reps, 8, 24, 24, 32, 3);
  bench_conv(reps, 8, 96, 24, 32, 3);
  bench_conv(reps, 8, 1, 8, 32, 1);
  bench_matmul(reps, 64, 32, 32, 32);
  bench_train_step(std::max(1, reps / 2));
  return 0;
}
