// Times the OpenMP kernels against the serial reference.
//   kernel_bench [--sizes 64,128,256] [--reps 5]
#include <CLI11.hpp>
#include <omp.h>

#include <chrono>
#include <cstdio>
#include <functional>

#include "tbvad/kernels.hpp"
#include "tbvad/hashing.hpp"

using namespace tbvad;

namespace {

Matrix random(std::size_t r, std::size_t c, Rng &rng) {
  Matrix m(r, c);
  for (double &x : m.flat())
    x = rng.uniform(-1, 1);
  return m;
}

double best_ms(int reps, const std::function<void()> &f) {
  double best = 1e300;
  for (int i = 0; i < reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    const auto t1 = std::chrono::steady_clock::now();
    best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return best;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"kernel benchmark"};
  std::vector<std::size_t> sizes{64, 128, 256};
  int reps = 5;
  app.add_option("--sizes", sizes)->delimiter(',');
  app.add_option("--reps", reps)->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);

  std::printf("threads=%d\n", omp_get_max_threads());
  std::printf("%-10s %6s %12s %12s %8s\n", "kernel", "n", "serial_ms", "omp_ms", "speedup");
  Rng rng(0);
  for (std::size_t n : sizes) {
    const Matrix a = random(n, n, rng), b = random(n, n, rng);
    const Vector x(n, 0.5);
    volatile double sink = 0;
    auto row = [&](const char *name, auto ser, auto par) {
      const double s = best_ms(reps, [&] { sink = sink + ser(); });
      const double p = best_ms(reps, [&] { sink = sink + par(); });
      std::printf("%-10s %6zu %12.3f %12.3f %8.2f\n", name, n, s, p, s / p);
    };
    row("matmul", [&] { return reference::matmul(a, b)(0, 0); },
        [&] { return kernels::matmul(a, b)(0, 0); });
    row("matmul_nt", [&] { return reference::matmul_nt(a, b)(0, 0); },
        [&] { return kernels::matmul_nt(a, b)(0, 0); });
    row("matmul_tn", [&] { return reference::matmul_tn(a, b)(0, 0); },
        [&] { return kernels::matmul_tn(a, b)(0, 0); });
    row("matvec", [&] { return reference::matvec(a, x)[0]; },
        [&] { return kernels::matvec(a, x)[0]; });
    row("matvec_t", [&] { return reference::matvec_t(a, x)[0]; },
        [&] { return kernels::matvec_t(a, x)[0]; });
  }
}
