// Copyright 2026 The Loomflow Authors
// SPDX-License-Identifier: Apache-2.0

// OpenMP kernels against the serial reference kernels. Prints
// kernel,<name>,<elements>,<reference_us>,<openmp_us>,<speedup>,<max_abs_diff>.

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <span>

#include "CLI11.hpp"
#include "loomflow/kernels.h"

namespace {

using loomflow::KernelKind;
using loomflow::Tensor;

Tensor random_block(std::int64_t rows, std::int64_t cols, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-1, 1);
  std::vector<double> data(static_cast<std::size_t>(rows * cols));
  for (auto& d : data) d = dist(rng);
  return Tensor::f64({rows, cols}, std::move(data));
}

template <typename Fn>
double best_of_us(int repeats, Fn&& fn) {
  double best = 1e300;
  for (int r = 0; r < repeats; ++r) {
    const auto start = std::chrono::steady_clock::now();
    fn();
    best = std::min(best, std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - start).count());
  }
  return best;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double worst = 0;
  for (std::int64_t i = 0; i < a.num_elements(); ++i) worst = std::max(worst, std::abs(a.element(i) - b.element(i)));
  return worst;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Kernel benchmark: OpenMP against the serial reference"};
  int repeats = 5;
  std::vector<std::int64_t> sizes{64, 256, 512};
  app.add_option("--repeats", repeats)->check(CLI::PositiveNumber);
  app.add_option("--sizes", sizes, "Square block edge lengths")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  std::printf("# omp threads: %d\n", omp_get_max_threads());
  std::mt19937_64 rng(42);
  for (std::int64_t n : sizes) {
    const Tensor a = random_block(n, n, rng);
    const Tensor b = random_block(n, n, rng);
    for (KernelKind kind : {KernelKind::kAdd, KernelKind::kMul, KernelKind::kMatMul, KernelKind::kTranspose,
                            KernelKind::kReduceSumAll}) {
      const int arity = loomflow::kernel_arity(kind);
      const Tensor inputs[] = {a, b};
      const std::span<const Tensor> in(inputs, static_cast<std::size_t>(arity));
      std::vector<Tensor> fast, slow;
      const double ref_us = best_of_us(repeats, [&] { slow = loomflow::reference::eval_kernel(kind, in); });
      const double omp_us = best_of_us(repeats, [&] { fast = loomflow::eval_kernel(kind, in); });
      std::printf("kernel,%s,%lld,%.1f,%.1f,%.2f,%.3g\n", std::string(loomflow::kernel_name(kind)).c_str(),
                  static_cast<long long>(n * n), ref_us, omp_us, ref_us / std::max(omp_us, 1e-3),
                  max_abs_diff(fast[0], slow[0]));
    }
  }
  return 0;
}
