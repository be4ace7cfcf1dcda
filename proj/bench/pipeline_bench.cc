// Copyright 2026 The Loomflow Authors
// SPDX-License-Identifier: Apache-2.0

// Throughput of the pipelined loop against the parallel-iteration limit, for
// each dependency pattern. Prints
// pipeline,<pattern>,<devices>,<parallel_limit>,<median_iters_per_sec>.

#include <algorithm>
#include <cstdio>

#include "CLI11.hpp"
#include "loomflow/distrib.h"

int main(int argc, char** argv) {
  CLI::App app{"Pipelined loop throughput against the parallel-iteration limit"};
  int devices = 4;
  int iterations = 100;
  int trials = 5;
  double delay_ms = 1.0;
  std::vector<int> limits{1, 2, 4, 8, 16, 32};
  std::vector<std::string> patterns{"independent", "barrier", "chained"};
  app.add_option("--devices", devices)->check(CLI::PositiveNumber);
  app.add_option("--iterations", iterations)->check(CLI::PositiveNumber);
  app.add_option("--trials", trials)->check(CLI::PositiveNumber);
  app.add_option("--delay-ms", delay_ms)->check(CLI::NonNegativeNumber);
  app.add_option("--limits", limits)->delimiter(',');
  app.add_option("--patterns", patterns)->delimiter(',')->check(CLI::IsMember({"independent", "barrier", "chained"}));
  CLI11_PARSE(app, argc, argv);

  for (const auto& name : patterns) {
    loomflow::PipelineOptions o;
    o.pattern = *loomflow::pipeline_pattern_from_name(name);
    o.devices = devices;
    o.stages = devices;
    o.iterations = iterations;
    o.per_op_delay = std::chrono::microseconds(static_cast<std::int64_t>(delay_ms * 1000));
    for (int limit : limits) {
      o.parallel_limit = limit;
      std::vector<double> rates;
      for (int t = 0; t < trials; ++t) rates.push_back(loomflow::bench_pipeline(o).iterations_per_sec);
      std::sort(rates.begin(), rates.end());
      std::printf("pipeline,%s,%d,%d,%.2f\n", name.c_str(), devices, limit, rates[rates.size() / 2]);
      std::fflush(stdout);
    }
  }
  return 0;
}
