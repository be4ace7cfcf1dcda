// Copyright 2026 The Loomflow Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "tools/cli/cli.h"

namespace loomflow::cli {

namespace {

std::vector<std::string> split_commas(const std::vector<std::string>& items) {
  std::vector<std::string> out;
  for (const auto& item : items) {
    std::stringstream in(item);
    std::string part;
    while (std::getline(in, part, ',')) {
      if (!part.empty()) out.push_back(part);
    }
  }
  return out;
}

}  // namespace

int main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Dataflow graphs with in-graph control flow"};
  app.require_subcommand(1);

  RunArgs run;
  int run_limit = 0;
  std::size_t run_spill = 0;
  std::uint64_t run_seed = 0;
  auto* run_cmd = app.add_subcommand("run", "Execute a graph and print the fetched values");
  run_cmd->add_option("--graph", run.graph, "Graph file (JSON)")->required();
  run_cmd->add_option("--feed", run.feeds, "name=FILE_OR_LITERAL, repeatable");
  run_cmd->add_option("--fetch", run.fetches, "node or node:port, repeatable; defaults to the graph outputs");
  run_cmd->add_option("--placement", run.placement, "Placement file; runs distributed when given");
  auto* run_limit_opt = run_cmd->add_option("--parallel-limit", run_limit, "Override every loop's parallel iterations")
                            ->check(CLI::PositiveNumber);
  auto* run_spill_opt = run_cmd->add_option("--spill-threshold", run_spill, "Spill stacks above this many bytes");
  run_cmd->add_option("--transport", run.transport, "inproc or tcp")->check(CLI::IsMember({"inproc", "tcp"}));
  auto* run_seed_opt = run_cmd->add_option("--seed", run_seed, "Randomize scheduling and delivery order");

  GradcheckArgs grad;
  std::vector<std::string> grad_xs;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Compare symbolic gradients with central differences");
  grad_cmd->add_option("--graph", grad.graph, "Graph file (JSON)")->required();
  grad_cmd->add_option("--y", grad.y, "Scalar float64 objective")->required();
  grad_cmd->add_option("--x", grad_xs, "Placeholders to differentiate against, comma separated")->required();
  grad_cmd->add_option("--feed", grad.feeds, "name=FILE_OR_LITERAL; placeholder defaults are used otherwise");
  grad_cmd->add_option("--step", grad.step, "Central-difference step");
  grad_cmd->add_option("--tolerance", grad.tolerance, "Largest accepted relative error");

  BenchArgs bench;
  std::vector<std::string> bench_limits;
  auto* bench_cmd = app.add_subcommand("bench", "Throughput of a pipelined loop over simulated devices");
  bench_cmd->add_option("--pattern", bench.pattern, "independent, barrier or chained")
      ->check(CLI::IsMember({"independent", "barrier", "chained"}));
  bench_cmd->add_option("--devices", bench.devices)->check(CLI::PositiveNumber);
  bench_cmd->add_option("--stages", bench.stages, "Defaults to one per device");
  bench_cmd->add_option("--iterations", bench.iterations)->check(CLI::PositiveNumber);
  bench_cmd->add_option("--parallel-limit", bench_limits, "One or more limits, comma separated");
  bench_cmd->add_option("--delay-ms", bench.delay_ms, "Simulated cost of each stage op")->check(CLI::NonNegativeNumber);
  bench_cmd->add_option("--trials", bench.trials)->check(CLI::PositiveNumber);
  bench_cmd->add_option("--transport", bench.transport)->check(CLI::IsMember({"inproc", "tcp"}));

  ExampleArgs example;
  auto* example_cmd = app.add_subcommand("example", "Write a sample graph; lists the samples without a name");
  example_cmd->add_option("name", example.name);
  example_cmd->add_option("--out", example.out, "Graph file to write; stdout otherwise");
  example_cmd->add_option("--placement-out", example.placement_out, "Also write a placement file");
  example_cmd->add_option("--devices", example.devices)->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitInvalid;
  }

  if (*run_cmd) {
    if (*run_limit_opt) run.parallel_limit = run_limit;
    if (*run_spill_opt) run.spill_threshold = run_spill;
    if (*run_seed_opt) run.seed = run_seed;
    return cmd_run(run, out, err);
  }
  if (*grad_cmd) {
    grad.xs = split_commas(grad_xs);
    return cmd_gradcheck(grad, out, err);
  }
  if (*bench_cmd) {
    if (!bench_limits.empty()) {
      bench.parallel_limits.clear();
      for (const auto& l : split_commas(bench_limits)) {
        try {
          bench.parallel_limits.push_back(std::stoi(l));
        } catch (const std::exception&) {
          err << "error: bad --parallel-limit " << l << "\n";
          return kExitInvalid;
        }
      }
    }
    return cmd_bench(bench, out, err);
  }
  return cmd_example(example, out, err);
}

}  // namespace loomflow::cli
