// Copyright 2026 The Loomflow Authors
// SPDX-License-Identifier: Apache-2.0

// The `loomflow` command: run, gradcheck, bench and example.

#ifndef LOOMFLOW_TOOLS_CLI_CLI_H_
#define LOOMFLOW_TOOLS_CLI_CLI_H_

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "loomflow/distrib.h"
#include "loomflow/errors.h"
#include "loomflow/executor.h"
#include "loomflow/graph.h"

namespace loomflow::cli {

// Exit statuses.
inline constexpr int kExitOk = 0;
inline constexpr int kExitInvalid = 1;  // bad input: graph, flags, feeds
inline constexpr int kExitRuntime = 2;  // failure while executing
inline constexpr int kExitGradientMismatch = 3;

int exit_code_for(ErrorCode code);

struct RunArgs {
  std::string graph;
  std::vector<std::string> feeds;  // name=FILE_OR_LITERAL
  std::vector<std::string> fetches;
  std::string placement;
  std::optional<int> parallel_limit;
  std::optional<std::size_t> spill_threshold;
  std::string transport = "inproc";
  std::optional<std::uint64_t> seed;
};

struct GradcheckArgs {
  std::string graph;
  std::string y;
  std::vector<std::string> xs;
  std::vector<std::string> feeds;
  double step = 1e-6;
  double tolerance = 1e-5;
};

struct BenchArgs {
  std::string pattern = "chained";
  int devices = 4;
  int stages = 0;  // 0: one per device
  int iterations = 100;
  std::vector<int> parallel_limits{1};
  double delay_ms = 1.0;
  int trials = 5;
  std::string transport = "inproc";
};

struct ExampleArgs {
  std::string name;
  std::string out;
  std::string placement_out;
  int devices = 2;
};

int cmd_run(const RunArgs& args, std::ostream& out, std::ostream& err);
int cmd_gradcheck(const GradcheckArgs& args, std::ostream& out, std::ostream& err);
int cmd_bench(const BenchArgs& args, std::ostream& out, std::ostream& err);
int cmd_example(const ExampleArgs& args, std::ostream& out, std::ostream& err);

// Parses argv and dispatches to a command.
int main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

// One fetch as printed by `run`: "<dtype> <shape> <values...>" or "DEAD".
std::string format_fetch(const FetchValue& value);

// Resolves "name=FILE_OR_LITERAL" feeds against the placeholders of `graph`.
// A bare number fed to a placeholder with a declared shape fills that shape,
// and an integer fed to a float64 placeholder is converted.
std::map<std::string, Tensor> parse_feeds(const GraphDef& graph, const std::vector<std::string>& specs);

// Built-in sample programs written by `example`.
struct Example {
  GraphDef graph;
  Placement placement;
  std::string description;
};
std::vector<std::string> example_names();
Example make_example(const std::string& name, int devices);

}  // namespace loomflow::cli

#endif  // LOOMFLOW_TOOLS_CLI_CLI_H_
