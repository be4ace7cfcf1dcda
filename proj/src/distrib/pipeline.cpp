// Copyright 2026 The Loomflow Authors
// SPDX-License-Identifier: Apache-2.0

#include <chrono>

#include "loomflow/builder.h"
#include "loomflow/distrib.h"
#include "loomflow/errors.h"

namespace loomflow {

std::string_view pipeline_pattern_name(PipelinePattern p) {
  switch (p) {
    case PipelinePattern::kIndependent: return "independent";
    case PipelinePattern::kBarrier: return "barrier";
    case PipelinePattern::kChained: return "chained";
  }
  return "?";
}

std::optional<PipelinePattern> pipeline_pattern_from_name(std::string_view name) {
  for (auto p : {PipelinePattern::kIndependent, PipelinePattern::kBarrier, PipelinePattern::kChained}) {
    if (pipeline_pattern_name(p) == name) return p;
  }
  return std::nullopt;
}

PipelineProgram pipeline_program(const PipelineOptions& options) {
  if (options.devices < 1 || options.stages < 1) {
    throw Error(ErrorCode::kInvalidGraph, "pipeline needs at least one device and one stage");
  }
  PipelineProgram program;
  GraphBuilder b(program.graph);
  const int stages = options.stages;
  auto stage = [](int s) { return "stage" + std::to_string(s) + "_"; };
  const AttrMap cost{{"cost_us", static_cast<std::int64_t>(options.per_op_delay.count())}};

  Tensors inits{b.scalar_int(0)};
  std::vector<SymbolicTensor> half;
  std::vector<SymbolicTensor> share;
  for (int s = 0; s < stages; ++s) {
    inits.push_back(b.constant(Tensor::scalar(1.0 + s), stage(s) + "init"));
    half.push_back(b.constant(Tensor::scalar(0.5), stage(s) + "half"));
    share.push_back(b.constant(Tensor::scalar(1.0 / stages), stage(s) + "share"));
  }
  const SymbolicTensor limit = b.scalar_int(options.iterations);
  const SymbolicTensor one = b.scalar_int(1);

  Tensors outs = b.while_loop(
      [&](const Tensors& vars) { return b.less(vars[0], limit); },
      [&](const Tensors& vars) {
        Tensors next{b.add(vars[0], one)};
        Tensors y;
        for (int s = 0; s < stages; ++s) {
          SymbolicTensor x = vars[1 + s];
          if (options.pattern == PipelinePattern::kChained && s > 0) {
            x = b.op1(OpType::kAdd, {x, y.back()}, {}, stage(s) + "in");
          }
          y.push_back(b.op1(OpType::kMul, {x, half[s]}, cost, stage(s) + "op"));
        }
        if (options.pattern == PipelinePattern::kBarrier) {
          SymbolicTensor total = y[0];
          for (int s = 1; s < stages; ++s) total = b.op1(OpType::kAdd, {total, y[s]}, {}, "barrier_sum");
          for (int s = 0; s < stages; ++s) next.push_back(b.op1(OpType::kMul, {total, share[s]}, {}, stage(s) + "out"));
        } else {
          for (int s = 0; s < stages; ++s) next.push_back(b.op1(OpType::kAdd, {y[s], half[s]}, {}, stage(s) + "out"));
        }
        return next;
      },
      inits, 32, "pipeline");

  SymbolicTensor total = outs[1];
  for (int s = 1; s < stages; ++s) total = b.add(total, outs[1 + s]);
  program.result = b.identity(total, "result").port;

  const std::string frame = program.graph.context(b.last_while()).frame_name;
  for (int d = 0; d < options.devices; ++d) program.placement.devices.push_back("dev" + std::to_string(d));
  for (int s = 0; s < stages; ++s) {
    const std::string& device = program.placement.devices[s % options.devices];
    program.placement.rules.emplace_back(stage(s) + "*", device);
    program.placement.rules.emplace_back(frame + "/" + stage(s) + "*", device);
  }
  return program;
}

PipelineRun bench_pipeline(const PipelineOptions& options) {
  PipelineProgram program = pipeline_program(options);
  const PartitionedGraph parts = partition(program.graph, program.placement);
  DistributedOptions dist;
  dist.local.parallel_limit = options.parallel_limit;
  dist.local.event_log = options.event_log;
  dist.make_transport = options.make_transport;

  const auto start = std::chrono::steady_clock::now();
  PipelineRun run;
  run.details = run_distributed(parts, {}, {program.result}, dist);
  const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
  run.iterations_per_sec = options.iterations / std::max(elapsed.count(), 1e-9);
  run.result = std::get<Tensor>(run.details.fetches[0]).scalar_value();
  return run;
}

}  // namespace loomflow
