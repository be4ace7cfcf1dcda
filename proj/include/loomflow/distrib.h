// Copyright 2026 The Loomflow Authors
// SPDX-License-Identifier: Apache-2.0

// Multi-device execution. A graph is split into one subgraph per device;
// edges between devices become Send/Recv pairs whose keys are completed at
// run time with the frame tag, so every loop iteration uses distinct keys.
// Devices that take part in a loop without holding any of its variables get
// a small control loop driven by the received predicate. Each device then
// runs its subgraph on its own executor; they meet only through the
// transport.

#ifndef LOOMFLOW_DISTRIB_H_
#define LOOMFLOW_DISTRIB_H_

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "loomflow/executor.h"
#include "loomflow/graph.h"
#include "loomflow/transport.h"

namespace loomflow {

// User-supplied node -> device rules. A rule pattern is an exact node id or
// a prefix followed by "*"; exact ids win over prefixes and longer prefixes
// over shorter ones. Nodes no rule covers keep the graph's own `device`
// field if set, else follow the producer of their first input, else go to
// devices[0].
struct Placement {
  std::vector<std::string> devices;
  std::vector<std::pair<std::string, std::string>> rules;

  // {"devices": ["a", "b"], "placement": {"loop/*": "b", "x": "a"}}
  static Placement from_json(std::string_view text);
  static Placement load(const std::string& path);
  std::string to_json() const;

  // Device of every node. Throws UnknownDevice for rules naming a device
  // not in `devices`.
  std::map<std::string, std::string> resolve(const GraphDef& graph) const;
};

struct PartitionedGraph {
  std::vector<std::string> devices;
  std::map<std::string, GraphDef> subgraphs;
  // Final device of every node of the rewritten graph, including inserted
  // Send, Recv and control-loop nodes.
  std::map<std::string, std::string> assignment;
  // Key template of each Recv -> device that receives it.
  std::map<std::string, std::string> key_destination;
  // Control loops added, as (device, while context id).
  std::vector<std::pair<std::string, int>> control_loops;
};

// Splits `graph` by `placement`. Nodes that share runtime state are first
// moved together: the Enter/Merge/Switch/NextIteration/Exit of each loop
// variable follow its Merge, stack ops follow the stack's first push, and
// TensorArray ops follow the op that created the array. Throws
// InvalidGraph and UnknownDevice.
PartitionedGraph partition(const GraphDef& graph, const Placement& placement);

// Adds, on `device`, a loop over the while context `loop` that advances
// once per iteration of the original loop: Enter(true) -> Merge ->
// Switch(predicate) -> NextIteration. Returns the Merge, which fires once
// per iteration and gates the device's Recvs in that frame. `assignment`
// receives the new nodes.
std::string add_control_loop(GraphDef& graph, int loop, const std::string& device,
                             std::map<std::string, std::string>& assignment);

struct DistributedOptions {
  RunOptions local;  // applied to every device; device/send/recv are set per device
  // Creates the transport; in-process FIFO when unset.
  std::function<std::unique_ptr<Transport>()> make_transport;
};

struct DeviceReport {
  std::string device;
  RunStats stats;
};

struct DistributedResult {
  std::vector<FetchValue> fetches;
  std::vector<DeviceReport> devices;
  TransportStats transport;
};

// Runs the partitions concurrently. Feeds go to the devices holding the
// placeholders; fetches are collected from the devices producing them. A
// kernel failure on one device is reported as RemoteKernelError naming the
// device and node; the other devices are stopped by closing the transport.
DistributedResult run_distributed(const PartitionedGraph& partitions, const std::map<std::string, Tensor>& feeds,
                                  const std::vector<Port>& fetches, const DistributedOptions& options = {});

// Loop shapes for the throughput benchmark. Every stage is one delayed op
// on its own device (round-robin when stages exceed devices).
enum class PipelinePattern {
  kIndependent,  // each stage only depends on itself in the previous iteration
  kBarrier,      // all stages are summed at the end of every iteration
  kChained,      // stage s also waits for stage s-1 of the same iteration
};
std::string_view pipeline_pattern_name(PipelinePattern p);
std::optional<PipelinePattern> pipeline_pattern_from_name(std::string_view name);

struct PipelineOptions {
  PipelinePattern pattern = PipelinePattern::kChained;
  int devices = 4;
  int stages = 4;
  std::chrono::microseconds per_op_delay{1000};
  int iterations = 100;
  int parallel_limit = 1;
  std::function<std::unique_ptr<Transport>()> make_transport;
  EventLog* event_log = nullptr;
};

struct PipelineProgram {
  GraphDef graph;
  Placement placement;
  Port result;  // sum of the stage values after the loop
};

PipelineProgram pipeline_program(const PipelineOptions& options);

struct PipelineRun {
  double iterations_per_sec = 0;
  double result = 0;
  DistributedResult details;
};

PipelineRun bench_pipeline(const PipelineOptions& options);

}  // namespace loomflow

#endif  // LOOMFLOW_DISTRIB_H_
