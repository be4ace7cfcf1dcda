// Copyright 2026 The Loomflow Authors
// SPDX-License-Identifier: Apache-2.0

// Local dataflow executor. Values carry a frame tag naming the loop
// iteration they belong to, and a dead flag for the untaken side of a
// Switch. Nodes fire once per tag when all inputs with that tag are present
// (a Merge fires on its first live input).

#ifndef LOOMFLOW_EXECUTOR_H_
#define LOOMFLOW_EXECUTOR_H_

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "loomflow/graph.h"
#include "loomflow/stack_store.h"
#include "loomflow/tensor.h"
#include "loomflow/tensor_array.h"

namespace loomflow {

// Path of (frame name, iteration) pairs; the root tag has an empty path.
class FrameTag {
 public:
  struct Level {
    std::string frame;
    std::int64_t iteration = 0;
    bool operator==(const Level&) const = default;
  };

  FrameTag() = default;
  explicit FrameTag(std::vector<Level> path) : path_(std::move(path)) {}

  const std::vector<Level>& path() const { return path_; }
  bool is_root() const { return path_.empty(); }
  FrameTag enter(const std::string& frame) const;
  FrameTag next() const;
  FrameTag exit() const;
  // "root/L/0/M/2"
  std::string str() const;
  bool operator==(const FrameTag&) const = default;

 private:
  std::vector<Level> path_;
};

struct TaggedTensor {
  std::optional<Tensor> value;  // absent exactly when dead
  FrameTag tag;

  bool is_dead() const { return !value.has_value(); }
  static TaggedTensor live(Tensor v, FrameTag tag) { return {std::move(v), std::move(tag)}; }
  static TaggedTensor dead(FrameTag tag) { return {std::nullopt, std::move(tag)}; }
};

// Fetch result for an output that executed dead.
struct DeadMarker {
  bool operator==(const DeadMarker&) const = default;
};
using FetchValue = std::variant<Tensor, DeadMarker>;

inline bool is_dead(const FetchValue& v) { return std::holds_alternative<DeadMarker>(v); }
// Tensor debug string, or "DEAD".
std::string fetch_string(const FetchValue& v);
// True when both are dead or both hold bit-identical tensors.
bool same_fetch(const FetchValue& a, const FetchValue& b);

// Runtime state that side-effecting ops touch.
struct RunResources {
  TensorArrayStore* arrays = nullptr;
  StackStore* stacks = nullptr;
};

struct EvalContext {
  // Tag of a node without data inputs.
  FrameTag tag;
  // Tag of the frame instance an Exit returns to; defaults to dropping the
  // innermost level of the input tag.
  std::optional<FrameTag> parent_tag;
  // Some control input arrived dead.
  bool control_dead = false;
  // Value for a Placeholder.
  std::optional<Tensor> feed;
  RunResources resources;
};

// The evaluation rule of one node. Inputs must share one tag (Merge takes
// whichever inputs are available, in port order). Throws TagMismatch on
// mixed tags and the kernel's own errors otherwise.
std::vector<TaggedTensor> eval_node(const NodeDef& node, const std::vector<TaggedTensor>& inputs,
                                    const EvalContext& ctx = {});

enum class EventAction { kStart, kDone, kDead, kPush, kPop, kSpill, kRestore };
std::string_view event_action_name(EventAction a);

struct Event {
  std::uint64_t seq = 0;
  std::int64_t time_us = 0;
  std::string device;
  std::string node;
  std::string tag;
  EventAction action = EventAction::kStart;
};

// Thread-safe, append-only event record; written as one JSON object per line.
class EventLog {
 public:
  EventLog();
  void record(const std::string& device, const std::string& node, const std::string& tag, EventAction action);
  std::vector<Event> events() const;
  void write_ndjson(const std::string& path, bool append = false) const;

 private:
  mutable std::mutex mu_;
  std::vector<Event> events_;
  std::chrono::steady_clock::time_point start_;
};

// Hooks that connect Send/Recv nodes to a transport.
using SendHook = std::function<void(const std::string& key, const std::optional<Tensor>& value)>;
struct RecvResult {
  std::optional<Tensor> value;   // dead when absent
  std::exception_ptr error;      // transport failure
};
using RecvHook = std::function<void(const std::string& key, std::function<void(RecvResult)> done)>;

// Loop-wide iteration window shared by the executors of one distributed
// run. Iteration n of a frame instance may start on a device only once every
// device taking part in that loop has retired all iterations before
// n - limit + 1, so parallel_iterations bounds the loop as a whole rather
// than each device's share of it.
class IterationWindow {
 public:
  // frame name -> devices that run part of that loop.
  explicit IterationWindow(std::map<std::string, std::vector<std::string>> participants);

  // True when iteration `iter` may start. Otherwise `wake` is called once,
  // from some other thread, when it may; callers must not hold locks that
  // `wake` takes while calling retired().
  bool admit(const std::string& frame_name, const std::string& frame_key, std::int64_t iter, int limit,
             std::function<void()> wake);
  // `device` has retired iterations 0..iter of the frame instance.
  void retired(const std::string& frame_name, const std::string& frame_key, const std::string& device,
               std::int64_t iter);

 private:
  struct Waiter {
    std::int64_t iter;
    int limit;
    std::function<void()> wake;
  };
  struct Instance {
    std::map<std::string, std::int64_t> retired;  // device -> iterations retired
    std::vector<Waiter> waiters;
  };
  std::int64_t low_water_locked(const std::string& frame_name, const Instance& inst) const;

  std::mutex mu_;
  std::map<std::string, std::vector<std::string>> participants_;
  std::map<std::string, Instance> instances_;
};

struct RunOptions {
  // Replaces every loop's parallel_iterations when set.
  std::optional<int> parallel_limit;
  // Stack spilling; unset means never spill.
  std::optional<std::size_t> spill_threshold;
  // Hard limit on resident stack bytes; exceeding it fails with OutOfBudget.
  std::optional<std::size_t> resident_cap;
  SpillStoreConfig spill_store;
  int workers = 4;
  // Randomizes which ready node runs next.
  std::optional<std::uint64_t> schedule_seed;
  EventLog* event_log = nullptr;
  std::string device;
  SendHook send;
  RecvHook recv;
  // Set by distributed runs; null bounds each frame locally.
  std::shared_ptr<IterationWindow> window;
  // Fails the run with DeadlockDetected after this long; zero disables.
  std::chrono::milliseconds watchdog{0};
  // Skip validation (callers that have already validated).
  bool validated = false;
};

struct RunStats {
  // Executions (live or dead) of one node under one tag; never above 1.
  std::size_t max_executions_per_tag = 0;
  std::size_t nodes_executed = 0;
  // Largest number of simultaneously live iterations seen per frame name.
  std::map<std::string, int> max_live_iterations;
  StackStore::Stats stacks;
  std::map<std::string, std::vector<std::pair<StackAction, StackStore::Key>>> stack_history;
};

struct RunResult {
  std::vector<FetchValue> fetches;
  RunStats stats;
};

// Executes `graph` with `feeds` (Placeholder id -> value) and returns the
// values of `fetches`, which must be produced in the root frame. Throws
// InvalidGraph, MissingFeed, RuntimeKernelError, DeadlockDetected, PopEmpty
// and resource errors.
std::vector<FetchValue> run(const GraphDef& graph, const std::map<std::string, Tensor>& feeds,
                            const std::vector<Port>& fetches, const RunOptions& options = {});
RunResult run_with_stats(const GraphDef& graph, const std::map<std::string, Tensor>& feeds,
                         const std::vector<Port>& fetches, const RunOptions& options = {});

// Full rendezvous key of a Send/Recv under `tag`.
std::string rendezvous_key(const std::string& key_template, const FrameTag& tag);

}  // namespace loomflow

#endif  // LOOMFLOW_EXECUTOR_H_
