// Copyright 2026 The Loomflow Authors
// SPDX-License-Identifier: Apache-2.0

// Saved-value stacks for loop gradients, plus the spill store that holds
// entries evicted from memory.
//
// Entries are keyed by the iteration path of the push (one counter value per
// enclosing loop), so a pop names exactly the entry it wants and simply waits
// until that entry has been pushed.

#ifndef LOOMFLOW_STACK_STORE_H_
#define LOOMFLOW_STACK_STORE_H_

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <exception>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "loomflow/serialize.h"
#include "loomflow/tensor.h"

namespace loomflow {

// Entries smaller than this are never spilled.
inline constexpr std::size_t kMinSpillBytes = 4096;

struct SpillStoreConfig {
  enum class Kind { kMemory, kDirectory };
  Kind kind = Kind::kMemory;
  std::string directory;  // for kDirectory; created if missing
  std::size_t capacity = SIZE_MAX;  // bytes
};

class SpillStore {
 public:
  virtual ~SpillStore() = default;
  // Throws SpillStoreFull when the capacity would be exceeded.
  virtual void put(std::uint64_t id, const Tensor& value) = 0;
  virtual Tensor take(std::uint64_t id) = 0;
  virtual std::size_t stored_bytes() const = 0;
};

std::unique_ptr<SpillStore> make_spill_store(const SpillStoreConfig& config);

enum class StackAction { kPush, kPop, kSpill, kRestore };

class StackStore {
 public:
  using Key = std::vector<std::int64_t>;

  struct Options {
    std::optional<std::size_t> spill_threshold;  // unset: never spill
    std::optional<std::size_t> resident_cap;     // unset: unbounded
    SpillStoreConfig store;
    // Observer for push/pop/spill/restore; called without internal locks.
    std::function<void(StackAction, const std::string& stack, const Key& key, std::size_t bytes)> on_event;
    // Failures on the background spill thread.
    std::function<void(std::exception_ptr)> on_error;
  };

  struct Stats {
    std::size_t pushes = 0;
    std::size_t pops = 0;
    std::size_t spills = 0;
    std::size_t restores = 0;
    std::size_t peak_resident_bytes = 0;
  };

  explicit StackStore(Options options);
  ~StackStore();
  StackStore(const StackStore&) = delete;
  StackStore& operator=(const StackStore&) = delete;

  // Stores `value` under (stack, key) and spills old entries if resident
  // bytes exceed the threshold. Throws OutOfBudget when the resident cap is
  // exceeded and spilling cannot bring usage back under it.
  void push(const std::string& stack, const Key& key, const Tensor& value);

  // Delivers and removes the entry under (stack, key), restoring it from the
  // spill store if needed. `done` runs immediately when the entry exists,
  // otherwise once it is pushed.
  void pop(const std::string& stack, const Key& key, std::function<void(Tensor)> done);

  std::size_t waiting_pops() const;
  std::vector<std::string> waiting_descriptions() const;
  std::size_t resident_bytes() const;
  Stats stats() const;

  // Per-stack sequence of (action, key) for push and pop, in the order they
  // happened.
  std::map<std::string, std::vector<std::pair<StackAction, Key>>> history() const;

  // Stops the spill thread. Rethrows the first spill failure, if any.
  void close();

 private:
  enum class State { kResident, kSpilling, kSpilled };
  struct Entry {
    std::uint64_t id = 0;
    std::string stack;
    Key key;
    std::size_t bytes = 0;
    std::optional<Tensor> value;
    State state = State::kResident;
    std::function<void(Tensor)> waiting_pop;  // pop arrived mid-spill
  };
  using EntryKey = std::pair<std::string, Key>;
  using Notification = std::function<void()>;

  void spill_loop();
  void plan_spills_locked(std::vector<Notification>& notes);
  Tensor restore_locked(Entry& e, std::vector<Notification>& notes);
  void notify(StackAction a, const Entry& e, std::vector<Notification>& notes);

  Options options_;
  std::unique_ptr<SpillStore> store_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::map<EntryKey, std::shared_ptr<Entry>> entries_;
  std::map<std::uint64_t, std::shared_ptr<Entry>> by_age_;  // resident entries, oldest first
  std::map<EntryKey, std::function<void(Tensor)>> waiters_;
  std::deque<std::shared_ptr<Entry>> spill_queue_;
  std::map<std::string, std::vector<std::pair<StackAction, Key>>> history_;
  std::uint64_t next_id_ = 0;
  std::size_t resident_ = 0;
  Stats stats_;
  bool stopping_ = false;
  std::exception_ptr spill_error_;
  std::thread spill_thread_;
};

}  // namespace loomflow

#endif  // LOOMFLOW_STACK_STORE_H_
