// Copyright 2026 The Loomflow Authors
// SPDX-License-Identifier: Apache-2.0

// Frame/iteration scheduler. Each node runs in the frame instance named by
// its input tag. A frame instance holds a window of live iterations; an
// iteration retires once it has no outstanding work and its predecessor has
// retired, and a frame instance completes once every Enter into it has
// arrived and its last iteration has retired. Exits that never carried a live
// value are then sent to the parent as dead.

#include <condition_variable>
#include <cstdlib>
#include <deque>
#include <limits>
#include <memory>
#include <random>
#include <set>
#include <thread>
#include <unordered_map>

#include "loomflow/errors.h"
#include "loomflow/executor.h"
#include "loomflow/validate.h"

namespace loomflow {

namespace {

struct OutEdge {
  int dst = 0;
  int slot = 0;  // -1 for a control edge
};

struct NodeInfo {
  const NodeDef* def = nullptr;
  std::vector<std::vector<OutEdge>> data_out;  // per output port
  std::vector<int> control_out;
  int num_data = 0;
  int num_control = 0;
  bool loop_merge = false;
  bool constant_enter = false;
  int loop_ctx = 0;  // Enter and Exit: the loop they belong to
  std::vector<std::pair<int, std::size_t>> fetches;  // (port, fetch slot)
};

struct Plan {
  std::vector<NodeInfo> nodes;
  std::map<int, int> enters_per_loop;
  std::map<int, std::vector<int>> exits_per_loop;
  std::vector<int> sources;
};

Plan make_plan(const GraphDef& g, const std::vector<Port>& fetches) {
  Plan plan;
  plan.nodes.resize(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const NodeDef& n = g.nodes()[i];
    NodeInfo& info = plan.nodes[i];
    info.def = &n;
    info.data_out.resize(static_cast<std::size_t>(std::max(num_outputs(n), 1)));
    info.num_data = static_cast<int>(n.inputs.size());
    info.num_control = static_cast<int>(n.control_inputs.size());
    if (n.op == OpType::kEnter) {
      info.loop_ctx = n.context;
      info.constant_enter = n.attr_bool("is_constant");
      ++plan.enters_per_loop[n.context];
    }
    if (n.op == OpType::kExit) {
      info.loop_ctx = n.context;
      plan.exits_per_loop[n.context].push_back(static_cast<int>(i));
    }
    if (n.inputs.empty() && n.control_inputs.empty()) plan.sources.push_back(static_cast<int>(i));
  }
  for (std::size_t i = 0; i < g.size(); ++i) {
    const NodeDef& n = g.nodes()[i];
    for (std::size_t s = 0; s < n.inputs.size(); ++s) {
      const int src = g.index_of(n.inputs[s].node);
      auto& ports = plan.nodes[src].data_out;
      if (n.inputs[s].index >= static_cast<int>(ports.size())) ports.resize(n.inputs[s].index + 1);
      ports[n.inputs[s].index].push_back({static_cast<int>(i), static_cast<int>(s)});
      if (n.op == OpType::kMerge && g.nodes()[src].op == OpType::kNextIteration) plan.nodes[i].loop_merge = true;
    }
    for (const auto& c : n.control_inputs) plan.nodes[g.index_of(c)].control_out.push_back(static_cast<int>(i));
  }
  for (std::size_t f = 0; f < fetches.size(); ++f) {
    plan.nodes[g.index_of(fetches[f].node)].fetches.emplace_back(fetches[f].index, f);
  }
  return plan;
}

// "L/3/M" for root/L/3/M/5: the frame instance, without the iteration.
std::string frame_key(const FrameTag& tag) {
  std::string s;
  const auto& path = tag.path();
  for (std::size_t i = 0; i < path.size(); ++i) {
    if (i) s += "/" + std::to_string(path[i - 1].iteration) + "/";
    s += path[i].frame;
  }
  return s;
}

struct NodeState {
  std::vector<std::optional<TaggedTensor>> inputs;
  int data_arrived = 0;
  int controls_left = 0;
  bool control_dead = false;
  bool fired = false;
};

struct Iteration {
  std::unordered_map<int, NodeState> nodes;
  int outstanding_ops = 0;
  int outstanding_frames = 0;
};

struct Frame {
  std::string key;
  std::string name;
  int ctx = 0;
  Frame* parent = nullptr;
  std::int64_t parent_iter = 0;
  FrameTag parent_tag;
  int limit = 1;
  std::map<std::int64_t, Iteration> iterations;
  std::int64_t next_iter = 0;
  int pending_enters = 0;
  // Constant Enter values, replayed into every new iteration.
  std::vector<std::pair<int, std::optional<Tensor>>> constants;
  // NextIteration values for iteration `next_iter`, held while the window
  // is full.
  std::vector<std::pair<int, std::optional<Tensor>>> deferred;
  std::set<int> live_exits;
  // A wake is registered with the shared iteration window.
  bool gate_waiting = false;

  FrameTag tag(std::int64_t iter) const {
    if (parent == nullptr) return FrameTag();
    auto path = parent_tag.path();
    path.push_back({name, iter});
    return FrameTag(std::move(path));
  }
};

struct ReadyItem {
  Frame* frame = nullptr;
  std::int64_t iter = 0;
  int node = 0;
};

bool keeps_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::kDoubleWrite:
    case ErrorCode::kReadBeforeWrite:
    case ErrorCode::kIndexOutOfRange:
    case ErrorCode::kOutOfBudget:
    case ErrorCode::kSpillStoreFull:
    case ErrorCode::kTagMismatch:
    case ErrorCode::kMissingFeed:
    case ErrorCode::kTransportClosed:
    case ErrorCode::kRemoteKernelError:
    case ErrorCode::kPopEmpty:
    case ErrorCode::kDeadlockDetected:
    case ErrorCode::kInvalidGraph:
      return true;
    default:
      return false;
  }
}

class RunState : public std::enable_shared_from_this<RunState> {
 public:
  RunState(const GraphDef& graph, const std::map<std::string, Tensor>& feeds, const std::vector<Port>& fetches,
           const RunOptions& opts, EventLog* log)
      : graph_(graph), feeds_(feeds), opts_(opts), log_(log), plan_(make_plan(graph, fetches)) {
    fetched_.resize(fetches.size());
    if (opts.schedule_seed) rng_.emplace(*opts.schedule_seed);
  }

  void start() {
    std::weak_ptr<RunState> weak = weak_from_this();
    StackStore::Options so;
    so.spill_threshold = opts_.spill_threshold;
    so.resident_cap = opts_.resident_cap;
    so.store = opts_.spill_store;
    if (log_ != nullptr) {
      so.on_event = [log = log_, device = opts_.device](StackAction a, const std::string& stack,
                                                        const StackStore::Key& key, std::size_t) {
        static constexpr EventAction kMap[] = {EventAction::kPush, EventAction::kPop, EventAction::kSpill,
                                               EventAction::kRestore};
        std::string k;
        for (auto v : key) k += (k.empty() ? "" : ",") + std::to_string(v);
        log->record(device, stack, "[" + k + "]", kMap[static_cast<int>(a)]);
      };
    }
    so.on_error = [weak](std::exception_ptr e) {
      if (auto self = weak.lock()) {
        std::lock_guard<std::mutex> lock(self->mu_);
        self->fail_locked(e);
      }
    };
    stacks_ = std::make_unique<StackStore>(std::move(so));

    auto root = std::make_unique<Frame>();
    root->limit = 1;
    root_ = root.get();
    frames_.emplace("", std::move(root));
    std::unique_lock<std::mutex> lock(mu_);
    create_iteration(*root_);
    for (int s : plan_.sources) make_ready(*root_, 0, s);
    maybe_retire(*root_, 0);
    check_idle_locked();
    flush_retired(lock);
  }

  RunResult finish() {
    const int n = std::max(opts_.workers, 1);
    std::vector<std::thread> threads;
    for (int i = 0; i < n; ++i) threads.emplace_back([this] { worker(); });
    {
      std::unique_lock<std::mutex> lock(mu_);
      const auto deadline = std::chrono::steady_clock::now() + opts_.watchdog;
      auto over = [&] { return finished_ || error_; };
      if (opts_.watchdog.count() > 0) {
        if (!done_cv_.wait_until(lock, deadline, over)) {
          fail_locked(std::make_exception_ptr(
              Error(ErrorCode::kDeadlockDetected, "watchdog expired; " + blocked_description_locked())));
        }
      } else {
        done_cv_.wait(lock, over);
      }
      stop_ = true;
    }
    work_cv_.notify_all();
    for (auto& t : threads) t.join();
    try {
      stacks_->close();
    } catch (...) {
      std::lock_guard<std::mutex> lock(mu_);
      if (!error_) error_ = std::current_exception();
    }
    std::lock_guard<std::mutex> lock(mu_);
    if (error_) std::rethrow_exception(error_);
    RunResult result;
    for (std::size_t f = 0; f < fetched_.size(); ++f) {
      if (!fetched_[f]) {
        throw Error(ErrorCode::kDeadlockDetected, "fetch " + std::to_string(f) + " was never produced");
      }
      result.fetches.push_back(*fetched_[f]);
    }
    for (const auto& [key, count] : exec_counts_) {
      result.stats.max_executions_per_tag = std::max<std::size_t>(result.stats.max_executions_per_tag, count);
    }
    result.stats.nodes_executed = nodes_executed_;
    result.stats.max_live_iterations = max_live_;
    result.stats.stacks = stacks_->stats();
    result.stats.stack_history = stacks_->history();
    return result;
  }

 private:
  // --- Scheduling, all under mu_ ---

  void create_iteration(Frame& f) {
    const std::int64_t id = f.next_iter++;
    f.iterations[id];
    if (f.parent != nullptr) {
      int& peak = max_live_[f.name];
      peak = std::max(peak, static_cast<int>(f.iterations.size()));
    }
    for (const auto& [enter, value] : f.constants) emit(f, id, enter, value);
  }

  void make_ready(Frame& f, std::int64_t iter, int node) {
    ++f.iterations.at(iter).outstanding_ops;
    ready_.push_back({&f, iter, node});
    work_cv_.notify_one();
  }

  void deliver(Frame& f, std::int64_t iter, const OutEdge& e, const std::optional<Tensor>& value) {
    Iteration& it = f.iterations.at(iter);
    const NodeInfo& info = plan_.nodes[e.dst];
    auto [pos, fresh] = it.nodes.try_emplace(e.dst);
    NodeState& ns = pos->second;
    if (fresh) {
      ns.inputs.resize(info.num_data);
      ns.controls_left = info.num_control;
    }
    if (ns.fired) return;  // late input of a Merge that already fired
    bool live_data = false;
    if (e.slot < 0) {
      --ns.controls_left;
      ns.control_dead = ns.control_dead || !value;
    } else {
      ns.inputs[e.slot] = TaggedTensor{value, {}};
      ++ns.data_arrived;
      live_data = value.has_value();
    }
    if (ns.controls_left > 0) return;
    bool ready;
    if (info.def->op == OpType::kMerge) {
      bool any_live = live_data;
      for (const auto& in : ns.inputs) any_live = any_live || (in && !in->is_dead());
      ready = info.loop_merge ? ns.data_arrived > 0 : (any_live || ns.data_arrived == info.num_data);
      ready = ready && (ns.data_arrived > 0 || info.num_data == 0);
    } else {
      ready = ns.data_arrived == info.num_data;
    }
    if (!ready) return;
    ns.fired = true;
    make_ready(f, iter, e.dst);
  }

  // Sends node `src`'s outputs (and its control signal) into (f, iter).
  void emit_outputs(Frame& f, std::int64_t iter, int src, const std::vector<std::optional<Tensor>>& outs,
                    bool node_dead) {
    const NodeInfo& info = plan_.nodes[src];
    for (std::size_t p = 0; p < outs.size() && p < info.data_out.size(); ++p) {
      for (const auto& e : info.data_out[p]) deliver(f, iter, e, outs[p]);
    }
    for (int dst : info.control_out) {
      deliver(f, iter, {dst, -1}, node_dead ? std::nullopt : std::optional<Tensor>(Tensor()));
    }
    if (f.parent == nullptr) {
      for (const auto& [port, slot] : info.fetches) {
        if (port < static_cast<int>(outs.size())) {
          fetched_[slot] = outs[port] ? FetchValue(*outs[port]) : FetchValue(DeadMarker{});
        }
      }
    }
  }

  void emit(Frame& f, std::int64_t iter, int src, const std::optional<Tensor>& value) {
    emit_outputs(f, iter, src, {value}, !value);
  }

  Frame& child_frame(Frame& f, std::int64_t iter, int loop_ctx) {
    const ContextDef& ctx = graph_.context(loop_ctx);
    const FrameTag child_tag = f.tag(iter).enter(ctx.frame_name);
    const std::string key = frame_key(child_tag);
    auto it = frames_.find(key);
    if (it != frames_.end()) return *it->second;
    auto child = std::make_unique<Frame>();
    child->key = key;
    child->name = ctx.frame_name;
    child->ctx = loop_ctx;
    child->parent = &f;
    child->parent_iter = iter;
    child->parent_tag = f.tag(iter);
    child->limit = std::max(1, opts_.parallel_limit.value_or(ctx.parallel_iterations));
    child->pending_enters = plan_.enters_per_loop[loop_ctx];
    ++f.iterations.at(iter).outstanding_frames;
    Frame& ref = *child;
    frames_.emplace(key, std::move(child));
    create_iteration(ref);
    return ref;
  }

  void next_iteration(Frame& f, std::int64_t iter, int src, const std::optional<Tensor>& value) {
    if (f.iterations.count(iter)) {
      emit(f, iter, src, value);
    } else if (iter == f.next_iter && f.deferred.empty() && may_start(f)) {
      create_iteration(f);
      emit(f, iter, src, value);
    } else {
      f.deferred.emplace_back(src, value);
    }
  }

  void maybe_retire(Frame& f, std::int64_t iter) {
    Frame* frame = &f;
    for (;;) {
      auto it = frame->iterations.find(iter);
      if (it == frame->iterations.end()) return;
      if (it->second.outstanding_ops > 0 || it->second.outstanding_frames > 0) return;
      if (frame->parent == nullptr) {
        finished_ = true;
        done_cv_.notify_all();
        return;
      }
      if (frame->pending_enters > 0 || it != frame->iterations.begin()) return;
      if (opts_.window) retired_outbox_.push_back({frame->name, frame->key, it->first});
      frame->iterations.erase(it);
      start_deferred(*frame);
      if (frame->iterations.empty() && !frame->deferred.empty()) return;  // waiting on the shared window
      if (frame->iterations.empty()) {
        Frame* parent = frame->parent;
        const std::int64_t parent_iter = frame->parent_iter;
        complete_frame(*frame);
        frame = parent;
        iter = parent_iter;
        continue;
      }
      iter = frame->iterations.begin()->first;
    }
  }

  // Whether the next iteration of `f` may start now. With a shared window a
  // refusal registers a wake that retries the deferred NextIteration values.
  bool may_start(Frame& f) {
    if (static_cast<int>(f.iterations.size()) >= f.limit) return false;
    if (!opts_.window || f.parent == nullptr) return true;
    if (f.gate_waiting) return false;
    std::weak_ptr<RunState> weak = weak_from_this();
    auto wake = [weak, key = f.key] {
      if (auto self = weak.lock()) self->window_opened(key);
    };
    if (opts_.window->admit(f.name, f.key, f.next_iter, f.limit, std::move(wake))) return true;
    f.gate_waiting = true;
    ++gate_waits_;
    return false;
  }

  void start_deferred(Frame& f) {
    if (f.deferred.empty() || !may_start(f)) return;
    const std::int64_t id = f.next_iter;
    create_iteration(f);
    auto held = std::move(f.deferred);
    f.deferred.clear();
    for (const auto& [src, value] : held) emit(f, id, src, value);
  }

  void window_opened(const std::string& key) {
    std::unique_lock<std::mutex> lock(mu_);
    auto it = frames_.find(key);
    if (it == frames_.end() || !it->second->gate_waiting) return;
    Frame& f = *it->second;
    f.gate_waiting = false;
    --gate_waits_;
    if (stop_ || finished_) return;
    start_deferred(f);
    check_idle_locked();
    flush_retired(lock);
  }

  // Reports retired iterations to the shared window. Runs with mu_ released
  // because the window may call straight into another executor.
  void flush_retired(std::unique_lock<std::mutex>& lock) {
    if (retired_outbox_.empty()) return;
    auto batch = std::move(retired_outbox_);
    retired_outbox_.clear();
    lock.unlock();
    for (const auto& r : batch) opts_.window->retired(r.name, r.key, opts_.device, r.iter);
    lock.lock();
  }

  void complete_frame(Frame& f) {
    Frame& parent = *f.parent;
    for (int exit : plan_.exits_per_loop[f.ctx]) {
      if (!f.live_exits.count(exit)) emit(parent, f.parent_iter, exit, std::nullopt);
    }
    --parent.iterations.at(f.parent_iter).outstanding_frames;
    frames_.erase(f.key);
  }

  void fail_locked(std::exception_ptr e) {
    if (!error_) error_ = e;
    stop_ = true;
    work_cv_.notify_all();
    done_cv_.notify_all();
  }

  std::string blocked_description_locked() const {
    std::string s = std::to_string(frames_.size() - 1) + " frame instance(s) outstanding";
    for (const auto& [key, f] : frames_) {
      if (f->parent != nullptr) s += " [" + key + ": " + std::to_string(f->iterations.size()) + " live]";
    }
    if (pending_recvs_ > 0) s += ", " + std::to_string(pending_recvs_) + " Recv(s) waiting";
    return s;
  }

  void check_idle_locked() {
    if (finished_ || error_) return;
    if (!ready_.empty() || running_ > 0 || pending_recvs_ > 0 || gate_waits_ > 0) return;
    if (pending_pops_ > 0) {
      if (stacks_->waiting_pops() < pending_pops_) return;  // restore in flight
      std::string which;
      for (const auto& d : stacks_->waiting_descriptions()) which += (which.empty() ? "" : ", ") + d;
      fail_locked(std::make_exception_ptr(Error(ErrorCode::kPopEmpty, "no push will ever match pop of " + which)));
      return;
    }
    fail_locked(std::make_exception_ptr(
        Error(ErrorCode::kDeadlockDetected, "no runnable nodes; " + blocked_description_locked())));
  }

  // --- Execution ---

  struct Prepared {
    ReadyItem item;
    FrameTag tag;
    std::vector<TaggedTensor> inputs;
    bool control_dead = false;
    bool dead = false;
  };

  ReadyItem take_ready_locked() {
    std::size_t pick = 0;
    if (rng_ && ready_.size() > 1) pick = std::uniform_int_distribution<std::size_t>(0, ready_.size() - 1)(*rng_);
    ReadyItem item = ready_[pick];
    ready_.erase(ready_.begin() + static_cast<std::ptrdiff_t>(pick));
    return item;
  }

  Prepared prepare_locked(const ReadyItem& item) {
    Prepared p;
    p.item = item;
    p.tag = item.frame->tag(item.iter);
    NodeState& ns = item.frame->iterations.at(item.iter).nodes[item.node];
    p.control_dead = ns.control_dead;
    p.dead = ns.control_dead;
    for (auto& in : ns.inputs) {
      if (!in) continue;
      p.inputs.push_back(TaggedTensor{in->value, p.tag});
      p.dead = p.dead || in->is_dead();
    }
    const OpType op = plan_.nodes[item.node].def->op;
    if (op == OpType::kRecv) ++pending_recvs_;
    if (op == OpType::kStackPop && !p.dead) ++pending_pops_;
    ++exec_counts_[std::to_string(item.node) + "@" + p.tag.str()];
    ++nodes_executed_;
    return p;
  }

  void worker() {
    std::unique_lock<std::mutex> lock(mu_);
    for (;;) {
      work_cv_.wait(lock, [&] { return stop_ || !ready_.empty(); });
      if (stop_) return;
      Prepared p = prepare_locked(take_ready_locked());
      ++running_;
      lock.unlock();
      std::exception_ptr err;
      std::optional<std::vector<TaggedTensor>> outs;
      try {
        outs = execute(p);
      } catch (const Error& e) {
        const NodeDef& n = *plan_.nodes[p.item.node].def;
        err = keeps_code(e.code())
                  ? std::current_exception()
                  : std::make_exception_ptr(Error(ErrorCode::kRuntimeKernelError, n.id + ": " + e.what(), n.id));
      } catch (const std::exception& e) {
        const NodeDef& n = *plan_.nodes[p.item.node].def;
        err = std::make_exception_ptr(Error(ErrorCode::kRuntimeKernelError, n.id + ": " + e.what(), n.id));
      }
      lock.lock();
      --running_;
      if (err) {
        fail_locked(err);
      } else if (outs && !error_) {
        complete_locked(p, *outs);
      }
      check_idle_locked();
      flush_retired(lock);
    }
  }

  void log(const NodeDef& n, const FrameTag& tag, EventAction a) {
    if (log_ != nullptr) log_->record(opts_.device, n.id, tag.str(), a);
  }

  // Computes outputs; returns nullopt for asynchronous ops, which complete
  // through a callback.
  std::optional<std::vector<TaggedTensor>> execute(const Prepared& p) {
    const NodeDef& n = *plan_.nodes[p.item.node].def;
    log(n, p.tag, EventAction::kStart);
    if (!p.dead) {
      if (auto cost = n.attr_int("cost_us"); cost > 0) std::this_thread::sleep_for(std::chrono::microseconds(cost));
    }
    std::weak_ptr<RunState> weak = weak_from_this();
    switch (n.op) {
      case OpType::kRecv: {
        if (!opts_.recv) throw Error(ErrorCode::kInvalidGraph, n.id + ": Recv without a transport", n.id);
        opts_.recv(rendezvous_key(n.attr_string("key"), p.tag), [weak, p](RecvResult r) {
          if (auto self = weak.lock()) self->recv_done(p, std::move(r));
        });
        return std::nullopt;
      }
      case OpType::kStackPop: {
        if (p.dead) return std::vector<TaggedTensor>{TaggedTensor::dead(p.tag)};
        StackStore::Key key;
        for (const auto& in : p.inputs) key.push_back(in.value->scalar_int_value());
        stacks_->pop(n.attr_string("stack"), key, [weak, p](Tensor v) {
          if (auto self = weak.lock()) self->pop_done(p, std::move(v));
        });
        return std::nullopt;
      }
      case OpType::kSend: {
        if (!opts_.send) throw Error(ErrorCode::kInvalidGraph, n.id + ": Send without a transport", n.id);
        std::optional<Tensor> payload;
        if (!p.dead) payload = p.inputs.empty() ? Tensor() : *p.inputs[0].value;
        opts_.send(rendezvous_key(n.attr_string("key"), p.tag), payload);
        return std::vector<TaggedTensor>{};
      }
      default:
        break;
    }
    EvalContext ctx;
    ctx.tag = p.tag;
    ctx.control_dead = p.control_dead;
    ctx.resources = {&arrays_, stacks_.get()};
    if (n.op == OpType::kExit) ctx.parent_tag = p.item.frame->parent_tag;
    if (n.op == OpType::kPlaceholder) {
      if (auto it = feeds_.find(n.id); it != feeds_.end()) ctx.feed = it->second;
    }
    return eval_node(n, p.inputs, ctx);
  }

  void recv_done(const Prepared& p, RecvResult r) {
    std::unique_lock<std::mutex> lock(mu_);
    if (stop_ || finished_) return;
    --pending_recvs_;
    if (r.error) {
      fail_locked(r.error);
      return;
    }
    std::optional<Tensor> value = p.control_dead ? std::nullopt : std::move(r.value);
    complete_locked(p, {TaggedTensor{std::move(value), p.tag}});
    check_idle_locked();
    flush_retired(lock);
  }

  void pop_done(const Prepared& p, Tensor v) {
    std::unique_lock<std::mutex> lock(mu_);
    if (stop_ || finished_) return;
    --pending_pops_;
    complete_locked(p, {TaggedTensor::live(std::move(v), p.tag)});
    check_idle_locked();
    flush_retired(lock);
  }

  void complete_locked(const Prepared& p, const std::vector<TaggedTensor>& outs) {
    Frame& f = *p.item.frame;
    const std::int64_t iter = p.item.iter;
    const NodeInfo& info = plan_.nodes[p.item.node];
    const NodeDef& n = *info.def;
    std::vector<std::optional<Tensor>> values;
    bool all_dead = true;
    for (const auto& o : outs) {
      values.push_back(o.value);
      all_dead = all_dead && o.is_dead();
    }
    const bool node_dead = outs.empty() ? p.dead : all_dead;
    log(n, p.tag, node_dead ? EventAction::kDead : EventAction::kDone);

    switch (n.op) {
      case OpType::kEnter: {
        Frame& child = child_frame(f, iter, info.loop_ctx);
        --child.pending_enters;
        if (info.constant_enter) {
          child.constants.emplace_back(p.item.node, values[0]);
          for (auto& [id, state] : child.iterations) emit(child, id, p.item.node, values[0]);
        } else {
          emit(child, child.iterations.begin()->first, p.item.node, values[0]);
        }
        maybe_retire(child, child.iterations.begin()->first);
        break;
      }
      case OpType::kExit:
        if (values[0]) {
          f.live_exits.insert(p.item.node);
          emit(*f.parent, f.parent_iter, p.item.node, values[0]);
        }
        break;
      case OpType::kNextIteration:
        if (values[0]) next_iteration(f, iter + 1, p.item.node, values[0]);
        break;
      default:
        emit_outputs(f, iter, p.item.node, values, node_dead);
        break;
    }
    --f.iterations.at(iter).outstanding_ops;
    maybe_retire(f, iter);
  }

  const GraphDef& graph_;
  const std::map<std::string, Tensor>& feeds_;
  const RunOptions& opts_;
  EventLog* log_;
  Plan plan_;

  std::mutex mu_;
  std::condition_variable work_cv_;
  std::condition_variable done_cv_;
  std::map<std::string, std::unique_ptr<Frame>> frames_;
  Frame* root_ = nullptr;
  std::deque<ReadyItem> ready_;
  std::optional<std::mt19937_64> rng_;
  int running_ = 0;
  std::size_t pending_recvs_ = 0;
  std::size_t gate_waits_ = 0;
  struct Retired {
    std::string name;
    std::string key;
    std::int64_t iter;
  };
  std::vector<Retired> retired_outbox_;
  std::size_t pending_pops_ = 0;
  bool finished_ = false;
  bool stop_ = false;
  std::exception_ptr error_;
  std::vector<std::optional<FetchValue>> fetched_;
  std::unordered_map<std::string, std::size_t> exec_counts_;
  std::size_t nodes_executed_ = 0;
  std::map<std::string, int> max_live_;

  TensorArrayStore arrays_;
  std::unique_ptr<StackStore> stacks_;
};

void check_request(const GraphDef& graph, const std::map<std::string, Tensor>& feeds,
                   const std::vector<Port>& fetches) {
  for (const auto& [id, value] : feeds) {
    const NodeDef* n = graph.find(id);
    if (n == nullptr || n->op != OpType::kPlaceholder) {
      throw Error(ErrorCode::kInvalidGraph, "feed for " + id + ", which is not a placeholder", id);
    }
  }
  for (const NodeDef& n : graph.nodes()) {
    if (n.op == OpType::kPlaceholder && !feeds.count(n.id) && !n.has_attr("default")) {
      throw Error(ErrorCode::kMissingFeed, "no value fed for placeholder " + n.id, n.id);
    }
  }
  for (const Port& f : fetches) {
    const NodeDef* n = graph.find(f.node);
    if (n == nullptr) throw Error(ErrorCode::kInvalidGraph, "fetch of unknown node " + f.node, f.node);
    if (f.index < 0 || f.index >= num_outputs(*n)) {
      throw Error(ErrorCode::kInvalidGraph, "fetch of missing output " + f.str(), f.node);
    }
    if (output_frame(graph, f) != 0) {
      throw Error(ErrorCode::kInvalidGraph, "fetch " + f.str() + " is produced inside a loop", f.node);
    }
  }
}

}  // namespace

IterationWindow::IterationWindow(std::map<std::string, std::vector<std::string>> participants)
    : participants_(std::move(participants)) {}

std::int64_t IterationWindow::low_water_locked(const std::string& frame_name, const Instance& inst) const {
  auto it = participants_.find(frame_name);
  if (it == participants_.end()) return std::numeric_limits<std::int64_t>::max();
  std::int64_t low = std::numeric_limits<std::int64_t>::max();
  for (const auto& device : it->second) {
    auto r = inst.retired.find(device);
    low = std::min(low, r == inst.retired.end() ? 0 : r->second);
  }
  return low;
}

bool IterationWindow::admit(const std::string& frame_name, const std::string& frame_key, std::int64_t iter,
                            int limit, std::function<void()> wake) {
  std::lock_guard<std::mutex> lock(mu_);
  Instance& inst = instances_[frame_key];
  if (iter < low_water_locked(frame_name, inst) + limit) return true;
  inst.waiters.push_back({iter, limit, std::move(wake)});
  return false;
}

void IterationWindow::retired(const std::string& frame_name, const std::string& frame_key, const std::string& device,
                              std::int64_t iter) {
  std::vector<std::function<void()>> ready;
  {
    std::lock_guard<std::mutex> lock(mu_);
    Instance& inst = instances_[frame_key];
    std::int64_t& count = inst.retired[device];
    count = std::max(count, iter + 1);
    const std::int64_t low = low_water_locked(frame_name, inst);
    auto& waiters = inst.waiters;
    for (auto w = waiters.begin(); w != waiters.end();) {
      if (w->iter < low + w->limit) {
        ready.push_back(std::move(w->wake));
        w = waiters.erase(w);
      } else {
        ++w;
      }
    }
  }
  for (auto& wake : ready) wake();
}

RunResult run_with_stats(const GraphDef& graph, const std::map<std::string, Tensor>& feeds,
                         const std::vector<Port>& fetches, const RunOptions& options) {
  if (!options.validated) check_valid(graph);
  check_request(graph, feeds, fetches);

  EventLog* log = options.event_log;
  std::unique_ptr<EventLog> env_log;
  const char* env_path = std::getenv("LOOMFLOW_EVENT_LOG");
  if (log == nullptr && env_path != nullptr && *env_path != '\0') {
    env_log = std::make_unique<EventLog>();
    log = env_log.get();
  }
  auto state = std::make_shared<RunState>(graph, feeds, fetches, options, log);
  auto write_env_log = [&] {
    if (env_log) env_log->write_ndjson(env_path, true);
  };
  try {
    state->start();
    RunResult result = state->finish();
    write_env_log();
    return result;
  } catch (...) {
    write_env_log();
    throw;
  }
}

std::vector<FetchValue> run(const GraphDef& graph, const std::map<std::string, Tensor>& feeds,
                            const std::vector<Port>& fetches, const RunOptions& options) {
  return run_with_stats(graph, feeds, fetches, options).fetches;
}

}  // namespace loomflow
