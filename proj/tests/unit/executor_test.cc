// Copyright 2026 The Loomflow Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "doctest.h"
#include "json.hpp"
#include "loomflow/builder.h"
#include "loomflow/executor.h"
#include "tests/support/test_util.h"

namespace loomflow {
namespace {

using testing::as_tensor;
using testing::const_node;
using testing::error_code_of;
using testing::make_node;
using testing::scalar_of;

const FrameTag kT = FrameTag().enter("L").next();

TaggedTensor live(double v, FrameTag tag = kT) { return TaggedTensor::live(Tensor::scalar(v), std::move(tag)); }
TaggedTensor dead(FrameTag tag = kT) { return TaggedTensor::dead(std::move(tag)); }
TaggedTensor pred(bool p) { return TaggedTensor::live(Tensor::scalar_bool(p), kT); }

TEST_CASE("frame tag arithmetic") {
  const FrameTag root;
  CHECK(root.str() == "root");
  const FrameTag entered = root.enter("L");
  CHECK(entered.str() == "root/L/0");
  CHECK(entered.next().str() == "root/L/1");
  CHECK(entered.next().enter("M").next().next().str() == "root/L/1/M/2");
  CHECK(entered.next().exit() == root);
  CHECK(error_code_of([&] { root.next(); }) == ErrorCode::kTagMismatch);
}

TEST_CASE("switch rule table") {
  const NodeDef sw = make_node("s", OpType::kSwitch);
  struct Row {
    bool data_live;
    std::optional<bool> predicate;  // nullopt: dead predicate
    bool false_port_live;
    bool true_port_live;
  };
  const Row rows[] = {
      {true, true, false, true},   {true, false, true, false},  {false, true, false, false},
      {false, false, false, false}, {true, std::nullopt, false, false}, {false, std::nullopt, false, false},
  };
  for (const Row& r : rows) {
    CAPTURE(r.data_live);
    CAPTURE(r.predicate.value_or(false));
    const TaggedTensor d = r.data_live ? live(5.0) : dead();
    const TaggedTensor p = r.predicate ? pred(*r.predicate) : dead();
    auto out = eval_node(sw, {d, p});
    REQUIRE(out.size() == 2);
    CHECK(out[0].is_dead() == !r.false_port_live);
    CHECK(out[1].is_dead() == !r.true_port_live);
    for (const auto& o : out) {
      CHECK(o.tag == kT);
      if (!o.is_dead()) CHECK(o.value->scalar_value() == 5.0);
    }
  }
}

TEST_CASE("switch example from the evaluation rules") {
  auto out = eval_node(make_node("s", OpType::kSwitch), {live(5.0), pred(true)});
  CHECK(out[0].is_dead());
  CHECK(!out[0].value.has_value());
  CHECK(out[0].tag == kT);
  CHECK(out[1].value->scalar_value() == 5.0);
  CHECK(out[1].tag == kT);
}

TEST_CASE("merge rule table") {
  const NodeDef merge = make_node("m", OpType::kMerge);
  // (first, second) -> expected; 0 means dead.
  struct Row {
    double first, second, expected;
  };
  const Row rows[] = {{1, 0, 1}, {0, 2, 2}, {0, 0, 0}, {1, 2, 1}};
  for (const Row& r : rows) {
    auto in = [](double v) { return v == 0 ? dead() : live(v); };
    auto out = eval_node(merge, {in(r.first), in(r.second)});
    REQUIRE(out.size() == 1);
    if (r.expected == 0) {
      CHECK(out[0].is_dead());
    } else {
      CHECK(out[0].value->scalar_value() == r.expected);
    }
    CHECK(out[0].tag == kT);
  }
  // Fires on a single available input, which may carry any tag.
  const FrameTag other = FrameTag().enter("M");
  auto single = eval_node(merge, {live(7, other)});
  CHECK(single[0].value->scalar_value() == 7);
  CHECK(single[0].tag == other);
}

TEST_CASE("enter, next iteration and exit rules") {
  NodeDef enter = make_node("e", OpType::kEnter);
  enter.attrs["frame_name"] = std::string("L");
  auto entered = eval_node(enter, {live(1, FrameTag())});
  CHECK(entered[0].tag.str() == "root/L/0");
  auto next = eval_node(make_node("n", OpType::kNextIteration), entered);
  CHECK(next[0].tag.str() == "root/L/1");
  CHECK(next[0].value->scalar_value() == 1);
  auto exited = eval_node(make_node("x", OpType::kExit), next);
  CHECK(exited[0].tag.is_root());

  for (OpType op : {OpType::kEnter, OpType::kNextIteration, OpType::kExit}) {
    NodeDef n = make_node("n", op);
    n.attrs["frame_name"] = std::string("L");
    CHECK(eval_node(n, {dead()})[0].is_dead());
  }
}

TEST_CASE("generic ops are dead iff any input is dead") {
  const NodeDef add = make_node("a", OpType::kAdd);
  auto out = eval_node(add, {live(2), dead()});
  CHECK(out[0].is_dead());
  CHECK(!out[0].value.has_value());
  CHECK(out[0].tag == kT);
  CHECK(eval_node(add, {dead(), live(3)})[0].is_dead());
  CHECK(eval_node(add, {live(2), live(3)})[0].value->scalar_value() == 5);
  EvalContext ctx;
  ctx.control_dead = true;
  CHECK(eval_node(add, {live(2), live(3)}, ctx)[0].is_dead());
}

TEST_CASE("mixed tags are rejected except by Merge") {
  const FrameTag a = FrameTag().enter("L");
  CHECK(error_code_of([&] { eval_node(make_node("a", OpType::kAdd), {live(1, a), live(2, a.next())}); }) ==
        ErrorCode::kTagMismatch);
  CHECK_NOTHROW(eval_node(make_node("m", OpType::kMerge), {live(1, a), live(2, a.next())}));
}

TEST_CASE("counter loop runs to 3") {
  GraphDef g;
  GraphBuilder b(g);
  auto out = b.while_loop([&](const Tensors& v) { return b.less(v[0], b.scalar_int(3)); },
                          [&](const Tensors& v) { return Tensors{v[0] + b.scalar_int(1)}; }, {b.scalar_int(0)});
  auto result = run_with_stats(g, {}, {out[0].port});
  CHECK(as_tensor(result.fetches[0]).scalar_int_value() == 3);
  CHECK(result.stats.max_executions_per_tag == 1);
}

TEST_CASE("fetching an untaken branch yields a dead marker") {
  GraphDef g;
  GraphBuilder b(g);
  auto p = b.placeholder("p", DType::kBool);
  auto x = b.scalar(3);
  SymbolicTensor inside_true;
  auto out = b.cond(
      p,
      [&] {
        inside_true = x + b.scalar(1);
        return Tensors{inside_true};
      },
      [&] { return Tensors{x * b.scalar(2)}; });
  auto fetched = run(g, {{"p", Tensor::scalar_bool(false)}}, {inside_true.port, out[0].port});
  CHECK(is_dead(fetched[0]));
  CHECK(fetch_string(fetched[0]) == "DEAD");
  CHECK(scalar_of(fetched[1]) == 6);
  fetched = run(g, {{"p", Tensor::scalar_bool(true)}}, {inside_true.port, out[0].port});
  CHECK(scalar_of(fetched[0]) == 4);
  CHECK(scalar_of(fetched[1]) == 4);
}

TEST_CASE("request errors") {
  GraphDef g;
  GraphBuilder b(g);
  auto x = b.placeholder("x", DType::kFloat64, Shape{1, 2});
  auto y = b.matmul(x, b.constant(Tensor::f64({2, 1}, {1, 1})));
  CHECK(error_code_of([&] { run(g, {}, {y.port}); }) == ErrorCode::kMissingFeed);
  CHECK(error_code_of([&] { run(g, {{"nope", Tensor::scalar(1)}}, {y.port}); }) == ErrorCode::kInvalidGraph);
  try {
    run(g, {{"x", Tensor::f64({1, 3}, {1, 2, 3})}}, {y.port});
    FAIL("expected a kernel error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kRuntimeKernelError);
    CHECK(e.node() == y.node());
  }
  auto loop = b.while_loop([&](const Tensors& v) { return b.less(v[0], b.scalar_int(2)); },
                           [&](const Tensors& v) { return Tensors{v[0] + b.scalar_int(1)}; }, {b.scalar_int(0)});
  const std::string inner = g.node(loop[0].node()).inputs[0].node;
  CHECK(error_code_of([&] { run(g, {{"x", Tensor::f64({1, 2}, {1, 2})}}, {Port{inner, 0}}); }) ==
        ErrorCode::kInvalidGraph);
}

TEST_CASE("placeholder defaults") {
  GraphDef g;
  GraphBuilder b(g);
  auto x = b.placeholder("x", DType::kFloat64, Shape{}, Tensor::scalar(4));
  auto y = x * x;
  CHECK(scalar_of(run(g, {}, {y.port})[0]) == 16);
  CHECK(scalar_of(run(g, {{"x", Tensor::scalar(3)}}, {y.port})[0]) == 9);
}

// Stack ops built by hand: push values under keys 0..n-1, then pop them
// once every push has finished.
struct StackGraph {
  GraphDef graph;
  std::vector<Port> pops;
};

StackGraph stack_graph(const std::vector<Tensor>& values, bool pop_after_push = true) {
  StackGraph sg;
  GraphDef& g = sg.graph;
  std::vector<std::string> pushes;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::string k = "key" + std::to_string(i);
    g.add_node(const_node(k, Tensor::scalar_int(static_cast<std::int64_t>(i))));
    g.add_node(const_node("value" + std::to_string(i), values[i]));
    NodeDef push = make_node("push" + std::to_string(i), OpType::kStackPush,
                             {{"value" + std::to_string(i), 0}, {k, 0}});
    push.attrs["stack"] = std::string("s");
    g.add_node(push);
    pushes.push_back(push.id);
  }
  for (std::size_t i = values.size(); i-- > 0;) {
    NodeDef pop = make_node("pop" + std::to_string(i), OpType::kStackPop, {{"key" + std::to_string(i), 0}});
    pop.attrs["stack"] = std::string("s");
    pop.attrs["dtype"] = values[i].dtype();
    if (pop_after_push) pop.control_inputs = pushes;
    g.add_node(pop);
    sg.pops.push_back({pop.id, 0});
  }
  return sg;
}

TEST_CASE("stack pops return pushed values last in first out") {
  auto sg = stack_graph({Tensor::scalar(1), Tensor::scalar(2)});
  RunOptions opts;
  opts.workers = 1;
  auto result = run_with_stats(sg.graph, {}, sg.pops, opts);
  CHECK(scalar_of(result.fetches[0]) == 2);
  CHECK(scalar_of(result.fetches[1]) == 1);
  const auto& history = result.stats.stack_history.at("s");
  REQUIRE(history.size() == 4);
  CHECK(history[2] == std::make_pair(StackAction::kPop, StackStore::Key{1}));
  CHECK(history[3] == std::make_pair(StackAction::kPop, StackStore::Key{0}));
}

TEST_CASE("pop of a never pushed entry fails with PopEmpty") {
  GraphDef g;
  g.add_node(const_node("k", Tensor::scalar_int(0)));
  NodeDef pop = make_node("pop", OpType::kStackPop, {{"k", 0}});
  pop.attrs["stack"] = std::string("never");
  pop.attrs["dtype"] = DType::kFloat64;
  g.add_node(pop);
  CHECK(error_code_of([&] { run(g, {}, {{"pop", 0}}); }) == ErrorCode::kPopEmpty);
}

Tensor block(std::size_t bytes, double seed) {
  std::vector<double> data(bytes / 8);
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = seed + 0.5 * static_cast<double>(i);
  return Tensor::f64({static_cast<std::int64_t>(data.size())}, data);
}

RunResult run_stack(const std::vector<Tensor>& values, std::optional<std::size_t> threshold,
                    SpillStoreConfig store = {}) {
  auto sg = stack_graph(values);
  RunOptions opts;
  opts.spill_threshold = threshold;
  opts.spill_store = std::move(store);
  return run_with_stats(sg.graph, {}, sg.pops, opts);
}

TEST_CASE("spilling large stack entries is transparent") {
  const std::vector<Tensor> values = {block(8192, 1), block(8192, 2), block(8192, 3)};
  auto unlimited = run_stack(values, std::nullopt);
  CHECK(unlimited.stats.stacks.spills == 0);
  auto spilled = run_stack(values, 0);
  CHECK(spilled.stats.stacks.spills == 3);
  CHECK(spilled.stats.stacks.restores == 3);
  for (std::size_t i = 0; i < values.size(); ++i) CHECK(same_fetch(spilled.fetches[i], unlimited.fetches[i]));

  const auto dir = std::filesystem::temp_directory_path() / "loomflow_spill_test";
  SpillStoreConfig on_disk;
  on_disk.kind = SpillStoreConfig::Kind::kDirectory;
  on_disk.directory = dir.string();
  auto disk = run_stack(values, 0, on_disk);
  CHECK(disk.stats.stacks.spills == 3);
  for (std::size_t i = 0; i < values.size(); ++i) CHECK(same_fetch(disk.fetches[i], unlimited.fetches[i]));
  std::filesystem::remove_all(dir);
}

TEST_CASE("small stack entries are never spilled") {
  auto result = run_stack({block(1024, 1), block(1024, 2), block(1024, 3)}, 0);
  CHECK(result.stats.stacks.spills == 0);
}

TEST_CASE("spill store capacity and resident cap") {
  SpillStoreConfig tiny;
  tiny.capacity = 100;
  CHECK(error_code_of([&] { run_stack({block(8192, 1)}, 0, tiny); }) == ErrorCode::kSpillStoreFull);

  auto sg = stack_graph({block(8192, 1), block(8192, 2)});
  RunOptions opts;
  opts.resident_cap = 10000;
  CHECK(error_code_of([&] { run(sg.graph, {}, sg.pops, opts); }) == ErrorCode::kOutOfBudget);
}

// A loop whose body sleeps, so iterations overlap when the window allows.
GraphDef slow_loop(int trips, int parallel_iterations, Port* out) {
  GraphDef g;
  GraphBuilder b(g);
  auto result = b.while_loop(
      [&](const Tensors& v) { return b.less(v[0], b.scalar_int(trips)); },
      [&](const Tensors& v) {
        auto work = b.op1(OpType::kIdentity, {v[1] * b.scalar(1.5)}, {{"cost_us", std::int64_t{2000}}});
        return Tensors{v[0] + b.scalar_int(1), work};
      },
      {b.scalar_int(0), b.scalar(1.0)}, parallel_iterations);
  *out = result[1].port;
  return g;
}

// Largest number of iterations of one frame instance whose events overlap.
int max_overlapping_iterations(const std::vector<Event>& events) {
  std::map<std::string, std::pair<std::size_t, std::size_t>> span;  // tag -> first, last event
  for (std::size_t i = 0; i < events.size(); ++i) {
    const std::string& tag = events[i].tag;
    if (tag == "root" || tag.rfind("root", 0) != 0) continue;
    auto [it, fresh] = span.try_emplace(tag, i, i);
    if (!fresh) it->second.second = i;
  }
  int worst = 0;
  for (std::size_t i = 0; i < events.size(); ++i) {
    int open = 0;
    for (const auto& [tag, s] : span) open += (s.first <= i && i <= s.second) ? 1 : 0;
    worst = std::max(worst, open);
  }
  return worst;
}

TEST_CASE("iteration window bound") {
  for (int k : {1, 2, 32}) {
    CAPTURE(k);
    Port out;
    GraphDef g = slow_loop(6, k, &out);
    EventLog log;
    RunOptions opts;
    opts.event_log = &log;
    auto result = run_with_stats(g, {}, {out}, opts);
    CHECK(scalar_of(result.fetches[0]) == doctest::Approx(std::pow(1.5, 6)));
    for (const auto& [frame, live] : result.stats.max_live_iterations) CHECK(live <= k);
    CHECK(max_overlapping_iterations(log.events()) <= k);
    CHECK(result.stats.max_executions_per_tag == 1);
  }
}

TEST_CASE("parallel limit override gives identical results") {
  Port out;
  GraphDef g = slow_loop(5, 32, &out);
  RunOptions serial;
  serial.parallel_limit = 1;
  auto a = run_with_stats(g, {}, {out}, serial);
  auto b = run(g, {}, {out});
  CHECK(same_fetch(a.fetches[0], b[0]));
  CHECK(a.stats.max_live_iterations.begin()->second == 1);
}

TEST_CASE("random schedules agree") {
  Port out;
  GraphDef g = slow_loop(4, 3, &out);
  const auto expected = run(g, {}, {out});
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    RunOptions opts;
    opts.schedule_seed = seed;
    opts.workers = 3;
    CHECK(same_fetch(run(g, {}, {out}, opts)[0], expected[0]));
  }
}

TEST_CASE("event log is written when the environment asks for it") {
  const auto path = std::filesystem::temp_directory_path() / "loomflow_events.ndjson";
  std::filesystem::remove(path);
  ::setenv("LOOMFLOW_EVENT_LOG", path.c_str(), 1);
  GraphDef g;
  GraphBuilder b(g);
  auto y = b.scalar(1) + b.scalar(2);
  run(g, {}, {y.port});
  ::unsetenv("LOOMFLOW_EVENT_LOG");
  std::ifstream in(path);
  std::string line;
  std::set<std::string> actions;
  int lines = 0;
  while (std::getline(in, line)) {
    auto j = nlohmann::json::parse(line);
    CHECK(j.contains("seq"));
    CHECK(j.at("tag") == "root");
    actions.insert(j.at("action").get<std::string>());
    ++lines;
  }
  CHECK(lines == 6);
  CHECK(actions == std::set<std::string>{"start", "done"});
  std::filesystem::remove(path);
}

TEST_CASE("watchdog reports a Recv that never completes") {
  GraphDef g;
  NodeDef recv = make_node("recv", OpType::kRecv);
  recv.attrs["key"] = std::string("edge");
  recv.attrs["dtype"] = DType::kFloat64;
  g.add_node(recv);
  RunOptions opts;
  opts.recv = [](const std::string&, std::function<void(RecvResult)>) {};
  opts.watchdog = std::chrono::milliseconds(100);
  CHECK(error_code_of([&] { run(g, {}, {{"recv", 0}}, opts); }) == ErrorCode::kDeadlockDetected);
}

TEST_CASE("send and recv hooks see tagged keys") {
  GraphDef g;
  GraphBuilder b(g);
  auto loop = b.while_loop([&](const Tensors& v) { return b.less(v[0], b.scalar_int(2)); },
                           [&](const Tensors& v) {
                             b.op(OpType::kSend, {v[0]}, {{"key", std::string("k")}});
                             return Tensors{v[0] + b.scalar_int(1)};
                           },
                           {b.scalar_int(0)});
  std::mutex mu;
  std::vector<std::string> keys;
  RunOptions opts;
  opts.send = [&](const std::string& key, const std::optional<Tensor>& v) {
    std::lock_guard<std::mutex> lock(mu);
    keys.push_back(key + (v ? "=" + std::to_string(v->scalar_int_value()) : "=dead"));
  };
  run(g, {}, {loop[0].port}, opts);
  std::sort(keys.begin(), keys.end());
  const std::string frame = g.context(b.last_while()).frame_name;
  CHECK(keys == std::vector<std::string>{"k;tag=root/" + frame + "/0=0", "k;tag=root/" + frame + "/1=1",
                                         "k;tag=root/" + frame + "/2=dead"});
}

}  // namespace
}  // namespace loomflow
