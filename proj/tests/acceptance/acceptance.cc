// Copyright 2026 The Loomflow Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance gate: eight end-to-end criteria, one PASS/FAIL line each. The
// exit status is nonzero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>

#include "loomflow/autodiff.h"
#include "loomflow/builder.h"
#include "loomflow/distrib.h"
#include "loomflow/errors.h"
#include "loomflow/executor.h"
#include "loomflow/gradcheck.h"
#include "loomflow/transport.h"
#include "tests/support/gradient_programs.h"
#include "tests/support/programs.h"
#include "tests/support/random_program.h"

namespace loomflow {
namespace {

using Clock = std::chrono::steady_clock;

// Collects failed checks for one criterion.
struct Verdict {
  int checks = 0;
  std::vector<std::string> failures;
  std::string detail;

  void expect(bool ok, const std::string& what) {
    ++checks;
    if (!ok && failures.size() < 5) failures.push_back(what);
    if (!ok && failures.size() == 5) failures.push_back("...");
  }
};

struct Criterion {
  int number;
  std::string name;
  double time_limit_s;
  std::function<void(Verdict&)> body;
};

double relative(double a, double b) {
  const double scale = std::max(std::abs(a), std::abs(b));
  return scale == 0 ? 0 : std::abs(a - b) / scale;
}

double scalar(const FetchValue& v) {
  if (is_dead(v)) throw Error(ErrorCode::kInternal, "unexpected dead fetch");
  return std::get<Tensor>(v).scalar_value();
}

// --- 1. Evaluation rules ---

const FrameTag kTag = FrameTag().enter("L").next();

TaggedTensor live(double v, const FrameTag& tag = kTag) { return TaggedTensor::live(Tensor::scalar(v), tag); }
TaggedTensor dead(const FrameTag& tag = kTag) { return TaggedTensor::dead(tag); }

NodeDef node(OpType op, const std::string& frame = {}) {
  NodeDef n;
  n.id = std::string(op_name(op));
  n.op = op;
  if (!frame.empty()) n.attrs["frame_name"] = frame;
  return n;
}

void evaluation_rules(Verdict& v) {
  // Switch: data live/dead x predicate true/false/dead.
  for (int data = 0; data < 2; ++data) {
    for (int p = 0; p < 3; ++p) {
      const TaggedTensor d = data ? live(5) : dead();
      const TaggedTensor pred = p == 2 ? dead() : TaggedTensor::live(Tensor::scalar_bool(p == 1), kTag);
      const auto out = eval_node(node(OpType::kSwitch), {d, pred});
      const bool pred_dead = p == 2;
      const bool false_live = data && !pred_dead && p == 0;
      const bool true_live = data && !pred_dead && p == 1;
      const std::string row = "switch data=" + std::to_string(data) + " pred=" + std::to_string(p);
      v.expect(out.size() == 2, row + " arity");
      v.expect(out[0].is_dead() == !false_live && out[1].is_dead() == !true_live, row + " deadness");
      for (const auto& o : out) {
        v.expect(o.tag == kTag, row + " tag");
        v.expect(o.is_dead() || o.value->scalar_value() == 5, row + " value");
        v.expect(!o.is_dead() || !o.value.has_value(), row + " dead carries no value");
      }
    }
  }
  // Merge: first live input wins; dead only when every input is dead.
  for (int a = 0; a < 2; ++a) {
    for (int b = 0; b < 2; ++b) {
      const auto out = eval_node(node(OpType::kMerge), {a ? live(1) : dead(), b ? live(2) : dead()});
      const std::string row = "merge " + std::to_string(a) + std::to_string(b);
      const double expected = a ? 1 : (b ? 2 : 0);
      v.expect(out.size() == 1 && out[0].tag == kTag, row + " shape");
      v.expect(expected == 0 ? out[0].is_dead() : (!out[0].is_dead() && out[0].value->scalar_value() == expected),
               row + " value");
    }
  }
  const FrameTag other = FrameTag().enter("M");
  const auto single = eval_node(node(OpType::kMerge), {live(7, other)});
  v.expect(single[0].tag == other && single[0].value->scalar_value() == 7, "merge single input keeps its tag");

  // Enter / NextIteration / Exit, live and dead.
  for (int alive = 0; alive < 2; ++alive) {
    const TaggedTensor in = alive ? live(3, FrameTag()) : dead(FrameTag());
    const auto entered = eval_node(node(OpType::kEnter, "L"), {in});
    v.expect(entered[0].tag.str() == "root/L/0", "enter appends /L/0");
    v.expect(entered[0].is_dead() == !alive, "enter deadness");
    const auto next = eval_node(node(OpType::kNextIteration), entered);
    v.expect(next[0].tag.str() == "root/L/1", "next iteration increments");
    v.expect(next[0].is_dead() == !alive, "next iteration deadness");
    const auto exited = eval_node(node(OpType::kExit), next);
    v.expect(exited[0].tag.is_root(), "exit drops the frame");
    v.expect(exited[0].is_dead() == !alive, "exit deadness");
    if (alive) v.expect(exited[0].value->scalar_value() == 3, "value survives enter, next, exit");
  }

  // Generic ops are dead iff any input (or control input) is dead.
  for (int a = 0; a < 2; ++a) {
    for (int b = 0; b < 2; ++b) {
      for (int ctl = 0; ctl < 2; ++ctl) {
        EvalContext ctx;
        ctx.control_dead = ctl == 1;
        const auto out = eval_node(node(OpType::kAdd), {a ? live(2) : dead(), b ? live(3) : dead()}, ctx);
        const bool expect_live = a && b && !ctl;
        const std::string row = "add " + std::to_string(a) + std::to_string(b) + std::to_string(ctl);
        v.expect(out[0].is_dead() == !expect_live, row + " deadness");
        v.expect(out[0].tag == kTag, row + " tag");
        if (expect_live) v.expect(out[0].value->scalar_value() == 5, row + " value");
      }
    }
  }

  // Mixed tags are rejected by everything but Merge.
  bool rejected = false;
  try {
    eval_node(node(OpType::kAdd), {live(1), live(2, other)});
  } catch (const Error& e) {
    rejected = e.code() == ErrorCode::kTagMismatch;
  }
  v.expect(rejected, "mixed tags raise TagMismatch");
  v.detail = std::to_string(v.checks) + " rule checks";
}

// --- 2. Loop against the unrolled graph ---

void loop_vs_unrolled(Verdict& v) {
  double worst = 0;
  for (std::int64_t n = 1; n <= 8; ++n) {
    auto loop = testing::matmul_loop(n);
    auto flat = testing::matmul_unrolled(n);
    auto lg = gradients(loop.graph, loop.y, {loop.x, loop.w});
    auto fg = gradients(flat.graph, flat.y, {flat.x, flat.w});
    const auto feeds = testing::matmul_feeds(2, 3);
    auto a = run(loop.graph, feeds, {loop.y, lg[0], lg[1]});
    auto b = run(flat.graph, feeds, {flat.y, fg[0], fg[1]});
    for (int i = 0; i < 3; ++i) {
      const double e = relative(scalar(a[i]), scalar(b[i]));
      worst = std::max(worst, e);
      v.expect(e <= 1e-12, "n=" + std::to_string(n) + " output " + std::to_string(i));
    }
    const double w3 = std::pow(3.0, static_cast<double>(n));
    v.expect(relative(scalar(a[0]), 2 * w3) <= 1e-12, "n=" + std::to_string(n) + " forward value");
    if (n == 3) {
      v.expect(scalar(a[1]) == 27, "dy/dx = 27 at n=3");
      v.expect(scalar(a[2]) == 54, "dy/dw = 54 at n=3");
    }
  }
  std::ostringstream s;
  s << "n=1..8, worst relative difference " << worst << ", dy/dx=27 dy/dw=54 at n=3";
  v.detail = s.str();
}

// --- 3. Gradient checks ---

void gradient_checks(Verdict& v) {
  double worst = 0;
  int programs = 0;
  for (auto family : testing::kAllFamilies) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      auto p = testing::gradient_program(family, seed);
      const auto c = compare_gradients(p.graph, p.y, p.feeds, p.wrt, 1e-6);
      worst = std::max(worst, c.max_relative_error);
      ++programs;
      v.expect(c.max_relative_error <= 1e-5,
               std::string(testing::family_name(family)) + " seed " + std::to_string(seed));
    }
  }
  std::ostringstream s;
  s << programs << " programs over 7 families, worst relative error " << worst;
  v.detail = s.str();
}

// --- 4. Distributed equivalence ---

void distributed_equivalence(Verdict& v) {
  testing::ProgramOptions po;
  po.max_depth = 2;
  std::size_t fetches = 0, dead = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    auto program = testing::random_program(seed + 1000, po);
    auto built = testing::build_program(program, 1 + static_cast<int>(seed % 4));
    const auto local = run(built.graph, built.feeds, built.fetches);
    const int devices = 1 + static_cast<int>(seed % 3);
    const PartitionedGraph parts =
        partition(built.graph, testing::random_placement(built.graph, devices, seed * 31 + 7));
    DistributedOptions opts;
    opts.local.watchdog = std::chrono::seconds(30);
    opts.local.schedule_seed = seed;
    opts.make_transport = [seed] {
      InProcOptions io;
      io.shuffle_seed = seed;
      return make_inproc_transport(io);
    };
    try {
      const auto dist = run_distributed(parts, built.feeds, built.fetches, opts);
      bool same = dist.fetches.size() == local.size();
      for (std::size_t i = 0; same && i < local.size(); ++i) same = same_fetch(dist.fetches[i], local[i]);
      v.expect(same, "triple " + std::to_string(seed) + " differs from local execution");
      for (const auto& f : local) dead += is_dead(f) ? 1 : 0;
      fetches += local.size();
    } catch (const Error& e) {
      v.expect(false, "triple " + std::to_string(seed) + ": " + e.what());
    }
  }
  v.detail = "200 triples, " + std::to_string(fetches) + " fetches (" + std::to_string(dead) + " dead), no hangs";
}

// --- 5. Dead branch across devices ---

void dead_branch(Verdict& v) {
  GraphDef g;
  GraphBuilder b(g);
  auto x = b.placeholder("x", DType::kFloat64, Shape{});
  auto p = b.placeholder("p", DType::kBool, Shape{});
  Port untaken;
  auto out = b.cond(
      p,
      [&] {
        auto t = b.op1(OpType::kMul, {x, x}, {}, "remote_square");
        untaken = t.port;
        return Tensors{b.op1(OpType::kAdd, {t, x}, {}, "remote_sum")};
      },
      [&] { return Tensors{b.neg(x)}; });
  Placement placement;
  placement.devices = {"A", "B"};
  placement.rules = {{"remote_square", "B"}, {"remote_sum", "B"}};
  const PartitionedGraph parts = partition(g, placement);
  const std::map<std::string, Tensor> feeds{{"x", Tensor::scalar(3.0)}, {"p", Tensor::scalar_bool(false)}};
  int ok = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    DistributedOptions opts;
    opts.local.watchdog = std::chrono::seconds(10);
    opts.local.schedule_seed = seed;
    opts.make_transport = [seed] {
      InProcOptions io;
      io.shuffle_seed = seed;
      return make_inproc_transport(io);
    };
    try {
      const auto r = run_distributed(parts, feeds, {untaken, out[0].port}, opts);
      const bool good = is_dead(r.fetches[0]) && !is_dead(r.fetches[1]) && scalar(r.fetches[1]) == -3 &&
                        r.transport.undelivered == 0;
      ok += good ? 1 : 0;
      v.expect(good, "interleaving " + std::to_string(seed));
    } catch (const Error& e) {
      v.expect(false, "interleaving " + std::to_string(seed) + ": " + e.what());
    }
  }
  v.detail = std::to_string(ok) + "/100 interleavings returned DEAD for the untaken remote branch";
}

// --- 6. Pipelined throughput ---

double median_rate(int parallel_limit) {
  PipelineOptions o;
  o.pattern = PipelinePattern::kChained;
  o.devices = 4;
  o.stages = 4;
  o.per_op_delay = std::chrono::milliseconds(1);
  o.iterations = 100;
  o.parallel_limit = parallel_limit;
  std::vector<double> rates;
  for (int t = 0; t < 5; ++t) rates.push_back(bench_pipeline(o).iterations_per_sec);
  std::sort(rates.begin(), rates.end());
  return rates[2];
}

void pipeline_throughput(Verdict& v) {
  const double serial = median_rate(1);
  const double overlapped = median_rate(8);
  const double ratio = overlapped / serial;
  v.expect(ratio >= 3, "throughput ratio below 3");
  std::ostringstream s;
  s << "limit 1: " << serial << " it/s, limit 8: " << overlapped << " it/s, ratio " << ratio;
  v.detail = s.str();
}

// --- 7. Spilling ---

// 100 iterations of h <- h * w + x on 64x64 float64 blocks (32 KiB each);
// the gradient keeps every h on a stack, 3.2 MiB in total.
struct SpillProgram {
  GraphDef graph;
  std::vector<Port> fetches;
  std::map<std::string, Tensor> feeds;
};

SpillProgram spill_program() {
  SpillProgram p;
  GraphBuilder b(p.graph);
  const Shape shape{64, 64};
  auto x = b.placeholder("x", DType::kFloat64, shape);
  auto w = b.placeholder("w", DType::kFloat64, shape);
  auto out = b.while_loop([&](const Tensors& vars) { return b.less(vars[0], b.scalar_int(100)); },
                          [&](const Tensors& vars) {
                            return Tensors{vars[0] + b.scalar_int(1), vars[1] * w + x};
                          },
                          {b.scalar_int(0), x}, 32, "spill_loop");
  auto y = b.op1(OpType::kReduceSumAll, {out[1]}, {}, "y");
  auto grads = gradients(p.graph, y.port, {x.port, w.port});
  p.fetches = {y.port, grads[0], grads[1]};
  std::vector<double> xs(64 * 64), ws(64 * 64);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    xs[i] = 0.5 + static_cast<double>(i % 97) / 97.0;
    ws[i] = 0.95 + static_cast<double>(i % 89) / 890.0;
  }
  p.feeds = {{"x", Tensor::f64(shape, xs)}, {"w", Tensor::f64(shape, ws)}};
  return p;
}

void spill_transparency(Verdict& v) {
  const SpillProgram p = spill_program();
  const auto unlimited = run_with_stats(p.graph, p.feeds, p.fetches, {});
  RunOptions spilling;
  spilling.spill_threshold = std::size_t{1} << 20;
  const auto spilled = run_with_stats(p.graph, p.feeds, p.fetches, spilling);
  bool identical = true;
  for (std::size_t i = 0; i < p.fetches.size(); ++i) identical = identical && same_fetch(spilled.fetches[i], unlimited.fetches[i]);
  v.expect(identical, "spilled run differs from threshold=inf");
  v.expect(unlimited.stats.stacks.spills == 0, "threshold=inf spilled");
  v.expect(spilled.stats.stacks.spills > 0, "nothing was spilled at 1 MiB");
  v.expect(unlimited.stats.stacks.peak_resident_bytes > (std::size_t{1} << 20), "intermediates stay under 1 MiB");

  RunOptions capped;
  capped.resident_cap = std::size_t{2} << 20;
  bool out_of_budget = false;
  try {
    run(p.graph, p.feeds, p.fetches, capped);
  } catch (const Error& e) {
    out_of_budget = e.code() == ErrorCode::kOutOfBudget;
  }
  v.expect(out_of_budget, "2 MiB resident cap did not report OutOfBudget");

  RunOptions both = capped;
  both.spill_threshold = spilling.spill_threshold;
  const auto rescued = run(p.graph, p.feeds, p.fetches, both);
  bool same = true;
  for (std::size_t i = 0; i < p.fetches.size(); ++i) same = same && same_fetch(rescued[i], unlimited.fetches[i]);
  v.expect(same, "spilling under the 2 MiB cap differs");

  std::ostringstream s;
  s << "peak resident " << unlimited.stats.stacks.peak_resident_bytes / 1024 << " KiB unspilled, "
    << spilled.stats.stacks.peak_resident_bytes / 1024 << " KiB with " << spilled.stats.stacks.spills
    << " spills; cap without spilling: " << (out_of_budget ? "OutOfBudget" : "no error");
  v.detail = s.str();
}

// --- 8. Parallel-limit invariance ---

void parallel_limit_invariance(Verdict& v) {
  struct Entry {
    std::string name;
    GraphDef graph;
    std::map<std::string, Tensor> feeds;
    std::vector<Port> fetches;
  };
  std::vector<Entry> corpus;
  testing::ProgramOptions po;
  for (std::uint64_t seed = 0; seed < 150; ++seed) {
    auto built = testing::build_program(testing::random_program(seed + 5000, po));
    corpus.push_back({"random " + std::to_string(seed), std::move(built.graph), built.feeds, built.fetches});
  }
  for (auto family : testing::kAllFamilies) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      auto p = testing::gradient_program(family, seed);
      std::vector<Port> xs;
      for (const auto& name : p.wrt) xs.push_back({name, 0});
      auto grads = gradients(p.graph, p.y, xs);
      grads.insert(grads.begin(), p.y);
      corpus.push_back({std::string(testing::family_name(family)) + " " + std::to_string(seed), std::move(p.graph),
                        p.feeds, grads});
    }
  }
  for (std::int64_t n = 1; n <= 8; ++n) {
    auto m = testing::matmul_loop(n);
    auto grads = gradients(m.graph, m.y, {m.x, m.w});
    corpus.push_back({"matmul loop " + std::to_string(n), std::move(m.graph), testing::matmul_feeds(),
                      {m.y, grads[0], grads[1]}});
  }
  {
    PipelineOptions o;
    o.per_op_delay = std::chrono::microseconds(0);
    o.iterations = 50;
    for (auto pattern : {PipelinePattern::kIndependent, PipelinePattern::kBarrier, PipelinePattern::kChained}) {
      o.pattern = pattern;
      auto prog = pipeline_program(o);
      corpus.push_back({"pipeline " + std::string(pipeline_pattern_name(pattern)), std::move(prog.graph), {},
                        {prog.result}});
    }
  }
  const SpillProgram spill = spill_program();
  corpus.push_back({"spill loop", spill.graph, spill.feeds, spill.fetches});

  for (const auto& e : corpus) {
    std::vector<FetchValue> baseline;
    for (int limit : {1, 2, 32}) {
      RunOptions opts;
      opts.parallel_limit = limit;
      opts.watchdog = std::chrono::seconds(30);
      try {
        auto values = run(e.graph, e.feeds, e.fetches, opts);
        if (baseline.empty()) {
          baseline = std::move(values);
          continue;
        }
        bool same = values.size() == baseline.size();
        for (std::size_t i = 0; same && i < values.size(); ++i) same = same_fetch(values[i], baseline[i]);
        v.expect(same, e.name + " at limit " + std::to_string(limit));
      } catch (const Error& err) {
        v.expect(false, e.name + " at limit " + std::to_string(limit) + ": " + err.what());
      }
    }
  }
  v.detail = std::to_string(corpus.size()) + " programs identical at limits 1, 2, 32";
}

}  // namespace
}  // namespace loomflow

int main() {
  using namespace loomflow;
  const std::vector<Criterion> criteria = {
      {1, "evaluation-rule fidelity", 1, evaluation_rules},
      {2, "loop vs unrolled oracle", 5, loop_vs_unrolled},
      {3, "gradient checks", 60, gradient_checks},
      {4, "distributed equivalence", 300, distributed_equivalence},
      {5, "dead-branch liveness", 30, dead_branch},
      {6, "parallel-iteration throughput", 120, pipeline_throughput},
      {7, "spill transparency", 30, spill_transparency},
      {8, "parallel-limit invariance", 60, parallel_limit_invariance},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    Verdict v;
    const auto start = Clock::now();
    try {
      c.body(v);
    } catch (const std::exception& e) {
      v.expect(false, std::string("threw: ") + e.what());
    }
    const double seconds = std::chrono::duration<double>(Clock::now() - start).count();
    v.expect(seconds < c.time_limit_s, "over the time limit");
    const bool pass = v.failures.empty();
    failed += pass ? 0 : 1;
    std::printf("criterion %d %s: %s (%.2fs of %.0fs) %s\n", c.number, c.name.c_str(), pass ? "PASS" : "FAIL", seconds,
                c.time_limit_s, v.detail.c_str());
    for (const auto& f : v.failures) std::printf("    failed: %s\n", f.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
