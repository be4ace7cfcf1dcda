// Copyright 2026 The Loomflow Authors
// SPDX-License-Identifier: Apache-2.0

#include <random>

#include "doctest.h"
#include "loomflow/builder.h"
#include "loomflow/executor.h"
#include "loomflow/validate.h"
#include "tests/support/random_program.h"
#include "tests/support/test_util.h"

namespace loomflow {
namespace {

using testing::as_tensor;
using testing::error_code_of;
using testing::scalar_of;

TEST_CASE("cond executes the taken branch") {
  GraphDef g;
  GraphBuilder b(g);
  auto x = b.scalar(3);
  auto out = b.cond(
      b.constant(Tensor::scalar_bool(true)), [&] { return Tensors{x + b.scalar(1)}; },
      [&] { return Tensors{x * b.scalar(2)}; });
  CHECK(validate(g).empty());
  CHECK(scalar_of(run(g, {}, {out[0].port})[0]) == 4);
}

TEST_CASE("one capture switch per external tensor") {
  GraphDef g;
  GraphBuilder b(g);
  auto p = b.placeholder("p", DType::kBool);
  auto x = b.placeholder("x", DType::kFloat64);
  auto y = b.placeholder("y", DType::kFloat64);
  auto z = b.placeholder("z", DType::kFloat64);
  auto out = b.cond(
      p, [&] { return Tensors{x + y * z + x}; }, [&] { return Tensors{b.scalar(0)}; });
  const CondGroupDef& group = g.cond_groups().back();
  int true_captures = 0;
  for (const auto& id : group.switches) true_captures += g.node(id).attr_bool("branch");
  CHECK(true_captures == 3);
  CHECK(group.switches.size() == 3);
  CHECK(group.merges.size() == 1);
  auto fetched = run(g,
                     {{"p", Tensor::scalar_bool(true)},
                      {"x", Tensor::scalar(1)},
                      {"y", Tensor::scalar(2)},
                      {"z", Tensor::scalar(3)}},
                     {out[0].port});
  CHECK(scalar_of(fetched[0]) == 8);
}

TEST_CASE("cond construction errors") {
  GraphDef g;
  GraphBuilder b(g);
  auto p = b.constant(Tensor::scalar_bool(true));
  auto x = b.scalar(1);
  CHECK(error_code_of([&] {
          b.cond(
              p, [&] { return Tensors{x, x}; }, [&] { return Tensors{x}; });
        }) == ErrorCode::kBranchArityMismatch);
  CHECK(error_code_of([&] {
          b.cond(
              p, [&] { return Tensors{x}; }, [&] { return Tensors{b.scalar_int(1)}; });
        }) == ErrorCode::kBranchDtypeMismatch);
  CHECK(error_code_of([&] {
          b.cond(
              x, [&] { return Tensors{x}; }, [&] { return Tensors{x}; });
        }) == ErrorCode::kNonBooleanPredicate);
  CHECK(b.current_context() == 0);
}

TEST_CASE("while loop counter and structure") {
  GraphDef g;
  GraphBuilder b(g);
  auto out = b.while_loop([&](const Tensors& v) { return b.less(v[0], b.scalar_int(3)); },
                          [&](const Tensors& v) { return Tensors{v[0] + b.scalar_int(1)}; }, {b.scalar_int(0)});
  CHECK(validate(g).empty());
  const ContextDef& loop = g.context(b.last_while());
  CHECK(loop.parallel_iterations == 32);
  // The hidden counter plus the user's variable.
  REQUIRE(loop.loop_vars.size() == 2);
  for (const auto& var : loop.loop_vars) {
    CHECK(g.node(var.enter).op == OpType::kEnter);
    CHECK(g.node(var.merge).op == OpType::kMerge);
    CHECK(g.node(var.switch_node).op == OpType::kSwitch);
    CHECK(g.node(var.exit).op == OpType::kExit);
    CHECK(g.node(var.next_iteration).op == OpType::kNextIteration);
    CHECK(g.node(var.merge).inputs[1].node == var.next_iteration);
    CHECK(g.node(var.exit).inputs[0] == Port{var.switch_node, 0});
  }
  CHECK(g.node(out[0].node()).op == OpType::kExit);
  CHECK(as_tensor(run(g, {}, {out[0].port})[0]).scalar_int_value() == 3);
}

TEST_CASE("loop constants enter once per external tensor") {
  GraphDef g;
  GraphBuilder b(g);
  auto x = b.constant(Tensor::f64({1, 1}, {2}));
  auto w = b.constant(Tensor::f64({1, 1}, {3}));
  auto out = b.while_loop([&](const Tensors& v) { return b.less(v[0], b.scalar_int(3)); },
                          [&](const Tensors& v) { return Tensors{v[0] + b.scalar_int(1), b.matmul(v[1], w)}; },
                          {b.scalar_int(0), x});
  const ContextDef& loop = g.context(b.last_while());
  int w_enters = 0;
  for (const auto& id : loop.constant_enters) {
    const NodeDef& enter = g.node(id);
    CHECK(enter.attr_bool("is_constant"));
    CHECK(enter.attr_string("frame_name") == loop.frame_name);
    w_enters += enter.inputs[0].node == w.node();
  }
  CHECK(w_enters == 1);
  auto fetched = run(g, {}, {out[1].port});
  CHECK(as_tensor(fetched[0]).identical(Tensor::f64({1, 1}, {54})));
}

TEST_CASE("zero-trip loop returns its inits") {
  GraphDef g;
  GraphBuilder b(g);
  auto out = b.while_loop([&](const Tensors& v) { return b.less(v[1], b.scalar(0)); },
                          [&](const Tensors& v) { return Tensors{v[0] * b.scalar(2), v[1]}; },
                          {b.scalar(7), b.scalar(1)});
  auto fetched = run(g, {}, {out[0].port, out[1].port});
  CHECK(scalar_of(fetched[0]) == 7);
  CHECK(scalar_of(fetched[1]) == 1);
}

TEST_CASE("while construction errors") {
  GraphDef g;
  GraphBuilder b(g);
  auto i = b.scalar_int(0);
  auto pred = [&](const Tensors& v) { return b.less(v[0], b.scalar_int(3)); };
  CHECK(error_code_of([&] {
          b.while_loop(pred, [&](const Tensors& v) { return Tensors{v[0], v[0]}; }, {i});
        }) == ErrorCode::kArityMismatch);
  CHECK(error_code_of([&] {
          b.while_loop(pred, [&](const Tensors&) { return Tensors{b.scalar(1)}; }, {i});
        }) == ErrorCode::kDtypeMismatch);
  CHECK(error_code_of([&] {
          b.while_loop([&](const Tensors& v) { return v[0]; }, [&](const Tensors& v) { return v; }, {i});
        }) == ErrorCode::kNonBooleanPredicate);
  CHECK(b.current_context() == 0);
}

TEST_CASE("tensor array round trips") {
  GraphDef g;
  GraphBuilder b(g);
  auto ta = b.tensor_array(DType::kFloat64, b.scalar_int(2));
  auto written = b.ta_write(ta, b.scalar_int(0), b.constant(Tensor::f64({2}, {1, 2})));
  auto read = b.ta_read(written, b.scalar_int(0));
  auto size = b.ta_size(written);

  auto ta2 = b.tensor_array(DType::kFloat64);
  const Tensor rows = Tensor::f64({3, 1}, {1, 2, 3});
  auto stacked = b.ta_stack(b.ta_unstack(ta2, b.constant(rows)));
  auto fetched = run(g, {}, {read.port, size.port, stacked.port});
  CHECK(as_tensor(fetched[0]).identical(Tensor::f64({2}, {1, 2})));
  CHECK(as_tensor(fetched[1]).scalar_int_value() == 2);
  CHECK(as_tensor(fetched[2]).identical(rows));
}

TEST_CASE("tensor array execution errors") {
  auto failing = [](auto&& build) {
    GraphDef g;
    GraphBuilder b(g);
    Port fetch = build(b);
    return error_code_of([&] { run(g, {}, {fetch}); });
  };
  CHECK(failing([](GraphBuilder& b) {
          auto ta = b.tensor_array(DType::kFloat64, b.scalar_int(2));
          auto v = b.scalar(1);
          auto once = b.ta_write(ta, b.scalar_int(0), v);
          return b.ta_write(once, b.scalar_int(0), v).flow.port;
        }) == ErrorCode::kDoubleWrite);
  CHECK(failing([](GraphBuilder& b) {
          auto ta = b.tensor_array(DType::kFloat64, b.scalar_int(2));
          return b.ta_read(ta, b.scalar_int(1)).port;
        }) == ErrorCode::kReadBeforeWrite);
  CHECK(failing([](GraphBuilder& b) {
          auto ta = b.tensor_array(DType::kFloat64, b.scalar_int(2));
          return b.ta_write(ta, b.scalar_int(5), b.scalar(1)).flow.port;
        }) == ErrorCode::kIndexOutOfRange);
}

Tensor vec(std::vector<double> v) {
  const auto n = static_cast<std::int64_t>(v.size());
  return Tensor::f64({n}, std::move(v));
}

Tensor run_scan(bool multiply, const Tensor& elems, double init) {
  GraphDef g;
  GraphBuilder b(g);
  auto out = b.scan(
      [&](const SymbolicTensor& acc, const SymbolicTensor& x) { return multiply ? b.mul(acc, x) : b.add(acc, x); },
      b.constant(elems), b.scalar(init));
  return as_tensor(run(g, {}, {out.port})[0]);
}

TEST_CASE("scan examples") {
  CHECK(run_scan(false, vec({1, 2, 3}), 0).identical(vec({1, 3, 6})));
  CHECK(run_scan(true, vec({2, 2, 2}), 1).identical(vec({2, 4, 8})));
  const Tensor empty = run_scan(false, Tensor::f64({0}, {}), 0);
  CHECK(empty.shape() == Shape{0});
}

TEST_CASE("scan equals a fold over every prefix") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> value(0.5, 1.5);
  for (int n = 1; n <= 8; ++n) {
    std::vector<double> elems(n);
    for (auto& e : elems) e = value(rng);
    const double init = value(rng);
    for (bool multiply : {false, true}) {
      std::vector<double> expected;
      for (int i = 0; i < n; ++i) {
        // Fold of the prefix elems[0..i], recomputed from scratch.
        double fold = init;
        for (int j = 0; j <= i; ++j) fold = multiply ? fold * elems[j] : fold + elems[j];
        expected.push_back(fold);
      }
      CHECK(run_scan(multiply, vec(elems), init).identical(vec(expected)));
    }
  }
}

TEST_CASE("parallel_iterations does not change loop results") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    testing::ProgramOptions opts;
    opts.allow_cond = seed % 2 == 0;
    auto program = testing::random_program(seed, opts);
    auto serial = testing::build_program(program, 1);
    auto wide = testing::build_program(program, 32);
    auto a = run(serial.graph, serial.feeds, serial.fetches);
    auto b = run(wide.graph, wide.feeds, wide.fetches);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(same_fetch(a[i], b[i]));
  }
}

TEST_CASE("random nested programs match the reference interpreter") {
  int loops_seen = 0;
  for (std::uint64_t seed = 0; seed < 150; ++seed) {
    auto program = testing::random_program(seed);
    CAPTURE(program.str());
    auto built = testing::build_program(program);
    const auto violations = validate(built.graph);
    CHECK_MESSAGE(violations.empty(), (violations.empty() ? "" : violations[0].str()));
    const auto expected = testing::reference_values(program);
    RunOptions opts;
    opts.schedule_seed = seed;
    auto result = run_with_stats(built.graph, built.feeds, built.fetches, opts);
    REQUIRE(result.fetches.size() == expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i) {
      CAPTURE(i);
      if (!expected[i]) {
        CHECK(is_dead(result.fetches[i]));
      } else {
        REQUIRE(!is_dead(result.fetches[i]));
        CHECK(std::get<Tensor>(result.fetches[i]).scalar_value() == *expected[i]);
      }
    }
    CHECK(result.stats.max_executions_per_tag == 1);
    loops_seen += !result.stats.max_live_iterations.empty();
  }
  CHECK(loops_seen > 30);
}

}  // namespace
}  // namespace loomflow
