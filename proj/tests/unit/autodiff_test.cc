// Copyright 2026 The Loomflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "loomflow/autodiff.h"

#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "loomflow/builder.h"
#include "loomflow/executor.h"
#include "loomflow/validate.h"
#include "tests/support/finite_difference.h"
#include "tests/support/gradient_programs.h"
#include "tests/support/programs.h"
#include "tests/support/random_program.h"
#include "tests/support/test_util.h"

namespace loomflow {
namespace {

using testing::scalar_of;
using testing::mat11;
using testing::matmul_loop;
using testing::matmul_unrolled;
using testing::MatmulLoop;

std::vector<double> values_of(const std::vector<FetchValue>& out) {
  std::vector<double> v;
  for (const auto& f : out) {
    const Tensor& t = testing::as_tensor(f);
    v.insert(v.end(), t.f64_data().begin(), t.f64_data().end());
  }
  return v;
}

TEST_CASE("matmul gradients") {
  GraphDef g;
  GraphBuilder b(g);
  auto x = b.placeholder("x", DType::kFloat64, Shape{1, 1});
  auto w = b.placeholder("w", DType::kFloat64, Shape{1, 1});
  auto y = b.reduce_sum(b.matmul(x, w));
  auto grads = gradients(g, y.port, {x.port, w.port});
  CHECK(validate(g).empty());
  auto out = run(g, {{"x", mat11(2)}, {"w", mat11(3)}}, grads);
  CHECK(testing::as_tensor(out[0]) == mat11(3));
  CHECK(testing::as_tensor(out[1]) == mat11(2));
}

TEST_CASE("loop gradient matches the analytic derivative") {
  MatmulLoop m = matmul_loop(3);
  auto grads = gradients(m.graph, m.y, {m.w, m.x});
  CHECK(validate(m.graph).empty());
  auto out = run(m.graph, {{"x", mat11(2)}, {"w", mat11(3)}}, grads);
  CHECK(scalar_of(out[0]) == doctest::Approx(54).epsilon(1e-12));
  CHECK(scalar_of(out[1]) == doctest::Approx(27).epsilon(1e-12));
}

TEST_CASE("loop gradient saves one stack with three pushes popped in reverse") {
  MatmulLoop m = matmul_loop(3);
  auto grads = gradients(m.graph, m.y, {m.w, m.x});
  int push_nodes = 0;
  for (const auto& n : m.graph.nodes()) push_nodes += n.op == OpType::kStackPush;
  CHECK(push_nodes == 1);

  RunOptions opts;
  opts.parallel_limit = 1;
  RunResult r = run_with_stats(m.graph, {{"x", mat11(2)}, {"w", mat11(3)}}, grads, opts);
  REQUIRE(r.stats.stack_history.size() == 1);
  const auto& history = r.stats.stack_history.begin()->second;
  std::vector<StackStore::Key> pushed;
  std::vector<StackStore::Key> popped;
  for (const auto& [action, key] : history) (action == StackAction::kPush ? pushed : popped).push_back(key);
  CHECK(pushed.size() == 3);
  CHECK(popped.size() == 3);
  // Strict LIFO in time: every pop takes the most recent remaining push.
  std::vector<StackStore::Key> live;
  for (const auto& [action, key] : history) {
    if (action == StackAction::kPush) {
      live.push_back(key);
    } else {
      REQUIRE(!live.empty());
      CHECK(live.back() == key);
      live.pop_back();
    }
  }
  CHECK(live.empty());
}

TEST_CASE("loop gradient equals the gradient of the unrolled graph") {
  for (std::int64_t n = 1; n <= 8; ++n) {
    CAPTURE(n);
    MatmulLoop loop = matmul_loop(n);
    MatmulLoop flat = matmul_unrolled(n);
    auto gl = gradients(loop.graph, loop.y, {loop.x, loop.w});
    auto gf = gradients(flat.graph, flat.y, {flat.x, flat.w});
    const std::map<std::string, Tensor> feeds{{"x", mat11(0.7)}, {"w", mat11(1.3)}};
    std::vector<Port> fl{loop.y};
    fl.insert(fl.end(), gl.begin(), gl.end());
    std::vector<Port> ff{flat.y};
    ff.insert(ff.end(), gf.begin(), gf.end());
    auto vl = values_of(run(loop.graph, feeds, fl));
    auto vf = values_of(run(flat.graph, feeds, ff));
    CHECK(testing::max_relative_error(vl, vf) <= 1e-12);
  }
}

TEST_CASE("zero-trip loop passes the upstream gradient through") {
  MatmulLoop m = matmul_loop(0);
  auto grads = gradients(m.graph, m.y, {m.x, m.w});
  auto out = run(m.graph, {{"x", mat11(2)}, {"w", mat11(3)}}, grads);
  CHECK(scalar_of(out[0]) == 1.0);
  CHECK(scalar_of(out[1]) == 0.0);
}

TEST_CASE("cond gradient follows the taken branch") {
  GraphDef g;
  GraphBuilder b(g);
  auto p = b.placeholder("p", DType::kBool, Shape{});
  auto x = b.placeholder("x", DType::kFloat64, Shape{});
  auto y = b.cond(
      p, [&] { return Tensors{b.scalar(2.0) * x}; }, [&] { return Tensors{x + b.scalar(1.0)}; });
  auto grads = gradients(g, y[0].port, {x.port});
  CHECK(validate(g).empty());
  auto taken = run(g, {{"p", Tensor::scalar_bool(true)}, {"x", Tensor::scalar(5.0)}}, grads);
  auto untaken = run(g, {{"p", Tensor::scalar_bool(false)}, {"x", Tensor::scalar(5.0)}}, grads);
  CHECK(scalar_of(taken[0]) == 2.0);
  CHECK(scalar_of(untaken[0]) == 1.0);

  for (bool pv : {true, false}) {
    CAPTURE(pv);
    GraphDef fresh;
    GraphBuilder fb(fresh);
    auto fp = fb.placeholder("p", DType::kBool, Shape{});
    auto fx = fb.placeholder("x", DType::kFloat64, Shape{});
    auto fy = fb.cond(
        fp, [&] { return Tensors{fb.scalar(2.0) * fx * fx}; }, [&] { return Tensors{fx * fx * fx + fb.scalar(1.0)}; });
    auto c = testing::compare_gradients(fresh, fy[0].port, {{"p", Tensor::scalar_bool(pv)}, {"x", Tensor::scalar(1.1)}},
                                        {"x"});
    CHECK(c.max_relative_error <= 1e-6);
  }
}

TEST_CASE("zero upstream gives zero gradients in both branches") {
  for (bool pv : {true, false}) {
    GraphDef g;
    GraphBuilder b(g);
    auto p = b.placeholder("p", DType::kBool, Shape{});
    auto x = b.placeholder("x", DType::kFloat64, Shape{});
    auto c = b.cond(
        p, [&] { return Tensors{x * x}; }, [&] { return Tensors{x + b.scalar(3.0)}; });
    auto y = c[0] * b.scalar(0.0);
    auto grads = gradients(g, y.port, {x.port});
    auto out = run(g, {{"p", Tensor::scalar_bool(pv)}, {"x", Tensor::scalar(2.0)}}, grads);
    CHECK(scalar_of(out[0]) == 0.0);
  }
}

TEST_CASE("cond inside a loop pops its predicate per iteration") {
  GraphDef g;
  GraphBuilder b(g);
  auto x = b.placeholder("x", DType::kFloat64, Shape{});
  auto out = b.while_loop([&](const Tensors& v) { return b.less(v[0], b.scalar_int(4)); },
                          [&](const Tensors& v) {
                            auto odd = b.equal(v[0], b.scalar_int(1));
                            auto c = b.cond(
                                b.logical_not(odd), [&] { return Tensors{v[1] * x}; },
                                [&] { return Tensors{v[1] + x}; });
                            return Tensors{v[0] + b.scalar_int(1), c[0]};
                          },
                          {b.scalar_int(0), x});
  // a0 = x; a1 = x^2; a2 = x^2 + x; a3 = x^3 + x^2; a4 = x^4 + x^3.
  auto grads = gradients(g, out[1].port, {x.port});
  CHECK(validate(g).empty());
  auto v = run(g, {{"x", Tensor::scalar(2.0)}}, grads);
  CHECK(scalar_of(v[0]) == doctest::Approx(4 * 8 + 3 * 4));
  int bool_pushes = 0;
  for (const auto& n : g.nodes()) {
    if (n.op == OpType::kStackPush && g.node(n.inputs[0].node).op == OpType::kLogicalNot) ++bool_pushes;
  }
  CHECK(bool_pushes == 1);
}

TEST_CASE("nested loops match finite differences") {
  GraphDef g;
  GraphBuilder b(g);
  auto x = b.placeholder("x", DType::kFloat64, Shape{});
  auto w = b.placeholder("w", DType::kFloat64, Shape{});
  auto outer = b.while_loop(
      [&](const Tensors& v) { return b.less(v[0], b.scalar_int(2)); },
      [&](const Tensors& v) {
        auto inner = b.while_loop([&](const Tensors& u) { return b.less(u[0], b.scalar_int(3)); },
                                  [&](const Tensors& u) { return Tensors{u[0] + b.scalar_int(1), u[1] * w}; },
                                  {b.scalar_int(0), v[1]});
        return Tensors{v[0] + b.scalar_int(1), inner[1] * x};
      },
      {b.scalar_int(0), x});
  // y = x^3 w^6
  auto c = testing::compare_gradients(g, outer[1].port, {{"x", Tensor::scalar(1.2)}, {"w", Tensor::scalar(0.9)}},
                                      {"x", "w"});
  CHECK(c.max_relative_error <= 1e-6);
  CHECK(c.symbolic[0] == doctest::Approx(3 * 1.44 * std::pow(0.9, 6)).epsilon(1e-12));
  CHECK(c.symbolic[1] == doctest::Approx(6 * std::pow(1.2, 3) * std::pow(0.9, 5)).epsilon(1e-12));
}

TEST_CASE("TensorArray gradients") {
  SUBCASE("unstack then stack is the identity") {
    GraphDef g;
    GraphBuilder b(g);
    auto t = b.placeholder("t", DType::kFloat64, Shape{3, 2});
    auto ta = b.ta_unstack(b.tensor_array(DType::kFloat64), t);
    auto y = b.reduce_sum(b.ta_stack(ta));
    auto grads = gradients(g, y.port, {t.port});
    auto out = run(g, {{"t", Tensor::f64({3, 2}, {1, 2, 3, 4, 5, 6})}}, grads);
    CHECK(testing::as_tensor(out[0]) == Tensor::filled(DType::kFloat64, {3, 2}, 1.0));
  }
  SUBCASE("two reads of one cell sum their gradients") {
    GraphDef g;
    GraphBuilder b(g);
    auto v = b.placeholder("v", DType::kFloat64, Shape{});
    auto ta = b.ta_write(b.tensor_array(DType::kFloat64, b.scalar_int(2)), b.scalar_int(0), v);
    auto y = b.ta_read(ta, b.scalar_int(0)) + b.ta_read(ta, b.scalar_int(0));
    auto grads = gradients(g, y.port, {v.port});
    auto out = run(g, {{"v", Tensor::scalar(0.3)}}, grads);
    CHECK(scalar_of(out[0]) == 2.0);
    auto c = testing::compare_gradients(g, y.port, {{"v", Tensor::scalar(0.3)}}, {"v"});
    CHECK(c.max_relative_error <= 1e-6);
  }
  SUBCASE("unread cells get zero gradient") {
    GraphDef g;
    GraphBuilder b(g);
    auto t = b.placeholder("t", DType::kFloat64, Shape{2, 2});
    auto ta = b.ta_unstack(b.tensor_array(DType::kFloat64), t);
    auto y = b.reduce_sum(b.ta_read(ta, b.scalar_int(1)));
    auto grads = gradients(g, y.port, {t.port});
    auto out = run(g, {{"t", Tensor::f64({2, 2}, {1, 2, 3, 4})}}, grads);
    CHECK(testing::as_tensor(out[0]) == Tensor::f64({2, 2}, {0, 0, 1, 1}));
  }
}

TEST_CASE("second-order gradient through a loop") {
  GraphDef g;
  GraphBuilder b(g);
  auto x = b.placeholder("x", DType::kFloat64, Shape{});
  auto w = b.placeholder("w", DType::kFloat64, Shape{});
  auto out = b.while_loop([&](const Tensors& v) { return b.less(v[0], b.scalar_int(3)); },
                          [&](const Tensors& v) { return Tensors{v[0] + b.scalar_int(1), v[1] * w}; },
                          {b.scalar_int(0), x});
  const Port dw = gradients(g, out[1].port, {w.port})[0];
  const Port d2w = gradients(g, dw, {w.port})[0];
  CHECK(validate(g).empty());
  auto v = run(g, {{"x", Tensor::scalar(2.0)}, {"w", Tensor::scalar(3.0)}}, {dw, d2w});
  CHECK(scalar_of(v[0]) == doctest::Approx(54));
  CHECK(scalar_of(v[1]) == doctest::Approx(36));
}

TEST_CASE("second-order gradients build and validate for every family") {
  for (auto family : testing::kAllFamilies) {
    CAPTURE(testing::family_name(family));
    auto p = testing::gradient_program(family, 3);
    std::vector<Port> xs;
    for (const auto& name : p.wrt) xs.push_back(Port{name, 0});
    auto first = gradients(p.graph, p.y, xs);
    GraphBuilder b(p.graph);
    SymbolicTensor total = b.reduce_sum(b.tensor(first[0]));
    for (std::size_t i = 1; i < first.size(); ++i) total = total + b.reduce_sum(b.tensor(first[i]));
    gradients(p.graph, total.port, xs);
    CHECK(validate(p.graph).empty());
  }
}

TEST_CASE("construct families match finite differences") {
  for (auto family : testing::kAllFamilies) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      CAPTURE(testing::family_name(family));
      CAPTURE(seed);
      auto p = testing::gradient_program(family, seed);
      auto c = testing::compare_gradients(p.graph, p.y, p.feeds, p.wrt);
      CHECK(c.max_relative_error <= 1e-5);
    }
  }
}

TEST_CASE("random nested programs match finite differences") {
  int checked = 0;
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    CAPTURE(seed);
    auto program = testing::random_program(seed);
    auto built = testing::build_program(program);
    GraphBuilder b(built.graph);
    SymbolicTensor y = b.tensor(built.fetches[0]);
    for (std::size_t i = 1; i < program.roots.size(); ++i) y = y + b.tensor(built.fetches[i]);
    std::vector<std::string> wrt;
    for (const auto& [name, value] : built.feeds) wrt.push_back(name);
    auto c = testing::compare_gradients(built.graph, y.port, built.feeds, wrt);
    CHECK_MESSAGE(c.max_relative_error <= 1e-5, program.str());
    ++checked;
  }
  CHECK(checked == 60);
}

TEST_CASE("stacks are popped in LIFO order for every family") {
  for (auto family : testing::kAllFamilies) {
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
      CAPTURE(testing::family_name(family));
      CAPTURE(seed);
      auto p = testing::gradient_program(family, seed);
      std::vector<Port> xs;
      for (const auto& name : p.wrt) xs.push_back(Port{name, 0});
      auto grads = gradients(p.graph, p.y, xs);
      RunOptions opts;
      opts.parallel_limit = 1;
      RunResult r = run_with_stats(p.graph, p.feeds, grads, opts);
      for (const auto& [stack, history] : r.stats.stack_history) {
        CAPTURE(stack);
        std::vector<StackStore::Key> live;
        for (const auto& [action, key] : history) {
          if (action == StackAction::kPush) {
            live.push_back(key);
          } else {
            REQUIRE(!live.empty());
            CHECK(live.back() == key);
            live.pop_back();
          }
        }
        CHECK(live.empty());
      }
    }
  }
}

TEST_CASE("gradients are bit-identical across parallel limits and schedules") {
  // TensorArray gradient cells receive several writes in schedule order.
  for (auto family : testing::kAllFamilies) {
    for (std::uint64_t program_seed : {4, 11, 17}) {
      CAPTURE(testing::family_name(family));
      CAPTURE(program_seed);
      auto p = testing::gradient_program(family, program_seed);
      std::vector<Port> xs;
      for (const auto& name : p.wrt) xs.push_back(Port{name, 0});
      auto grads = gradients(p.graph, p.y, xs);
      RunOptions serial;
      serial.parallel_limit = 1;
      const auto expected = values_of(run(p.graph, p.feeds, grads, serial));
      for (std::uint64_t seed = 1; seed <= 6; ++seed) {
        RunOptions opts;
        opts.schedule_seed = seed;
        opts.parallel_limit = static_cast<int>(seed % 3 == 0 ? 2 : 32);
        CHECK(values_of(run(p.graph, p.feeds, grads, opts)) == expected);
      }
    }
  }
}

TEST_CASE("gradient errors and unreached inputs") {
  SUBCASE("non-scalar objective") {
    GraphDef g;
    GraphBuilder b(g);
    auto x = b.placeholder("x", DType::kFloat64, Shape{2});
    CHECK(testing::error_code_of([&] { gradients(g, (x * x).port, {x.port}); }) == ErrorCode::kNonScalarObjective);
  }
  SUBCASE("integer objective") {
    GraphDef g;
    GraphBuilder b(g);
    auto x = b.placeholder("x", DType::kFloat64, Shape{});
    auto y = b.size_of(x);
    CHECK(testing::error_code_of([&] { gradients(g, y.port, {x.port}); }) == ErrorCode::kNonScalarObjective);
  }
  SUBCASE("op without a registered gradient") {
    GraphDef g;
    GraphBuilder b(g);
    auto x = b.placeholder("x", DType::kFloat64, Shape{});
    auto y = x * x;
    GradientRegistry partial;
    partial.mark_non_differentiable(OpType::kPlaceholder);
    CHECK(testing::error_code_of([&] { gradients(g, y.port, {x.port}, partial); }) == ErrorCode::kNoGradient);
  }
  SUBCASE("unreached input gets zeros") {
    GraphDef g;
    GraphBuilder b(g);
    auto x = b.placeholder("x", DType::kFloat64, Shape{2, 3});
    auto z = b.placeholder("z", DType::kFloat64, Shape{});
    auto y = z * z;
    auto grads = gradients(g, y.port, {x.port, z.port});
    auto out = run(g, {{"x", Tensor::zeros(DType::kFloat64, {2, 3})}, {"z", Tensor::scalar(3.0)}}, grads);
    CHECK(testing::as_tensor(out[0]) == Tensor::zeros(DType::kFloat64, {2, 3}));
    CHECK(scalar_of(out[1]) == 6.0);
  }
  SUBCASE("paths only through non-differentiable ops give zeros") {
    GraphDef g;
    GraphBuilder b(g);
    auto x = b.placeholder("x", DType::kFloat64, Shape{});
    auto p = b.less(x, b.scalar(1.0));
    auto y = b.cond(
        p, [&] { return Tensors{b.scalar(2.0)}; }, [&] { return Tensors{b.scalar(3.0)}; });
    auto grads = gradients(g, y[0].port, {x.port});
    auto out = run(g, {{"x", Tensor::scalar(0.5)}}, grads);
    CHECK(scalar_of(out[0]) == 0.0);
  }
  SUBCASE("gradients are added, never rewriting existing nodes' inputs") {
    MatmulLoop m = matmul_loop(3);
    const GraphDef before = m.graph;
    gradients(m.graph, m.y, {m.x, m.w});
    for (const auto& n : before.nodes()) {
      CHECK(m.graph.node(n.id).inputs == n.inputs);
      CHECK(m.graph.node(n.id).op == n.op);
    }
  }
}

}  // namespace
}  // namespace loomflow
