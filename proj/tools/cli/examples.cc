// Copyright 2026 The Loomflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "loomflow/builder.h"
#include "tools/cli/cli.h"

namespace loomflow::cli {

namespace {

Tensor mat11(double v) { return Tensor::f64({1, 1}, {v}); }

Example counter() {
  Example e;
  GraphBuilder b(e.graph);
  auto limit = b.constant(Tensor::scalar_int(3), "limit");
  auto one = b.constant(Tensor::scalar_int(1), "one");
  Tensors out = b.while_loop([&](const Tensors& v) { return b.less(v[1], limit); },
                             [&](const Tensors& v) { return Tensors{b.add(v[0], one), b.add(v[1], one)}; },
                             {b.scalar_int(0), b.constant(Tensor::scalar_int(0), "i0")}, 32, "count");
  e.graph.outputs().push_back(b.identity(out[1], "i").port);
  e.description = "counts i from 0 to 3; fetch i";
  return e;
}

Example matmul_loop() {
  Example e;
  GraphBuilder b(e.graph);
  auto x = b.placeholder("x", DType::kFloat64, Shape{1, 1}, mat11(2));
  auto w = b.placeholder("w", DType::kFloat64, Shape{1, 1}, mat11(3));
  auto trips = b.constant(Tensor::scalar_int(3), "trips");
  Tensors out = b.while_loop([&](const Tensors& v) { return b.less(v[0], trips); },
                             [&](const Tensors& v) {
                               return Tensors{b.add(v[0], b.scalar_int(1)), b.matmul(v[1], w)};
                             },
                             {b.scalar_int(0), x}, 32, "loop");
  b.identity(out[1], "a");
  e.graph.outputs().push_back(b.op1(OpType::kReduceSumAll, {out[1]}, {}, "y").port);
  e.description = "y = x w^3 on 1x1 matrices with x=2, w=3; dy/dx = 27, dy/dw = 54";
  return e;
}

Example branch() {
  Example e;
  GraphBuilder b(e.graph);
  auto p = b.placeholder("p", DType::kBool, Shape{}, Tensor::scalar_bool(true));
  auto x = b.placeholder("x", DType::kFloat64, Shape{}, Tensor::scalar(1.5));
  Tensors out = b.cond(p, [&] { return Tensors{b.mul(x, x)}; }, [&] { return Tensors{b.add(x, b.scalar(1))}; });
  e.graph.outputs().push_back(b.identity(out[0], "y").port);
  e.description = "y = p ? x*x : x+1 with p=true, x=1.5";
  return e;
}

Example step() {
  Example e;
  GraphBuilder b(e.graph);
  auto x = b.placeholder("x", DType::kFloat64, Shape{}, Tensor::scalar(0.7));
  auto below = b.less(x, b.scalar(1));
  Tensors out = b.cond(below, [&] { return Tensors{b.scalar(2)}; }, [&] { return Tensors{b.scalar(5)}; });
  e.graph.outputs().push_back(b.identity(out[0], "y").port);
  e.description = "y = x < 1 ? 2 : 5; depends on x only through a comparison";
  return e;
}

Example pipeline(int devices) {
  PipelineOptions o;
  o.devices = devices;
  o.stages = devices;
  o.iterations = 10;
  o.per_op_delay = std::chrono::microseconds(0);
  PipelineProgram p = pipeline_program(o);
  Example e;
  e.graph = std::move(p.graph);
  e.graph.outputs().push_back(p.result);
  e.placement = std::move(p.placement);
  e.description = "chained pipeline loop, one stage per device, 10 iterations";
  return e;
}

// Nodes dealt to devices in turn; loops end up spread over every device.
Placement round_robin(const GraphDef& graph, int devices) {
  Placement p;
  for (int d = 0; d < devices; ++d) p.devices.push_back("dev" + std::to_string(d));
  std::size_t next = 0;
  for (const NodeDef& n : graph.nodes()) p.rules.emplace_back(n.id, p.devices[next++ % p.devices.size()]);
  return p;
}

}  // namespace

std::vector<std::string> example_names() { return {"counter", "matmul-loop", "cond", "step", "pipeline"}; }

Example make_example(const std::string& name, int devices) {
  if (devices < 1) throw Error(ErrorCode::kInvalidGraph, "need at least one device");
  Example e;
  if (name == "counter") {
    e = counter();
  } else if (name == "matmul-loop") {
    e = matmul_loop();
  } else if (name == "cond") {
    e = branch();
  } else if (name == "step") {
    e = step();
  } else if (name == "pipeline") {
    return pipeline(devices);
  } else {
    throw Error(ErrorCode::kInvalidGraph, "unknown example " + name);
  }
  e.placement = round_robin(e.graph, devices);
  return e;
}

}  // namespace loomflow::cli
