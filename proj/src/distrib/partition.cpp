// Copyright 2026 The Loomflow Authors
// SPDX-License-Identifier: Apache-2.0

// Partitioning runs in four steps on a copy of the graph:
//   1. resolve the placement and pull state-sharing nodes together;
//   2. add a control loop for every (device, loop) pair where the device
//      runs part of the loop but holds none of its variables;
//   3. cut every cross-device data or control edge into a Send/Recv pair;
//   4. gate each Recv inside a loop on its device's per-iteration Merge and
//      split the result into one graph per device.

#include <algorithm>
#include <deque>
#include <functional>
#include <set>

#include "loomflow/distrib.h"
#include "loomflow/errors.h"
#include "loomflow/infer.h"
#include "loomflow/validate.h"

namespace loomflow {

namespace {

using Assignment = std::map<std::string, std::string>;

bool is_loop_merge(const GraphDef& g, const NodeDef& n) {
  if (n.op != OpType::kMerge) return false;
  for (const Port& in : n.inputs) {
    if (g.node(in.node).op == OpType::kNextIteration) return true;
  }
  return false;
}

// Consumers of each node, by id.
std::map<std::string, std::vector<std::string>> consumers_of(const GraphDef& g) {
  std::map<std::string, std::vector<std::string>> out;
  for (const NodeDef& n : g.nodes()) {
    for (const Port& in : n.inputs) out[in.node].push_back(n.id);
  }
  return out;
}

// Enter, NextIteration, Switch and Exit of every loop variable follow the
// variable's Merge: the back edge and the frame bookkeeping of a variable
// cannot span devices.
void colocate_loop_variables(const GraphDef& g, Assignment& a) {
  const auto consumers = consumers_of(g);
  for (const NodeDef& m : g.nodes()) {
    if (!is_loop_merge(g, m)) continue;
    const std::string& device = a.at(m.id);
    for (const Port& in : m.inputs) a[in.node] = device;  // Enter and NextIteration
    auto it = consumers.find(m.id);
    if (it == consumers.end()) continue;
    for (const auto& sw_id : it->second) {
      const NodeDef& sw = g.node(sw_id);
      if (sw.op != OpType::kSwitch || sw.inputs[0].node != m.id) continue;
      a[sw.id] = device;
      auto exits = consumers.find(sw.id);
      if (exits == consumers.end()) continue;
      for (const auto& e : exits->second) {
        if (g.node(e).op == OpType::kExit) a[e] = device;
      }
    }
  }
}

// Every op on one stack runs where the stack's first push runs.
void colocate_stacks(const GraphDef& g, Assignment& a) {
  std::map<std::string, std::string> home;
  for (const NodeDef& n : g.nodes()) {
    if (n.op == OpType::kStackPush) home.emplace(n.attr_string("stack"), a.at(n.id));
  }
  for (const NodeDef& n : g.nodes()) {
    if (n.op != OpType::kStackPush && n.op != OpType::kStackPop) continue;
    if (auto it = home.find(n.attr_string("stack")); it != home.end()) a[n.id] = it->second;
  }
}

// TensorArray handles are only meaningful on the device that created them.
void colocate_tensor_arrays(const GraphDef& g, Assignment& a) {
  std::function<std::string(const std::string&, int)> origin = [&](const std::string& id, int depth) {
    const NodeDef& n = g.node(id);
    if (n.op == OpType::kTensorArrayNew || n.inputs.empty() || depth > static_cast<int>(g.size())) return id;
    return origin(n.inputs[0].node, depth + 1);
  };
  for (const NodeDef& n : g.nodes()) {
    if (!is_tensor_array_op(n.op) || n.op == OpType::kTensorArrayNew) continue;
    a[n.id] = a.at(origin(n.inputs[0].node, 0));
  }
}

// The loop's predicate port: recorded on the context by the builder, else
// found from a loop variable's Switch.
Port loop_predicate(const GraphDef& g, int loop) {
  const ContextDef& ctx = g.context(loop);
  if (!ctx.pred.node.empty()) return ctx.pred;
  for (const NodeDef& n : g.nodes()) {
    if (n.op == OpType::kSwitch && n.context == loop && is_loop_merge(g, g.node(n.inputs[0].node))) {
      return n.inputs[1];
    }
  }
  throw Error(ErrorCode::kInvalidGraph, "loop " + ctx.frame_name + " has no predicate");
}

// The Merge on `device` that fires once per iteration of `loop`: the
// counter's if it lives there, else the first loop Merge on the device.
std::optional<std::string> iteration_gate(const GraphDef& g, const Assignment& a, int loop,
                                          const std::string& device) {
  const ContextDef& ctx = g.context(loop);
  if (!ctx.loop_vars.empty()) {
    const std::string& counter = ctx.loop_vars[0].merge;
    if (g.has_node(counter) && a.at(counter) == device) return counter;
  }
  for (const NodeDef& n : g.nodes()) {
    if (n.context == loop && is_loop_merge(g, n) && a.at(n.id) == device) return n.id;
  }
  return std::nullopt;
}

std::string key_of(const Port& src, const std::string& dst) { return src.node + ":" + std::to_string(src.index) + ":" + dst; }
std::string control_key_of(const std::string& src, const std::string& dst) { return src + ":ctl:" + dst; }

// Context a node's control signal belongs to.
int control_context(const GraphDef& g, const std::string& id) {
  const NodeDef& n = g.node(id);
  if (n.op == OpType::kExit) return std::max(g.context(n.context).parent, 0);
  return n.context;
}

struct Cutter {
  GraphDef& g;
  Assignment& a;
  const GraphSpecs& specs;
  PartitionedGraph& out;
  std::map<std::string, std::string> recv_for_key;

  std::string cut(const std::string& key, const std::string& src_device, const std::string& dst_device, int context,
                  const std::vector<Port>& send_inputs, const std::vector<std::string>& send_controls, DType dtype,
                  const std::optional<Shape>& shape, const std::string& name) {
    if (auto it = recv_for_key.find(key); it != recv_for_key.end()) return it->second;
    NodeDef send;
    send.id = g.unique_id(name + "/send");
    send.op = OpType::kSend;
    send.attrs = {{"key", key}, {"recv_device", dst_device}};
    send.inputs = send_inputs;
    send.control_inputs = send_controls;
    send.context = context;
    a[send.id] = src_device;
    g.add_node(send);

    NodeDef recv;
    recv.id = g.unique_id(name + "/recv");
    recv.op = OpType::kRecv;
    recv.attrs = {{"key", key}, {"send_device", src_device}, {"dtype", dtype}};
    if (shape) recv.attrs["shape"] = std::vector<std::int64_t>(shape->begin(), shape->end());
    recv.context = context;
    a[recv.id] = dst_device;
    g.add_node(recv);
    out.key_destination[key] = dst_device;
    recv_for_key[key] = recv.id;
    return recv.id;
  }

  void run() {
    const std::size_t original = g.size();
    for (std::size_t i = 0; i < original; ++i) {
      const NodeDef node = g.nodes()[i];
      const std::string& dst_device = a.at(node.id);
      for (std::size_t s = 0; s < node.inputs.size(); ++s) {
        const Port& src = node.inputs[s];
        const std::string& src_device = a.at(src.node);
        if (src_device == dst_device) continue;
        const TensorSpec* spec = specs.find(src);
        const DType dtype = spec ? spec->dtype : DType::kFloat64;
        std::optional<Shape> shape = spec ? spec->shape : std::nullopt;
        const std::string recv = cut(key_of(src, node.id), src_device, dst_device, g.output_context(src), {src}, {},
                                     dtype, shape, src.node + "/to_" + node.id);
        g.update_input(node.id, static_cast<int>(s), Port{recv, 0});
      }
      std::vector<std::string> controls;
      for (const auto& c : node.control_inputs) {
        const std::string& src_device = a.at(c);
        if (src_device == dst_device) {
          controls.push_back(c);
          continue;
        }
        controls.push_back(cut(control_key_of(c, node.id), src_device, dst_device, control_context(g, c), {}, {c},
                               DType::kFloat64, Shape{}, c + "/ctl_to_" + node.id));
      }
      g.mutable_node(node.id).control_inputs = controls;
    }
  }
};

// Nodes of `device` in an order where every input precedes its consumer,
// except NextIteration inputs of loop Merges.
std::vector<int> device_order(const GraphDef& g, const Assignment& a, const std::string& device) {
  std::vector<int> indegree(g.size(), 0);
  std::vector<std::vector<int>> succ(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const NodeDef& n = g.nodes()[i];
    auto edge = [&](const std::string& src) {
      const int s = g.index_of(src);
      if (g.nodes()[s].op == OpType::kNextIteration) return;
      succ[s].push_back(static_cast<int>(i));
      ++indegree[i];
    };
    for (const Port& in : n.inputs) edge(in.node);
    for (const auto& c : n.control_inputs) edge(c);
  }
  std::deque<int> ready;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (indegree[i] == 0) ready.push_back(static_cast<int>(i));
  }
  std::vector<int> order;
  while (!ready.empty()) {
    const int n = ready.front();
    ready.pop_front();
    if (a.at(g.nodes()[n].id) == device) order.push_back(n);
    for (int s : succ[n]) {
      if (--indegree[s] == 0) ready.push_back(s);
    }
  }
  return order;
}

GraphDef extract(const GraphDef& g, const Assignment& a, const std::string& device) {
  GraphDef sub;
  for (std::size_t c = 1; c < g.contexts().size(); ++c) sub.add_context(g.contexts()[c]);
  for (const auto& group : g.cond_groups()) sub.add_cond_group(group);
  std::vector<std::pair<std::string, std::pair<int, Port>>> back_edges;
  for (int i : device_order(g, a, device)) {
    NodeDef n = g.nodes()[i];
    n.device = device;
    for (std::size_t s = 0; s < n.inputs.size(); ++s) {
      if (sub.has_node(n.inputs[s].node)) continue;
      // A back edge; point it at the Merge's entry until the NextIteration exists.
      back_edges.push_back({n.id, {static_cast<int>(s), n.inputs[s]}});
      n.inputs[s] = n.inputs[s == 0 ? 1 : 0];
    }
    sub.add_node(std::move(n));
  }
  for (const auto& [id, edge] : back_edges) sub.update_input(id, edge.first, edge.second);
  for (const Port& out : g.outputs()) {
    if (sub.has_node(out.node)) sub.outputs().push_back(out);
  }
  return sub;
}

}  // namespace

std::string add_control_loop(GraphDef& graph, int loop, const std::string& device, Assignment& assignment) {
  const ContextDef ctx = graph.context(loop);
  if (ctx.kind != ContextKind::kWhile) throw Error(ErrorCode::kInvalidGraph, "control loop for a non-loop context");
  const Port pred = loop_predicate(graph, loop);
  const int outer = graph.frame_of(ctx.parent);
  const std::string prefix = ctx.frame_name + "/control_" + device + "/";

  auto add = [&](NodeDef n) {
    assignment[n.id] = device;
    return graph.add_node(std::move(n));
  };

  NodeDef start;
  start.id = graph.unique_id(prefix + "start");
  start.op = OpType::kConst;
  start.attrs = {{"value", Tensor::scalar_bool(true)}};
  start.context = outer;
  if (outer != 0) {
    auto gate = iteration_gate(graph, assignment, outer, device);
    if (!gate) throw Error(ErrorCode::kInternal, "no iteration gate on " + device + " for the enclosing loop");
    start.control_inputs.push_back(*gate);
  }
  const std::string start_id = add(start);

  NodeDef enter;
  enter.id = graph.unique_id(prefix + "enter");
  enter.op = OpType::kEnter;
  enter.attrs = {{"frame_name", ctx.frame_name},
                 {"is_constant", false},
                 {"parallel_iterations", std::int64_t{ctx.parallel_iterations}}};
  enter.inputs = {Port{start_id, 0}};
  enter.context = loop;
  const std::string enter_id = add(enter);

  NodeDef merge;
  merge.id = graph.unique_id(prefix + "merge");
  merge.op = OpType::kMerge;
  merge.inputs = {Port{enter_id, 0}, Port{enter_id, 0}};
  merge.context = loop;
  const std::string merge_id = add(merge);

  NodeDef sw;
  sw.id = graph.unique_id(prefix + "switch");
  sw.op = OpType::kSwitch;
  sw.inputs = {Port{merge_id, 0}, pred};
  sw.context = loop;
  const std::string switch_id = add(sw);

  NodeDef next;
  next.id = graph.unique_id(prefix + "next_iteration");
  next.op = OpType::kNextIteration;
  next.inputs = {Port{switch_id, 1}};
  next.context = loop;
  const std::string next_id = add(next);
  graph.update_input(merge_id, 1, Port{next_id, 0});
  return merge_id;
}

PartitionedGraph partition(const GraphDef& graph, const Placement& placement) {
  check_valid(graph);
  PartitionedGraph out;
  out.devices = placement.devices;
  Assignment a = placement.resolve(graph);
  colocate_tensor_arrays(graph, a);
  colocate_stacks(graph, a);
  colocate_loop_variables(graph, a);

  GraphDef g = graph;
  // Loops are visited outer first (a context's parent precedes it), so the
  // enclosing loop's gate exists when a nested control loop needs it.
  std::map<int, std::set<std::string>> participants;
  for (const NodeDef& n : graph.nodes()) {
    for (int w : graph.enclosing_whiles(n.context)) participants[w].insert(a.at(n.id));
  }
  for (const auto& [loop, devices] : participants) {
    for (const auto& device : devices) {
      if (iteration_gate(g, a, loop, device)) continue;
      add_control_loop(g, loop, device, a);
      out.control_loops.emplace_back(device, loop);
    }
  }

  const GraphSpecs specs = infer_graph(g);
  Cutter cutter{g, a, specs, out, {}};
  cutter.run();

  for (const NodeDef& n : std::vector<NodeDef>(g.nodes())) {
    if (n.op != OpType::kRecv) continue;
    const int frame = g.frame_of(n.context);
    if (frame == 0) continue;
    auto gate = iteration_gate(g, a, frame, a.at(n.id));
    if (!gate) throw Error(ErrorCode::kInternal, "no iteration gate for " + n.id, n.id);
    g.add_control_input(n.id, *gate);
  }

  for (const auto& device : out.devices) {
    GraphDef sub = extract(g, a, device);
    check_valid(sub);
    out.subgraphs.emplace(device, std::move(sub));
  }
  out.assignment = std::move(a);
  return out;
}

}  // namespace loomflow
