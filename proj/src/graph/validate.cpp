// Copyright 2026 The Loomflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "loomflow/validate.h"

#include <deque>

#include "loomflow/errors.h"
#include "loomflow/infer.h"

namespace loomflow {

std::string_view violation_kind_name(ViolationKind kind) {
  switch (kind) {
    case ViolationKind::kDanglingInput: return "dangling input";
    case ViolationKind::kArity: return "arity";
    case ViolationKind::kIllegalCycle: return "illegal cycle";
    case ViolationKind::kMissingFrameName: return "missing frame name";
    case ViolationKind::kContextNesting: return "context nesting";
    case ViolationKind::kFrameMismatch: return "frame mismatch";
    case ViolationKind::kDtype: return "dtype";
    case ViolationKind::kNoTrigger: return "no trigger";
    case ViolationKind::kBadContext: return "bad context";
  }
  return "?";
}

std::string Violation::str() const {
  return std::string(violation_kind_name(kind)) + " at " + node + ": " + message;
}

namespace {

bool valid_context(const GraphDef& g, int ctx) {
  return ctx >= 0 && ctx < static_cast<int>(g.contexts().size());
}

// Context in which a node reads its inputs.
int input_context(const GraphDef& g, const NodeDef& n) {
  if (n.op == OpType::kEnter) {
    const int parent = g.context(n.context).parent;
    return parent < 0 ? 0 : parent;
  }
  return n.context;
}

void check_contexts(const GraphDef& g, std::vector<Violation>& out) {
  for (const auto& c : g.contexts()) {
    if (c.id == 0) continue;
    if (c.parent < 0 || c.parent >= c.id) {
      out.push_back({ViolationKind::kBadContext, "context " + std::to_string(c.id), "parent must precede it"});
    }
    if (c.kind == ContextKind::kWhile && c.parallel_iterations < 1) {
      out.push_back({ViolationKind::kBadContext, "context " + std::to_string(c.id),
                     "parallel_iterations must be positive"});
    }
  }
}

void check_cycles(const GraphDef& g, std::vector<Violation>& out) {
  // Kahn's algorithm with NextIteration out-edges removed; whatever is left
  // sits on a cycle that no NextIteration breaks.
  const auto& nodes = g.nodes();
  std::vector<int> indegree(nodes.size(), 0);
  std::vector<std::vector<int>> succ(nodes.size());
  auto add_edge = [&](const std::string& src, int dst) {
    const int s = g.index_of(src);
    if (s < 0 || nodes[s].op == OpType::kNextIteration) return;
    succ[s].push_back(dst);
    ++indegree[dst];
  };
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    for (const auto& in : nodes[i].inputs) add_edge(in.node, static_cast<int>(i));
    for (const auto& c : nodes[i].control_inputs) add_edge(c, static_cast<int>(i));
  }
  std::deque<int> ready;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (indegree[i] == 0) ready.push_back(static_cast<int>(i));
  }
  std::size_t seen = 0;
  while (!ready.empty()) {
    const int n = ready.front();
    ready.pop_front();
    ++seen;
    for (int s : succ[n]) {
      if (--indegree[s] == 0) ready.push_back(s);
    }
  }
  if (seen == nodes.size()) return;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (indegree[i] > 0) {
      out.push_back({ViolationKind::kIllegalCycle, nodes[i].id, "cycle lacks NextIteration"});
      return;
    }
  }
}

}  // namespace

int output_frame(const GraphDef& graph, const Port& port) {
  return graph.frame_of(graph.output_context(port));
}

int input_frame(const GraphDef& graph, const NodeDef& node) {
  return graph.frame_of(input_context(graph, node));
}

std::vector<Violation> validate(const GraphDef& g) {
  std::vector<Violation> out;
  check_contexts(g, out);
  std::vector<bool> structurally_ok(g.size(), true);

  for (std::size_t i = 0; i < g.size(); ++i) {
    const NodeDef& n = g.nodes()[i];
    auto report = [&](ViolationKind kind, std::string msg) {
      out.push_back({kind, n.id, std::move(msg)});
      structurally_ok[i] = false;
    };
    if (!valid_context(g, n.context)) {
      report(ViolationKind::kBadContext, "unknown context " + std::to_string(n.context));
      continue;
    }
    bool inputs_ok = true;
    for (const Port& in : n.inputs) {
      const NodeDef* src = g.find(in.node);
      if (src == nullptr || in.index < 0 || in.index >= num_outputs(*src)) {
        report(ViolationKind::kDanglingInput, "reads missing " + in.str());
        inputs_ok = false;
      }
    }
    for (const auto& c : n.control_inputs) {
      if (!g.has_node(c)) {
        report(ViolationKind::kDanglingInput, "control input from missing " + c);
        inputs_ok = false;
      }
    }
    if (!inputs_ok) continue;

    const int arity = expected_arity(n);
    if (arity >= 0 && static_cast<int>(n.inputs.size()) != arity) {
      report(ViolationKind::kArity, std::string(op_name(n.op)) + " expects " + std::to_string(arity) +
                                        " data inputs, has " + std::to_string(n.inputs.size()));
    }
    if (n.op == OpType::kSend && n.inputs.size() > 1) report(ViolationKind::kArity, "Send takes at most one input");

    const ContextDef& ctx = g.context(n.context);
    if (n.op == OpType::kEnter || n.op == OpType::kExit) {
      if (ctx.kind != ContextKind::kWhile) {
        report(ViolationKind::kBadContext, std::string(op_name(n.op)) + " outside a while context");
        continue;
      }
    }
    if (n.op == OpType::kEnter) {
      const auto name = n.attr_string("frame_name");
      if (name.empty()) {
        report(ViolationKind::kMissingFrameName, "Enter without frame_name");
      } else if (name != ctx.frame_name) {
        report(ViolationKind::kMissingFrameName, "frame_name " + name + " differs from context " + ctx.frame_name);
      }
    }
    if (n.op == OpType::kPlaceholder && n.context != 0) {
      report(ViolationKind::kBadContext, "Placeholder outside the root context");
    }

    // Nesting: a value may flow outward-in freely, but inward-out only
    // through an Exit (loops) or a Merge (conds) in the same frame.
    const int in_ctx = input_context(g, n);
    const int in_frame = g.frame_of(in_ctx);
    for (const Port& in : n.inputs) {
      const int src_ctx = g.output_context(in);
      const bool merge_from_branch = n.op == OpType::kMerge && g.is_ancestor_context(n.context, src_ctx);
      if (!g.is_ancestor_context(src_ctx, in_ctx) && !merge_from_branch) {
        report(ViolationKind::kContextNesting, "input " + in.str() + " from context " + std::to_string(src_ctx) +
                                                   " is not visible in context " + std::to_string(in_ctx));
      } else if (output_frame(g, in) != in_frame) {
        report(ViolationKind::kFrameMismatch, "input " + in.str() + " arrives from another frame");
      }
    }
    for (const auto& c : n.control_inputs) {
      const int src_frame = output_frame(g, Port{c, 0});
      if (src_frame != in_frame) report(ViolationKind::kFrameMismatch, "control input " + c + " arrives from another frame");
    }

    if (n.inputs.empty() && n.control_inputs.empty() && n.context != 0) {
      const bool root_recv = n.op == OpType::kRecv && g.frame_of(n.context) == 0;
      if (!root_recv) report(ViolationKind::kNoTrigger, "input-less node inside a control-flow context");
    }
  }

  check_cycles(g, out);

  bool all_ok = true;
  for (bool ok : structurally_ok) all_ok = all_ok && ok;
  if (all_ok) {
    const GraphSpecs specs = infer_graph(g);
    for (const auto& [node, msg] : specs.errors) out.push_back({ViolationKind::kDtype, node, msg});
  }
  return out;
}

void check_valid(const GraphDef& graph) {
  auto violations = validate(graph);
  if (violations.empty()) return;
  std::string msg;
  for (const auto& v : violations) {
    if (!msg.empty()) msg += "; ";
    msg += v.str();
  }
  throw Error(ErrorCode::kInvalidGraph, msg, violations.front().node);
}

}  // namespace loomflow
