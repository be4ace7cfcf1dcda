// Copyright 2026 The Loomflow Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <deque>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "loomflow/autodiff.h"
#include "loomflow/errors.h"

namespace loomflow {

namespace {

bool is_float(const TensorSpec& s) { return s.dtype == DType::kFloat64; }

// Running sums Grads[t], keyed by forward port.
class GradAccumulator {
 public:
  void add(const Port& port, const SymbolicTensor& grad) { parts_[port].push_back(grad); }

  std::optional<SymbolicTensor> sum(GraphBuilder& b, const Port& port) {
    auto it = parts_.find(port);
    if (it == parts_.end() || it->second.empty()) return std::nullopt;
    auto& parts = it->second;
    if (parts.size() > 1) {
      SymbolicTensor total = parts[0];
      for (std::size_t i = 1; i < parts.size(); ++i) total = b.add(total, parts[i]);
      parts.assign(1, total);
    }
    return parts[0];
  }

 private:
  std::map<Port, std::vector<SymbolicTensor>> parts_;
};

// A node or a whole construct, as seen from the context that contains it.
struct Unit {
  enum class Kind { kNode, kCond, kWhile };
  Kind kind = Kind::kNode;
  int id = 0;  // node index, cond group id or while context id

  auto operator<=>(const Unit&) const = default;
};

class GradientBuilder {
 public:
  GradientBuilder(GraphDef& graph, const GradientRegistry& registry)
      : g_(graph), b_(graph), registry_(registry), forward_count_(static_cast<int>(graph.size())) {}

  std::vector<Port> run(const Port& y, const std::vector<Port>& xs);

 private:
  // Forward values as seen from the current gradient context.
  SymbolicTensor forward(Port port);
  SymbolicTensor forward_shape(Port port);
  SymbolicTensor zeros_like_forward(const Port& port);
  SymbolicTensor visible(const Port& port, int here);
  SymbolicTensor saved(const Port& port, int src, int here);
  int common_ancestor(int a, int b) const;
  static Port skip_constant_enters(const GraphDef& g, Port port);

  void compute_reachable(const std::vector<Port>& xs);
  bool reachable(const Port& port) const;
  std::optional<Unit> unit_in(int node, int region) const;
  std::vector<Unit> units_in_order(int region) const;
  bool has_seeded_push(int ctx) const;

  void process_region(int region);
  void process_node(int index);
  void grad_pop(const NodeDef& pop, const SymbolicTensor& grad);
  void grad_cond(int group_id);
  void grad_while(int ctx_id);

  GraphDef& g_;
  GraphBuilder b_;
  const GradientRegistry& registry_;
  const int forward_count_;
  std::string source_;
  GradAccumulator grads_;
  std::vector<bool> from_x_;
  std::unordered_set<std::string> loop_structure_;
  std::unordered_map<std::string, std::vector<int>> pops_by_stack_;

  std::map<int, int> mirror_;                 // forward context -> gradient context
  std::map<int, SymbolicTensor> fwd_index_;   // forward loop -> its iteration index, in its gradient loop
  std::map<std::pair<Port, int>, Port> saved_;
  std::map<std::pair<Port, int>, Port> lifted_;
  std::map<Port, Port> shapes_;
  std::map<std::string, std::string> grad_stacks_;  // forward stack -> stack of its gradients
  int next_stack_ = 0;
};

Port GradientBuilder::skip_constant_enters(const GraphDef& g, Port port) {
  for (;;) {
    const NodeDef& n = g.node(port.node);
    if (n.op != OpType::kEnter || !n.attr_bool("is_constant")) return port;
    port = n.inputs[0];
  }
}

int GradientBuilder::common_ancestor(int a, int b) const {
  std::set<int> up;
  for (int c = a; c >= 0; c = g_.context(c).parent) up.insert(c);
  for (int c = b; c >= 0; c = g_.context(c).parent) {
    if (up.count(c)) return c;
  }
  return 0;
}

SymbolicTensor GradientBuilder::forward(Port port) {
  port = skip_constant_enters(g_, port);
  const int src = g_.output_context(port);
  const int here = b_.current_context();
  if (g_.frame_of(src) == 0) return visible(port, here);
  return saved(port, src, here);
}

SymbolicTensor GradientBuilder::visible(const Port& port, int here) {
  const int src = g_.output_context(port);
  if (g_.is_ancestor_context(src, here)) return b_.import(b_.tensor(port), here);
  // A value from a branch used in the gradient of that branch: route it out
  // through a merge in the nearest shared context, then import it.
  const int shared = common_ancestor(src, here);
  if (g_.frame_of(shared) != g_.frame_of(src)) {
    throw Error(ErrorCode::kInternal, port.str() + " is not reachable from gradient context " + std::to_string(here),
                port.node);
  }
  const auto key = std::make_pair(port, shared);
  auto it = lifted_.find(key);
  if (it == lifted_.end()) {
    std::string id;
    b_.with_context(shared, [&] { id = b_.add_node(OpType::kMerge, {port, port}, {}, "lift"); });
    it = lifted_.emplace(key, Port{id, 0}).first;
  }
  return b_.import(b_.tensor(it->second), here);
}

SymbolicTensor GradientBuilder::saved(const Port& port, int src, int here) {
  const std::vector<int> loops = g_.enclosing_whiles(src);
  for (int w : loops) {
    if (!fwd_index_.count(w)) {
      throw Error(ErrorCode::kInternal,
                  port.str() + " is inside loop " + g_.context(w).frame_name + " but is needed outside its gradient",
                  port.node);
    }
  }
  // Pop where the forward value is known to exist: the gradient of its own
  // context when that is active, else the current context.
  int at = here;
  if (auto m = mirror_.find(src); m != mirror_.end() && g_.is_ancestor_context(m->second, here)) at = m->second;
  const auto key = std::make_pair(port, at);
  auto it = saved_.find(key);
  if (it == saved_.end()) {
    const std::string stack = "stack_" + std::to_string(next_stack_++) + "_" + source_;
    const TensorSpec spec = b_.spec(port);
    b_.with_context(src, [&] {
      Tensors in{b_.tensor(port)};
      for (int w : loops) in.push_back(b_.tensor(Port{g_.context(w).loop_vars[0].identity, 0}));
      b_.op(OpType::kStackPush, in, {{"stack", stack}}, "stack_push");
    });
    SymbolicTensor popped;
    b_.with_context(at, [&] {
      Tensors idx;
      for (int w : loops) idx.push_back(fwd_index_.at(w));
      AttrMap attrs{{"stack", stack}, {"dtype", spec.dtype}};
      if (spec.shape) attrs["shape"] = *spec.shape;
      popped = b_.op1(OpType::kStackPop, idx, std::move(attrs), "stack_pop");
    });
    it = saved_.emplace(key, popped.port).first;
  }
  return b_.import(b_.tensor(it->second), here);
}

SymbolicTensor GradientBuilder::forward_shape(Port port) {
  port = skip_constant_enters(g_, port);
  const TensorSpec spec = b_.spec(port);
  if (spec.shape && spec.fully_known()) {
    const Shape& s = *spec.shape;
    return b_.constant(Tensor::i64({static_cast<std::int64_t>(s.size())}, s));
  }
  // Save the shape rather than the tensor.
  auto it = shapes_.find(port);
  if (it == shapes_.end()) {
    SymbolicTensor shape;
    b_.with_context(g_.output_context(port), [&] { shape = b_.shape_of(b_.tensor(port)); });
    it = shapes_.emplace(port, shape.port).first;
  }
  return forward(it->second);
}

SymbolicTensor GradientBuilder::zeros_like_forward(const Port& port) {
  return b_.fill(forward_shape(port), b_.scalar(0.0));
}

void GradientBuilder::compute_reachable(const std::vector<Port>& xs) {
  std::vector<std::vector<int>> consumers(forward_count_);
  for (int i = 0; i < forward_count_; ++i) {
    const NodeDef& n = g_.nodes()[i];
    for (const Port& in : n.inputs) consumers[g_.index_of(in.node)].push_back(i);
    if (n.op == OpType::kStackPop) pops_by_stack_[n.attr_string("stack")].push_back(i);
  }
  // A popped value depends on what was pushed.
  for (int i = 0; i < forward_count_; ++i) {
    const NodeDef& n = g_.nodes()[i];
    if (n.op != OpType::kStackPush) continue;
    auto it = pops_by_stack_.find(n.attr_string("stack"));
    if (it == pops_by_stack_.end()) continue;
    for (int p : it->second) consumers[i].push_back(p);
  }
  from_x_.assign(forward_count_, false);
  std::deque<int> queue;
  for (const Port& x : xs) {
    const int i = g_.index_of(x.node);
    if (!from_x_[i]) {
      from_x_[i] = true;
      queue.push_back(i);
    }
  }
  while (!queue.empty()) {
    const int i = queue.front();
    queue.pop_front();
    for (int c : consumers[i]) {
      if (!from_x_[c]) {
        from_x_[c] = true;
        queue.push_back(c);
      }
    }
  }
  for (const auto& c : g_.contexts()) {
    if (c.kind != ContextKind::kWhile) continue;
    for (const auto& v : c.loop_vars) {
      for (const auto* id : {&v.enter, &v.merge, &v.switch_node, &v.exit, &v.identity, &v.next_iteration}) {
        loop_structure_.insert(*id);
      }
    }
    for (const auto& e : c.constant_enters) loop_structure_.insert(e);
  }
}

bool GradientBuilder::reachable(const Port& port) const {
  const int i = g_.index_of(port.node);
  return i >= 0 && i < forward_count_ && from_x_[i];
}

std::optional<Unit> GradientBuilder::unit_in(int index, int region) const {
  const NodeDef& n = g_.nodes()[index];
  // The region's own loop plumbing is handled by grad_while.
  if (loop_structure_.count(n.id) && n.context == region) return std::nullopt;
  int c = n.context;
  if ((n.op == OpType::kSwitch || n.op == OpType::kMerge) && n.has_attr("cond")) {
    const int gid = static_cast<int>(n.attr_int("cond"));
    const int parent = g_.cond_group(gid).parent;
    if (parent == region) return Unit{Unit::Kind::kCond, gid};
    c = parent;
  } else if (c == region) {
    return Unit{Unit::Kind::kNode, index};
  }
  while (c > 0 && c != region) {
    const ContextDef& ctx = g_.context(c);
    if (ctx.parent == region) {
      if (ctx.kind == ContextKind::kWhile) return Unit{Unit::Kind::kWhile, c};
      return Unit{Unit::Kind::kCond, ctx.cond_group};
    }
    c = ctx.parent;
  }
  return std::nullopt;
}

std::vector<Unit> GradientBuilder::units_in_order(int region) const {
  std::vector<std::optional<Unit>> owner(forward_count_);
  std::map<Unit, int> ids;
  std::vector<Unit> units;
  for (int i = 0; i < forward_count_; ++i) {
    owner[i] = unit_in(i, region);
    if (owner[i] && !ids.count(*owner[i])) {
      ids.emplace(*owner[i], static_cast<int>(units.size()));
      units.push_back(*owner[i]);
    }
  }
  std::vector<std::set<int>> succ(units.size());
  std::vector<int> indegree(units.size(), 0);
  auto link = [&](int from_node, int to_node) {
    if (from_node < 0 || from_node >= forward_count_) return;
    const auto& a = owner[from_node];
    const auto& b = owner[to_node];
    if (!a || !b || *a == *b) return;
    if (succ[ids.at(*a)].insert(ids.at(*b)).second) ++indegree[ids.at(*b)];
  };
  for (int i = 0; i < forward_count_; ++i) {
    if (!owner[i]) continue;
    const NodeDef& n = g_.nodes()[i];
    for (const Port& in : n.inputs) link(g_.index_of(in.node), i);
    for (const auto& c : n.control_inputs) link(g_.index_of(c), i);
    if (n.op == OpType::kStackPop) {
      for (int j = 0; j < forward_count_; ++j) {
        const NodeDef& p = g_.nodes()[j];
        if (p.op == OpType::kStackPush && p.attr_string("stack") == n.attr_string("stack")) link(j, i);
      }
    }
  }
  std::vector<Unit> order;
  std::deque<int> ready;
  for (std::size_t u = 0; u < units.size(); ++u) {
    if (indegree[u] == 0) ready.push_back(static_cast<int>(u));
  }
  while (!ready.empty()) {
    const int u = ready.front();
    ready.pop_front();
    order.push_back(units[u]);
    for (int s : succ[u]) {
      if (--indegree[s] == 0) ready.push_back(s);
    }
  }
  if (order.size() != units.size()) {
    throw Error(ErrorCode::kInvalidGraph, "cycle between constructs of context " + std::to_string(region));
  }
  return order;
}

bool GradientBuilder::has_seeded_push(int ctx) const {
  if (grad_stacks_.empty()) return false;
  for (int i = 0; i < forward_count_; ++i) {
    const NodeDef& n = g_.nodes()[i];
    if (n.op == OpType::kStackPush && from_x_[i] && grad_stacks_.count(n.attr_string("stack")) &&
        g_.is_ancestor_context(ctx, n.context)) {
      return true;
    }
  }
  return false;
}

void GradientBuilder::process_region(int region) {
  // Pushes whose popped values received gradients: those gradients come
  // back through a stack of their own, keyed like the forward push.
  for (int i = 0; i < forward_count_; ++i) {
    const NodeDef n = g_.nodes()[i];
    if (n.op != OpType::kStackPush || n.context != region || !from_x_[i]) continue;
    auto gs = grad_stacks_.find(n.attr_string("stack"));
    if (gs == grad_stacks_.end()) continue;
    Tensors idx;
    for (int w : g_.enclosing_whiles(region)) idx.push_back(fwd_index_.at(w));
    const TensorSpec spec = b_.spec(n.inputs[0]);
    AttrMap attrs{{"stack", gs->second}, {"dtype", spec.dtype}};
    if (spec.shape) attrs["shape"] = *spec.shape;
    grads_.add(Port{n.id, 0}, b_.op1(OpType::kStackPop, idx, std::move(attrs), "stack_pop_grad"));
  }

  const std::vector<Unit> order = units_in_order(region);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    switch (it->kind) {
      case Unit::Kind::kNode: process_node(it->id); break;
      case Unit::Kind::kCond: grad_cond(it->id); break;
      case Unit::Kind::kWhile: grad_while(it->id); break;
    }
  }
}

void GradientBuilder::process_node(int index) {
  const NodeDef n = g_.nodes()[index];
  if (!from_x_[index] || loop_structure_.count(n.id)) return;
  const int outs = num_outputs(n);
  OptionalTensors upstream(outs);
  bool any = false;
  for (int k = 0; k < outs; ++k) {
    upstream[k] = grads_.sum(b_, Port{n.id, k});
    any = any || upstream[k].has_value();
  }
  if (!any) return;
  if (n.op == OpType::kStackPop) {
    grad_pop(n, *upstream[0]);
    return;
  }
  if (registry_.is_non_differentiable(n.op)) return;
  const GradFn* fn = registry_.find(n.op);
  if (fn == nullptr) {
    throw Error(ErrorCode::kNoGradient, "no gradient registered for " + std::string(op_name(n.op)) + " (" + n.id + ")",
                n.id);
  }
  GradOpContext ctx{b_, n, upstream, source_, {}, {}, {}, {}, {}};
  ctx.input = [&](int i) { return forward(n.inputs.at(i)); };
  ctx.output = [&](int i) { return forward(Port{n.id, i}); };
  ctx.input_shape = [&](int i) { return forward_shape(n.inputs.at(i)); };
  ctx.input_spec = [&](int i) -> const TensorSpec& { return b_.spec(n.inputs.at(i)); };
  ctx.output_spec = [&](int i) -> const TensorSpec& { return b_.spec(Port{n.id, i}); };
  const OptionalTensors result = (*fn)(ctx);
  for (std::size_t i = 0; i < n.inputs.size() && i < result.size(); ++i) {
    if (!result[i] || !reachable(n.inputs[i]) || !is_float(b_.spec(n.inputs[i]))) continue;
    grads_.add(n.inputs[i], *result[i]);
  }
}

void GradientBuilder::grad_pop(const NodeDef& pop, const SymbolicTensor& grad) {
  const std::string stack = pop.attr_string("stack");
  auto it = grad_stacks_.find(stack);
  if (it == grad_stacks_.end()) it = grad_stacks_.emplace(stack, stack + "_grad_" + source_).first;
  Tensors in{grad};
  for (const Port& idx : pop.inputs) in.push_back(forward(idx));
  b_.op(OpType::kStackPush, in, {{"stack", it->second}}, "stack_push_grad");
}

void GradientBuilder::grad_cond(int group_id) {
  const CondGroupDef group = g_.cond_group(group_id);
  std::vector<Port> externals;
  for (const auto& s : group.switches) {
    const Port e = g_.node(s).inputs[0];
    if (reachable(e) && is_float(b_.spec(e)) && std::find(externals.begin(), externals.end(), e) == externals.end()) {
      externals.push_back(e);
    }
  }
  if (externals.empty()) return;
  OptionalTensors upstream;
  bool any = false;
  for (const auto& m : group.merges) {
    upstream.push_back(grads_.sum(b_, Port{m, 0}));
    any = any || upstream.back().has_value();
  }
  if (!any && !has_seeded_push(group.true_context) && !has_seeded_push(group.false_context)) return;

  auto branch = [&](bool taken) {
    const int fctx = taken ? group.true_context : group.false_context;
    mirror_[fctx] = b_.current_context();
    for (std::size_t i = 0; i < group.merges.size(); ++i) {
      if (!upstream[i]) continue;
      grads_.add(g_.node(group.merges[i]).inputs[taken ? 0 : 1], *upstream[i]);
    }
    process_region(fctx);
    Tensors out;
    for (const Port& e : externals) {
      std::optional<SymbolicTensor> grad;
      for (const auto& s : group.switches) {
        const NodeDef& sw = g_.node(s);
        if (sw.inputs[0] == e && sw.attr_bool("branch") == taken) grad = grads_.sum(b_, Port{s, taken ? 1 : 0});
      }
      out.push_back(grad ? *grad : zeros_like_forward(e));
    }
    mirror_.erase(fctx);
    return out;
  };
  const SymbolicTensor pred = forward(group.pred);
  const Tensors result = b_.cond(pred, [&] { return branch(true); }, [&] { return branch(false); });
  for (std::size_t k = 0; k < externals.size(); ++k) grads_.add(externals[k], result[k]);
}

void GradientBuilder::grad_while(int ctx_id) {
  const ContextDef loop = g_.context(ctx_id);
  std::vector<std::size_t> vars;
  for (std::size_t j = 1; j < loop.loop_vars.size(); ++j) {
    const Port exit{loop.loop_vars[j].exit, 0};
    if (is_float(b_.spec(exit)) && from_x_[g_.index_of(loop.loop_vars[j].merge)]) vars.push_back(j);
  }
  std::vector<std::string> constants;
  for (const auto& e : loop.constant_enters) {
    const Port in = g_.node(e).inputs[0];
    if (is_float(b_.spec(in)) && reachable(in)) constants.push_back(e);
  }
  if (vars.empty() && constants.empty()) return;
  OptionalTensors upstream;
  bool any = false;
  for (std::size_t j : vars) {
    upstream.push_back(grads_.sum(b_, Port{loop.loop_vars[j].exit, 0}));
    any = any || upstream.back().has_value();
  }
  if (!any && !has_seeded_push(ctx_id)) return;

  // Loop variables: [remaining iterations, one gradient per float loop
  // variable, one accumulator per float loop constant].
  Tensors inits{forward(Port{loop.loop_vars[0].exit, 0})};
  for (std::size_t k = 0; k < vars.size(); ++k) {
    inits.push_back(upstream[k] ? *upstream[k] : zeros_like_forward(Port{loop.loop_vars[vars[k]].exit, 0}));
  }
  for (const auto& e : constants) inits.push_back(zeros_like_forward(g_.node(e).inputs[0]));

  auto pred = [&](const Tensors& v) { return b_.less(b_.scalar_int(0), v[0]); };
  auto body = [&](const Tensors& v) {
    const SymbolicTensor index = b_.sub(v[0], b_.scalar_int(1));
    mirror_[ctx_id] = b_.current_context();
    fwd_index_[ctx_id] = index;
    for (std::size_t k = 0; k < vars.size(); ++k) {
      grads_.add(g_.node(loop.loop_vars[vars[k]].next_iteration).inputs[0], v[1 + k]);
    }
    process_region(ctx_id);
    Tensors next{index};
    for (std::size_t k = 0; k < vars.size(); ++k) {
      const LoopVarDef& lv = loop.loop_vars[vars[k]];
      std::optional<SymbolicTensor> grad = grads_.sum(b_, Port{lv.identity, 0});
      if (auto at_merge = grads_.sum(b_, Port{lv.merge, 0})) grad = grad ? b_.add(*grad, *at_merge) : *at_merge;
      next.push_back(grad ? *grad : b_.zeros_like(v[1 + k]));
    }
    for (std::size_t k = 0; k < constants.size(); ++k) {
      const SymbolicTensor& acc = v[1 + vars.size() + k];
      auto grad = grads_.sum(b_, Port{constants[k], 0});
      next.push_back(grad ? b_.add(acc, *grad) : acc);
    }
    mirror_.erase(ctx_id);
    fwd_index_.erase(ctx_id);
    return next;
  };
  const Tensors out = b_.while_loop(pred, body, inits, loop.parallel_iterations, loop.frame_name + "_grad");
  for (std::size_t k = 0; k < vars.size(); ++k) {
    grads_.add(g_.node(loop.loop_vars[vars[k]].enter).inputs[0], out[1 + k]);
  }
  for (std::size_t k = 0; k < constants.size(); ++k) {
    grads_.add(g_.node(constants[k]).inputs[0], out[1 + vars.size() + k]);
  }
}

std::string next_source(const GraphDef& g) {
  std::set<std::string> used;
  for (const auto& n : g.nodes()) {
    if (n.op == OpType::kTensorArrayGrad) used.insert(n.attr_string("source"));
    if (n.op == OpType::kStackPush || n.op == OpType::kStackPop) used.insert(n.attr_string("stack"));
  }
  for (int i = 1;; ++i) {
    const std::string s = "g" + std::to_string(i);
    const bool taken = std::any_of(used.begin(), used.end(), [&](const std::string& u) {
      return u == s || (u.size() > s.size() && u.compare(u.size() - s.size() - 1, std::string::npos, "_" + s) == 0);
    });
    if (!taken) return s;
  }
}

std::vector<Port> GradientBuilder::run(const Port& y, const std::vector<Port>& xs) {
  const TensorSpec y_spec = b_.spec(y);
  if (!is_float(y_spec) || !y_spec.is_scalar()) {
    throw Error(ErrorCode::kNonScalarObjective, "objective " + y.str() + " is " + y_spec.str() +
                                                    ", expected a float64 scalar", y.node);
  }
  if (g_.output_context(y) != 0) throw Error(ErrorCode::kInvalidGraph, "objective must be in the root context", y.node);
  for (const Port& x : xs) {
    const TensorSpec s = b_.spec(x);
    if (!is_float(s)) throw Error(ErrorCode::kDtypeMismatch, "cannot differentiate with respect to " + s.str(), x.node);
    if (g_.output_context(x) != 0) {
      throw Error(ErrorCode::kInvalidGraph, x.str() + " is not in the root context", x.node);
    }
  }
  source_ = next_source(g_);
  compute_reachable(xs);
  mirror_[0] = 0;
  if (reachable(y)) {
    grads_.add(y, b_.ones_like(b_.tensor(y)));
    process_region(0);
  }
  std::vector<Port> out;
  for (const Port& x : xs) {
    auto grad = grads_.sum(b_, x);
    const SymbolicTensor t = grad ? *grad : zeros_like_forward(x);
    out.push_back(b_.identity(t, "d_" + x.node).port);
  }
  return out;
}

}  // namespace

std::vector<Port> gradients(GraphDef& graph, const Port& y, const std::vector<Port>& xs,
                            const GradientRegistry& registry) {
  return GradientBuilder(graph, registry).run(y, xs);
}

}  // namespace loomflow
