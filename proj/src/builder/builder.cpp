// Copyright 2026 The Loomflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "loomflow/builder.h"

#include "loomflow/errors.h"

namespace loomflow {

namespace {

// Restores the builder's current context on scope exit, including when a
// user callback throws.
class ContextGuard {
 public:
  ContextGuard(int& slot, int value) : slot_(slot), saved_(slot) { slot_ = value; }
  ~ContextGuard() { slot_ = saved_; }
  ContextGuard(const ContextGuard&) = delete;
  ContextGuard& operator=(const ContextGuard&) = delete;

 private:
  int& slot_;
  int saved_;
};

std::string lower_op_name(OpType op) {
  std::string s(op_name(op));
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

bool shapes_conflict(const std::optional<Shape>& a, const std::optional<Shape>& b) {
  if (!a || !b) return false;
  if (a->size() != b->size()) return true;
  for (std::size_t i = 0; i < a->size(); ++i) {
    if ((*a)[i] >= 0 && (*b)[i] >= 0 && (*a)[i] != (*b)[i]) return true;
  }
  return false;
}

GraphBuilder& builder_of(const SymbolicTensor& a) {
  if (a.builder == nullptr) throw Error(ErrorCode::kInvalidGraph, "operation on an unbound tensor");
  return *a.builder;
}

}  // namespace

SymbolicTensor operator+(const SymbolicTensor& a, const SymbolicTensor& b) { return builder_of(a).add(a, b); }
SymbolicTensor operator-(const SymbolicTensor& a, const SymbolicTensor& b) { return builder_of(a).sub(a, b); }
SymbolicTensor operator*(const SymbolicTensor& a, const SymbolicTensor& b) { return builder_of(a).mul(a, b); }
SymbolicTensor operator-(const SymbolicTensor& a) { return builder_of(a).neg(a); }

GraphBuilder::GraphBuilder(GraphDef& graph) : graph_(graph) {
  if (graph_.size() > 0) {
    GraphSpecs all = infer_graph(graph_);
    for (auto& [node, specs] : all.outputs) {
      for (std::size_t i = 0; i < specs.size(); ++i) specs_[Port{node, static_cast<int>(i)}] = specs[i];
    }
  }
  // Loops already in the graph gate input-less ops from their body pivot.
  for (const auto& c : graph_.contexts()) {
    if (c.kind == ContextKind::kWhile && !c.loop_vars.empty()) pivots_[c.id] = c.loop_vars[0].identity;
  }
}

const TensorSpec& GraphBuilder::spec(const Port& port) {
  auto it = specs_.find(port);
  if (it != specs_.end()) return it->second;
  const NodeDef* n = graph_.find(port.node);
  if (n == nullptr || port.index < 0 || port.index >= num_outputs(*n)) {
    throw Error(ErrorCode::kDanglingInput, "no port " + port.str());
  }
  // Nodes added behind the builder's back: re-infer the whole graph.
  GraphSpecs all = infer_graph(graph_);
  for (auto& [node, specs] : all.outputs) {
    for (std::size_t i = 0; i < specs.size(); ++i) specs_.try_emplace(Port{node, static_cast<int>(i)}, specs[i]);
  }
  it = specs_.find(port);
  if (it == specs_.end()) throw Error(ErrorCode::kDtypeMismatch, "cannot infer the type of " + port.str(), port.node);
  return it->second;
}

SymbolicTensor GraphBuilder::make_tensor(const Port& port) {
  const TensorSpec& s = spec(port);
  return SymbolicTensor{this, port, s.dtype, s.shape};
}

SymbolicTensor GraphBuilder::tensor(const Port& port) { return make_tensor(port); }

std::string GraphBuilder::scoped(const std::string& base) const {
  auto it = scopes_.find(ctx_);
  return it == scopes_.end() ? base : it->second + base;
}

std::string GraphBuilder::unique_frame_name(const std::string& base) {
  auto taken = [&](const std::string& name) {
    for (const auto& c : graph_.contexts()) {
      if (c.kind == ContextKind::kWhile && c.frame_name == name) return true;
    }
    return graph_.has_node(name);
  };
  if (!taken(base)) return base;
  for (int i = 1;; ++i) {
    std::string candidate = base + "_" + std::to_string(i);
    if (!taken(candidate)) return candidate;
  }
}

bool GraphBuilder::is_free(const NodeDef& node) const {
  if (!node.control_inputs.empty()) return false;
  switch (node.op) {
    case OpType::kEnter:
    case OpType::kMerge:
    case OpType::kPlaceholder:
    case OpType::kRecv:
      return false;
    default:
      break;
  }
  if (node.inputs.empty()) return true;
  // Ops fed only by loop constants would otherwise fire in iterations that
  // the loop never runs.
  if (graph_.frame_of(node.context) == 0) return false;
  for (const Port& in : node.inputs) {
    const NodeDef& src = graph_.node(in.node);
    if (src.op != OpType::kEnter || !src.attr_bool("is_constant")) return false;
  }
  return true;
}

std::string GraphBuilder::pivot(int ctx) {
  auto it = pivots_.find(ctx);
  if (it != pivots_.end()) return it->second;
  const ContextDef& c = graph_.context(ctx);
  if (c.kind == ContextKind::kCond) {
    const CondGroupDef& g = graph_.cond_group(c.cond_group);
    const Port want{g.pivot_switch, c.branch ? 1 : 0};
    for (const auto& n : graph_.nodes()) {
      if (n.op == OpType::kIdentity && n.context == ctx && n.inputs.size() == 1 && n.inputs[0] == want) {
        pivots_[ctx] = n.id;
        return n.id;
      }
    }
  }
  throw Error(ErrorCode::kInternal, "context " + std::to_string(ctx) + " has no pivot");
}

std::string GraphBuilder::add_node(OpType type, const std::vector<Port>& inputs, AttrMap attrs,
                                   const std::string& name, std::vector<std::string> control_inputs) {
  NodeDef n;
  n.op = type;
  n.id = graph_.unique_id(scoped(name.empty() ? lower_op_name(type) : name));
  n.attrs = std::move(attrs);
  n.inputs = inputs;
  n.control_inputs = std::move(control_inputs);
  n.context = ctx_;
  std::vector<TensorSpec> in;
  in.reserve(inputs.size());
  for (const Port& p : inputs) in.push_back(spec(p));
  std::vector<TensorSpec> out = infer_outputs(n, in);
  if (ctx_ != 0 && is_free(n)) n.control_inputs.push_back(pivot(ctx_));
  const std::string id = graph_.add_node(std::move(n));
  for (std::size_t i = 0; i < out.size(); ++i) specs_[Port{id, static_cast<int>(i)}] = std::move(out[i]);
  return id;
}

SymbolicTensor GraphBuilder::import(const SymbolicTensor& t, int ctx) {
  const int src = graph_.output_context(t.port);
  if (src == ctx) return t;
  if (!graph_.is_ancestor_context(src, ctx)) {
    throw Error(ErrorCode::kInvalidGraph,
                t.port.str() + " belongs to context " + std::to_string(src) + " and is not visible in context " +
                    std::to_string(ctx),
                t.port.node);
  }
  std::vector<int> chain;
  for (int c = ctx; c != src; c = graph_.context(c).parent) chain.push_back(c);
  SymbolicTensor cur = t;
  for (auto it = chain.rbegin(); it != chain.rend(); ++it) cur = import_one(cur, *it);
  return cur;
}

SymbolicTensor GraphBuilder::import_one(const SymbolicTensor& t, int ctx) {
  const auto key = std::make_pair(t.port, ctx);
  if (auto it = imports_.find(key); it != imports_.end()) return make_tensor(it->second);
  const ContextDef c = graph_.context(ctx);
  Port port;
  if (c.kind == ContextKind::kWhile) {
    ContextGuard guard(ctx_, ctx);
    AttrMap attrs{{"frame_name", c.frame_name},
                  {"is_constant", true},
                  {"parallel_iterations", std::int64_t{c.parallel_iterations}}};
    port = Port{add_node(OpType::kEnter, {t.port}, std::move(attrs), "enter_const"), 0};
    graph_.mutable_context(ctx).constant_enters.push_back(port.node);
  } else {
    const CondGroupDef g = graph_.cond_group(c.cond_group);
    ContextGuard guard(ctx_, c.parent);
    AttrMap attrs{{"cond", std::int64_t{g.id}}, {"branch", c.branch}};
    const std::string sw = add_node(OpType::kSwitch, {t.port, g.pred}, std::move(attrs), "capture");
    graph_.mutable_cond_group(g.id).switches.push_back(sw);
    port = Port{sw, c.branch ? 1 : 0};
  }
  imports_.emplace(key, port);
  return make_tensor(port);
}

void GraphBuilder::with_context(int ctx, const std::function<void()>& fn) {
  graph_.context(ctx);
  ContextGuard guard(ctx_, ctx);
  fn();
}

Tensors GraphBuilder::op(OpType type, const Tensors& inputs, AttrMap attrs, const std::string& name) {
  std::vector<Port> ports;
  ports.reserve(inputs.size());
  for (const auto& t : inputs) ports.push_back(import(t, ctx_).port);
  const std::string id = add_node(type, ports, std::move(attrs), name);
  Tensors out;
  const int n = num_outputs(graph_.node(id));
  for (int i = 0; i < n; ++i) out.push_back(make_tensor(Port{id, i}));
  return out;
}

SymbolicTensor GraphBuilder::op1(OpType type, const Tensors& inputs, AttrMap attrs, const std::string& name) {
  auto out = op(type, inputs, std::move(attrs), name);
  if (out.size() != 1) throw Error(ErrorCode::kInternal, std::string(op_name(type)) + " is not single-output");
  return out[0];
}

SymbolicTensor GraphBuilder::constant(const Tensor& value, const std::string& name) {
  return op1(OpType::kConst, {}, {{"value", value}}, name);
}

SymbolicTensor GraphBuilder::placeholder(const std::string& name, DType dtype, std::optional<Shape> shape,
                                         std::optional<Tensor> default_value) {
  AttrMap attrs{{"dtype", dtype}};
  if (shape) attrs["shape"] = *shape;
  if (default_value) attrs["default"] = *default_value;
  ContextGuard guard(ctx_, 0);
  if (graph_.has_node(name)) throw Error(ErrorCode::kDuplicateId, "duplicate node id " + name, name);
  return op1(OpType::kPlaceholder, {}, std::move(attrs), name);
}

SymbolicTensor GraphBuilder::identity(const SymbolicTensor& x, const std::string& name) {
  return op1(OpType::kIdentity, {x}, {}, name);
}
SymbolicTensor GraphBuilder::add(const SymbolicTensor& a, const SymbolicTensor& b) { return op1(OpType::kAdd, {a, b}); }
SymbolicTensor GraphBuilder::sub(const SymbolicTensor& a, const SymbolicTensor& b) { return op1(OpType::kSub, {a, b}); }
SymbolicTensor GraphBuilder::mul(const SymbolicTensor& a, const SymbolicTensor& b) { return op1(OpType::kMul, {a, b}); }
SymbolicTensor GraphBuilder::neg(const SymbolicTensor& x) { return op1(OpType::kNeg, {x}); }
SymbolicTensor GraphBuilder::matmul(const SymbolicTensor& a, const SymbolicTensor& b) {
  return op1(OpType::kMatMul, {a, b});
}
SymbolicTensor GraphBuilder::transpose(const SymbolicTensor& x) { return op1(OpType::kTranspose, {x}); }
SymbolicTensor GraphBuilder::reduce_sum(const SymbolicTensor& x) { return op1(OpType::kReduceSumAll, {x}); }
SymbolicTensor GraphBuilder::fill(const SymbolicTensor& shape, const SymbolicTensor& value) {
  return op1(OpType::kFill, {shape, value});
}
SymbolicTensor GraphBuilder::less(const SymbolicTensor& a, const SymbolicTensor& b) {
  return op1(OpType::kLess, {a, b});
}
SymbolicTensor GraphBuilder::less_equal(const SymbolicTensor& a, const SymbolicTensor& b) {
  return op1(OpType::kLessEqual, {a, b});
}
SymbolicTensor GraphBuilder::equal(const SymbolicTensor& a, const SymbolicTensor& b) {
  return op1(OpType::kEqual, {a, b});
}
SymbolicTensor GraphBuilder::logical_and(const SymbolicTensor& a, const SymbolicTensor& b) {
  return op1(OpType::kLogicalAnd, {a, b});
}
SymbolicTensor GraphBuilder::logical_not(const SymbolicTensor& x) { return op1(OpType::kLogicalNot, {x}); }
SymbolicTensor GraphBuilder::shape_of(const SymbolicTensor& x) { return op1(OpType::kShape, {x}); }
SymbolicTensor GraphBuilder::size_of(const SymbolicTensor& x) { return op1(OpType::kSize, {x}); }
SymbolicTensor GraphBuilder::sum_to_shape(const SymbolicTensor& x, const SymbolicTensor& shape) {
  return op1(OpType::kSumToShape, {x, shape});
}

SymbolicTensor GraphBuilder::zeros_like(const SymbolicTensor& x) {
  const TensorSpec& s = spec(x.port);
  const Tensor zero = x.dtype == DType::kInt64 ? Tensor::scalar_int(0)
                      : x.dtype == DType::kBool ? Tensor::scalar_bool(false)
                                                : Tensor::scalar(0.0);
  if (s.fully_known()) {
    const Shape& shape = *s.shape;
    return fill(constant(Tensor::i64({static_cast<std::int64_t>(shape.size())}, shape)), constant(zero));
  }
  return fill(shape_of(x), constant(zero));
}

SymbolicTensor GraphBuilder::ones_like(const SymbolicTensor& x) {
  const TensorSpec& s = spec(x.port);
  if (s.fully_known()) {
    const Shape& shape = *s.shape;
    return fill(constant(Tensor::i64({static_cast<std::int64_t>(shape.size())}, shape)),
                constant(Tensor::filled(x.dtype, {}, 1.0)));
  }
  return fill(shape_of(x), constant(Tensor::filled(x.dtype, {}, 1.0)));
}

Tensors GraphBuilder::cond(const SymbolicTensor& pred, const BranchFn& true_fn, const BranchFn& false_fn) {
  if (pred.dtype != DType::kBool || (pred.shape && !pred.shape->empty())) {
    throw Error(ErrorCode::kNonBooleanPredicate, "cond predicate must be a bool scalar", pred.port.node);
  }
  const int parent = ctx_;
  const SymbolicTensor p = import(pred, parent);

  CondGroupDef group;
  group.parent = parent;
  group.pred = p.port;
  const int gid = graph_.add_cond_group(group);
  const std::string scope = scoped("cond_" + std::to_string(gid)) + "/";

  ContextDef branch;
  branch.kind = ContextKind::kCond;
  branch.parent = parent;
  branch.cond_group = gid;
  branch.branch = true;
  const int true_ctx = graph_.add_context(branch);
  branch.branch = false;
  const int false_ctx = graph_.add_context(branch);
  scopes_[true_ctx] = scope + "true/";
  scopes_[false_ctx] = scope + "false/";

  const std::string pivot_switch =
      add_node(OpType::kSwitch, {p.port, p.port}, {{"cond", std::int64_t{gid}}}, "cond_" + std::to_string(gid) + "/pivot");
  {
    auto& g = graph_.mutable_cond_group(gid);
    g.true_context = true_ctx;
    g.false_context = false_ctx;
    g.pivot_switch = pivot_switch;
  }
  for (int c : {true_ctx, false_ctx}) {
    ContextGuard guard(ctx_, c);
    pivots_[c] = add_node(OpType::kIdentity, {Port{pivot_switch, c == true_ctx ? 1 : 0}}, {}, "pivot");
  }

  auto run_branch = [&](int c, const BranchFn& fn) {
    ContextGuard guard(ctx_, c);
    Tensors out = fn();
    for (auto& t : out) t = import(t, c);
    return out;
  };
  const Tensors t_out = run_branch(true_ctx, true_fn);
  const Tensors f_out = run_branch(false_ctx, false_fn);
  if (t_out.size() != f_out.size()) {
    throw Error(ErrorCode::kBranchArityMismatch, "true branch returns " + std::to_string(t_out.size()) +
                                                     " tensors, false branch " + std::to_string(f_out.size()));
  }
  for (std::size_t i = 0; i < t_out.size(); ++i) {
    if (t_out[i].dtype != f_out[i].dtype) {
      throw Error(ErrorCode::kBranchDtypeMismatch,
                  "output " + std::to_string(i) + " is " + std::string(dtype_name(t_out[i].dtype)) + " vs " +
                      std::string(dtype_name(f_out[i].dtype)));
    }
  }
  Tensors result;
  for (std::size_t i = 0; i < t_out.size(); ++i) {
    const std::string m = add_node(OpType::kMerge, {t_out[i].port, f_out[i].port}, {{"cond", std::int64_t{gid}}},
                                   "cond_" + std::to_string(gid) + "/merge");
    graph_.mutable_cond_group(gid).merges.push_back(m);
    result.push_back(make_tensor(Port{m, 0}));
  }
  return result;
}

Tensors GraphBuilder::while_loop(const LoopPredFn& pred, const LoopBodyFn& body, const Tensors& inits,
                                 int parallel_iterations, const std::string& name) {
  if (parallel_iterations < 1) throw Error(ErrorCode::kInvalidGraph, "parallel_iterations must be positive");
  const int parent = ctx_;
  Tensors vars;
  for (const auto& t : inits) vars.push_back(import(t, parent));

  const std::string frame = unique_frame_name(name.empty() ? "while" : name);
  ContextDef loop;
  loop.kind = ContextKind::kWhile;
  loop.parent = parent;
  loop.frame_name = frame;
  loop.parallel_iterations = parallel_iterations;
  const int w = graph_.add_context(loop);
  scopes_[w] = scoped(frame) + "/";

  // Hidden iteration counter, loop variable 0.
  {
    const std::string init = add_node(OpType::kConst, {}, {{"value", Tensor::scalar_int(0)}}, frame + "/counter_init");
    vars.insert(vars.begin(), make_tensor(Port{init, 0}));
  }

  ContextGuard guard(ctx_, w);
  const std::size_t n = vars.size();
  std::vector<LoopVarDef> defs(n);
  Tensors merges;
  for (std::size_t j = 0; j < n; ++j) {
    AttrMap attrs{{"frame_name", frame},
                  {"is_constant", false},
                  {"parallel_iterations", std::int64_t{parallel_iterations}}};
    defs[j].enter = add_node(OpType::kEnter, {vars[j].port}, std::move(attrs), "enter");
    defs[j].merge = add_node(OpType::kMerge, {Port{defs[j].enter, 0}, Port{defs[j].enter, 0}}, {}, "merge");
    // The merge also sees later iterations, so no constant value survives.
    specs_[Port{defs[j].merge, 0}].value.reset();
    merges.push_back(make_tensor(Port{defs[j].merge, 0}));
  }
  pivots_[w] = defs[0].merge;

  SymbolicTensor c = import(pred(Tensors(merges.begin() + 1, merges.end())), w);
  if (c.dtype != DType::kBool || (c.shape && !c.shape->empty())) {
    throw Error(ErrorCode::kNonBooleanPredicate, "loop predicate must be a bool scalar", c.port.node);
  }
  Tensors identities;
  for (std::size_t j = 0; j < n; ++j) {
    defs[j].switch_node = add_node(OpType::kSwitch, {Port{defs[j].merge, 0}, c.port}, {}, "switch");
    defs[j].exit = add_node(OpType::kExit, {Port{defs[j].switch_node, 0}}, {}, "exit");
    defs[j].identity = add_node(OpType::kIdentity, {Port{defs[j].switch_node, 1}}, {}, "body");
    identities.push_back(make_tensor(Port{defs[j].identity, 0}));
  }
  pivots_[w] = defs[0].identity;

  Tensors next = body(Tensors(identities.begin() + 1, identities.end()));
  if (next.size() != n - 1) {
    throw Error(ErrorCode::kArityMismatch, "body returns " + std::to_string(next.size()) + " tensors for " +
                                               std::to_string(n - 1) + " loop variables");
  }
  for (auto& t : next) t = import(t, w);
  for (std::size_t j = 1; j < n; ++j) {
    const auto& before = vars[j];
    const auto& after = next[j - 1];
    if (before.dtype != after.dtype) {
      throw Error(ErrorCode::kDtypeMismatch, "loop variable " + std::to_string(j - 1) + " changes dtype from " +
                                                 std::string(dtype_name(before.dtype)) + " to " +
                                                 std::string(dtype_name(after.dtype)));
    }
    if (shapes_conflict(before.shape, after.shape)) {
      throw Error(ErrorCode::kShapeMismatch, "loop variable " + std::to_string(j - 1) + " changes shape from " +
                                                 shape_string(*before.shape) + " to " + shape_string(*after.shape));
    }
  }
  const SymbolicTensor one = constant(Tensor::scalar_int(1), "counter_step");
  next.insert(next.begin(), add(identities[0], one));

  for (std::size_t j = 0; j < n; ++j) {
    defs[j].next_iteration = add_node(OpType::kNextIteration, {next[j].port}, {}, "next");
    graph_.update_input(defs[j].merge, 1, Port{defs[j].next_iteration, 0});
  }
  auto& ctx = graph_.mutable_context(w);
  ctx.loop_vars = defs;
  ctx.pred = c.port;
  last_while_ = w;

  Tensors out;
  for (std::size_t j = 1; j < n; ++j) out.push_back(make_tensor(Port{defs[j].exit, 0}));
  return out;
}

TensorArrayHandle GraphBuilder::tensor_array(DType dtype, std::optional<SymbolicTensor> size,
                                             std::optional<Shape> element_shape, const std::string& name) {
  AttrMap attrs{{"dtype", dtype}, {"dynamic_size", !size.has_value()}};
  if (element_shape) attrs["element_shape"] = *element_shape;
  Tensors in;
  if (size) in.push_back(*size);
  auto out = op(OpType::kTensorArrayNew, in, std::move(attrs), name.empty() ? "tensor_array" : name);
  return TensorArrayHandle{out[0], out[1], dtype, element_shape};
}

TensorArrayHandle GraphBuilder::ta_write(const TensorArrayHandle& ta, const SymbolicTensor& index,
                                         const SymbolicTensor& value) {
  if (value.dtype != ta.dtype) {
    throw Error(ErrorCode::kDtypeMismatch, "writing " + std::string(dtype_name(value.dtype)) + " into a " +
                                               std::string(dtype_name(ta.dtype)) + " TensorArray");
  }
  TensorArrayHandle out = ta;
  out.flow = op1(OpType::kTensorArrayWrite, {ta.handle, index, value, ta.flow});
  if (!out.element_shape && value.shape) out.element_shape = value.shape;
  return out;
}

SymbolicTensor GraphBuilder::ta_read(const TensorArrayHandle& ta, const SymbolicTensor& index) {
  AttrMap attrs{{"dtype", ta.dtype}};
  if (ta.element_shape) attrs["element_shape"] = *ta.element_shape;
  return op1(OpType::kTensorArrayRead, {ta.handle, index, ta.flow}, std::move(attrs));
}

TensorArrayHandle GraphBuilder::ta_unstack(const TensorArrayHandle& ta, const SymbolicTensor& value) {
  if (value.dtype != ta.dtype) {
    throw Error(ErrorCode::kDtypeMismatch, "unstacking " + std::string(dtype_name(value.dtype)) + " into a " +
                                               std::string(dtype_name(ta.dtype)) + " TensorArray");
  }
  TensorArrayHandle out = ta;
  out.flow = op1(OpType::kTensorArrayUnstack, {ta.handle, value, ta.flow});
  if (!out.element_shape && value.shape && !value.shape->empty()) {
    out.element_shape = Shape(value.shape->begin() + 1, value.shape->end());
  }
  return out;
}

SymbolicTensor GraphBuilder::ta_stack(const TensorArrayHandle& ta) {
  AttrMap attrs{{"dtype", ta.dtype}};
  if (ta.element_shape) attrs["element_shape"] = *ta.element_shape;
  return op1(OpType::kTensorArrayStack, {ta.handle, ta.flow}, std::move(attrs));
}

SymbolicTensor GraphBuilder::ta_size(const TensorArrayHandle& ta) {
  return op1(OpType::kTensorArraySize, {ta.handle, ta.flow});
}

TensorArrayHandle GraphBuilder::ta_with_flow(const TensorArrayHandle& ta, const SymbolicTensor& flow) {
  TensorArrayHandle out = ta;
  out.flow = flow;
  return out;
}

SymbolicTensor GraphBuilder::scan(
    const std::function<SymbolicTensor(const SymbolicTensor&, const SymbolicTensor&)>& fn,
    const SymbolicTensor& elems, const SymbolicTensor& init) {
  if (elems.shape && elems.shape->empty()) {
    throw Error(ErrorCode::kShapeMismatch, "scan needs elements of rank >= 1", elems.port.node);
  }
  std::optional<Shape> elem_shape;
  if (elems.shape) elem_shape = Shape(elems.shape->begin() + 1, elems.shape->end());
  TensorArrayHandle elem_ta = ta_unstack(tensor_array(elems.dtype, std::nullopt, elem_shape, "scan_elems"), elems);
  TensorArrayHandle result_ta = tensor_array(init.dtype, std::nullopt, init.shape, "scan_result");
  const SymbolicTensor n = ta_size(elem_ta);

  auto outs = while_loop(
      [&](const Tensors& v) { return less(v[0], n); },
      [&](const Tensors& v) {
        SymbolicTensor a = fn(v[1], ta_read(elem_ta, v[0]));
        TensorArrayHandle ta = ta_write(ta_with_flow(result_ta, v[2]), v[0], a);
        return Tensors{v[0] + scalar_int(1), a, ta.flow};
      },
      {scalar_int(0), init, result_ta.flow}, 32, "scan");
  return ta_stack(ta_with_flow(result_ta, outs[2]));
}

}  // namespace loomflow
