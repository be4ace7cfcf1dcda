// Copyright 2026 The Loomflow Authors
// SPDX-License-Identifier: Apache-2.0

// Graph construction API. High-level constructs (cond, while_loop,
// TensorArrays, scan) are compiled straight into Switch/Merge/Enter/Exit/
// NextIteration primitives as they are built.
//
// Tensors produced outside the context under construction are imported
// automatically when an op consumes them: a loop gets one constant Enter per
// external tensor and a conditional branch gets one Switch per external
// tensor, at every nesting level between producer and consumer.

#ifndef LOOMFLOW_BUILDER_H_
#define LOOMFLOW_BUILDER_H_

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "loomflow/graph.h"
#include "loomflow/infer.h"

namespace loomflow {

class GraphBuilder;

struct SymbolicTensor {
  GraphBuilder* builder = nullptr;
  Port port;
  DType dtype = DType::kFloat64;
  std::optional<Shape> shape;

  bool valid() const { return builder != nullptr; }
  const std::string& node() const { return port.node; }
};

SymbolicTensor operator+(const SymbolicTensor& a, const SymbolicTensor& b);
SymbolicTensor operator-(const SymbolicTensor& a, const SymbolicTensor& b);
SymbolicTensor operator*(const SymbolicTensor& a, const SymbolicTensor& b);
SymbolicTensor operator-(const SymbolicTensor& a);

// A TensorArray value. The flow tensor orders accesses: every write returns
// a handle with a fresh flow, and reads consume the flow of the write they
// must follow.
struct TensorArrayHandle {
  SymbolicTensor handle;
  SymbolicTensor flow;
  DType dtype = DType::kFloat64;
  std::optional<Shape> element_shape;

  const std::string& id() const { return handle.port.node; }
};

using Tensors = std::vector<SymbolicTensor>;
using BranchFn = std::function<Tensors()>;
using LoopPredFn = std::function<SymbolicTensor(const Tensors&)>;
using LoopBodyFn = std::function<Tensors(const Tensors&)>;

class GraphBuilder {
 public:
  // Builds into `graph`, which may already hold nodes (e.g. when adding
  // gradients to a loaded graph). The graph must outlive the builder.
  explicit GraphBuilder(GraphDef& graph);

  GraphDef& graph() { return graph_; }
  const GraphDef& graph() const { return graph_; }

  // Symbolic view of an existing output port.
  SymbolicTensor tensor(const Port& port);
  SymbolicTensor tensor(const std::string& node, int index = 0) { return tensor(Port{node, index}); }
  const TensorSpec& spec(const Port& port);

  SymbolicTensor constant(const Tensor& value, const std::string& name = {});
  SymbolicTensor scalar(double v) { return constant(Tensor::scalar(v)); }
  SymbolicTensor scalar_int(std::int64_t v) { return constant(Tensor::scalar_int(v)); }
  SymbolicTensor placeholder(const std::string& name, DType dtype, std::optional<Shape> shape = std::nullopt,
                             std::optional<Tensor> default_value = std::nullopt);

  SymbolicTensor identity(const SymbolicTensor& x, const std::string& name = {});
  SymbolicTensor add(const SymbolicTensor& a, const SymbolicTensor& b);
  SymbolicTensor sub(const SymbolicTensor& a, const SymbolicTensor& b);
  SymbolicTensor mul(const SymbolicTensor& a, const SymbolicTensor& b);
  SymbolicTensor neg(const SymbolicTensor& x);
  SymbolicTensor matmul(const SymbolicTensor& a, const SymbolicTensor& b);
  SymbolicTensor transpose(const SymbolicTensor& x);
  SymbolicTensor reduce_sum(const SymbolicTensor& x);
  SymbolicTensor fill(const SymbolicTensor& shape, const SymbolicTensor& value);
  SymbolicTensor less(const SymbolicTensor& a, const SymbolicTensor& b);
  SymbolicTensor less_equal(const SymbolicTensor& a, const SymbolicTensor& b);
  SymbolicTensor equal(const SymbolicTensor& a, const SymbolicTensor& b);
  SymbolicTensor logical_and(const SymbolicTensor& a, const SymbolicTensor& b);
  SymbolicTensor logical_not(const SymbolicTensor& x);
  SymbolicTensor shape_of(const SymbolicTensor& x);
  SymbolicTensor size_of(const SymbolicTensor& x);
  SymbolicTensor sum_to_shape(const SymbolicTensor& x, const SymbolicTensor& shape);
  SymbolicTensor zeros_like(const SymbolicTensor& x);
  SymbolicTensor ones_like(const SymbolicTensor& x);

  // Generic node creation in the current context; inputs are imported.
  Tensors op(OpType type, const Tensors& inputs, AttrMap attrs = {}, const std::string& name = {});
  SymbolicTensor op1(OpType type, const Tensors& inputs, AttrMap attrs = {}, const std::string& name = {});

  // Runs `true_fn` or `false_fn` depending on `pred` (a bool scalar) and
  // returns the taken branch's outputs. Throws BranchArityMismatch,
  // BranchDtypeMismatch or NonBooleanPredicate.
  Tensors cond(const SymbolicTensor& pred, const BranchFn& true_fn, const BranchFn& false_fn);

  // Iterates `body` while `pred` holds. Throws ArityMismatch, DtypeMismatch,
  // ShapeMismatch or NonBooleanPredicate.
  Tensors while_loop(const LoopPredFn& pred, const LoopBodyFn& body, const Tensors& inits,
                     int parallel_iterations = 32, const std::string& name = {});
  // Context id of the most recent while_loop.
  int last_while() const { return last_while_; }

  TensorArrayHandle tensor_array(DType dtype, std::optional<SymbolicTensor> size = std::nullopt,
                                 std::optional<Shape> element_shape = std::nullopt,
                                 const std::string& name = {});
  TensorArrayHandle ta_write(const TensorArrayHandle& ta, const SymbolicTensor& index,
                             const SymbolicTensor& value);
  SymbolicTensor ta_read(const TensorArrayHandle& ta, const SymbolicTensor& index);
  TensorArrayHandle ta_unstack(const TensorArrayHandle& ta, const SymbolicTensor& value);
  SymbolicTensor ta_stack(const TensorArrayHandle& ta);
  SymbolicTensor ta_size(const TensorArrayHandle& ta);
  // Handle and flow of a TensorArray rebuilt from a loop variable holding
  // its flow.
  TensorArrayHandle ta_with_flow(const TensorArrayHandle& ta, const SymbolicTensor& flow);

  // Prefix sums under `fn`: out[i] = fn(...fn(fn(init, elems[0]), elems[1])..., elems[i]).
  SymbolicTensor scan(const std::function<SymbolicTensor(const SymbolicTensor&, const SymbolicTensor&)>& fn,
                      const SymbolicTensor& elems, const SymbolicTensor& init);

  // Context management.
  int current_context() const { return ctx_; }
  // Runs `fn` with `ctx` as the current context and restores the previous
  // one afterwards.
  void with_context(int ctx, const std::function<void()>& fn);
  // `t` made visible in context `ctx` (identity when already visible).
  SymbolicTensor import(const SymbolicTensor& t, int ctx);

  // Low-level: adds a node in the current context with the given ports and
  // no importing; used for structural nodes and by graph transforms.
  std::string add_node(OpType type, const std::vector<Port>& inputs, AttrMap attrs = {},
                       const std::string& name = {}, std::vector<std::string> control_inputs = {});

  // Node that gates input-less ops created in `ctx`.
  std::string pivot(int ctx);

  std::string unique_frame_name(const std::string& base);

 private:
  SymbolicTensor make_tensor(const Port& port);
  SymbolicTensor import_one(const SymbolicTensor& t, int ctx);
  bool is_free(const NodeDef& node) const;
  std::string scoped(const std::string& base) const;

  GraphDef& graph_;
  std::unordered_map<Port, TensorSpec, PortHash> specs_;
  std::map<std::pair<Port, int>, Port> imports_;
  std::unordered_map<int, std::string> pivots_;
  std::unordered_map<int, std::string> scopes_;
  int ctx_ = 0;
  int last_while_ = -1;
};

}  // namespace loomflow

#endif  // LOOMFLOW_BUILDER_H_
