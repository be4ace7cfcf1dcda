// Copyright 2026 The Loomflow Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef LOOMFLOW_GRAPH_H_
#define LOOMFLOW_GRAPH_H_

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include "loomflow/kernels.h"
#include "loomflow/tensor.h"

namespace loomflow {

enum class OpType {
  // Compute kernels; see kernels.h for their contracts.
  kConst,
  kIdentity,
  kAdd,
  kSub,
  kMul,
  kNeg,
  kMatMul,
  kTranspose,
  kReduceSumAll,
  kFill,
  kLess,
  kLessEqual,
  kEqual,
  kLogicalAnd,
  kLogicalNot,
  kShape,
  kSize,
  kSumToShape,
  // Graph inputs.
  kPlaceholder,
  // Control flow.
  kSwitch,
  kMerge,
  kEnter,
  kExit,
  kNextIteration,
  // Communication.
  kSend,
  kRecv,
  // Saved-value stacks.
  kStackPush,
  kStackPop,
  // TensorArrays.
  kTensorArrayNew,
  kTensorArrayWrite,
  kTensorArrayRead,
  kTensorArrayUnstack,
  kTensorArrayStack,
  kTensorArraySize,
  kTensorArrayGrad,
};

std::string_view op_name(OpType op);
std::optional<OpType> op_from_name(std::string_view name);
std::optional<KernelKind> op_kernel(OpType op);
OpType kernel_op(KernelKind kind);
bool is_tensor_array_op(OpType op);

struct Port {
  std::string node;
  int index = 0;

  auto operator<=>(const Port&) const = default;
  bool operator==(const Port&) const = default;
  std::string str() const { return node + ":" + std::to_string(index); }
  // Accepts "node" (port 0) or "node:port".
  static Port parse(std::string_view text);
};

struct PortHash {
  std::size_t operator()(const Port& p) const {
    return std::hash<std::string>()(p.node) * 31 + static_cast<std::size_t>(p.index);
  }
};

using AttrValue =
    std::variant<std::int64_t, double, bool, std::string, Tensor, std::vector<std::int64_t>, DType>;
using AttrMap = std::map<std::string, AttrValue>;

struct NodeDef {
  std::string id;
  OpType op = OpType::kIdentity;
  AttrMap attrs;
  std::vector<Port> inputs;
  std::vector<std::string> control_inputs;
  int context = 0;
  std::string device;

  bool has_attr(const std::string& name) const { return attrs.count(name) != 0; }
  std::int64_t attr_int(const std::string& name, std::int64_t fallback = 0) const;
  bool attr_bool(const std::string& name, bool fallback = false) const;
  std::string attr_string(const std::string& name, const std::string& fallback = {}) const;
  std::optional<DType> attr_dtype(const std::string& name) const;
  const Tensor* attr_tensor(const std::string& name) const;
  std::optional<std::vector<std::int64_t>> attr_ints(const std::string& name) const;
};

// Number of data outputs produced by a node.
int num_outputs(const NodeDef& node);

enum class ContextKind { kRoot, kCond, kWhile };
std::string_view context_kind_name(ContextKind kind);

// One loop variable of a while context, as compiled by the builder.
struct LoopVarDef {
  std::string enter;
  std::string merge;
  std::string switch_node;
  std::string exit;
  std::string identity;
  std::string next_iteration;
};

struct ContextDef {
  int id = 0;
  ContextKind kind = ContextKind::kRoot;
  int parent = -1;

  // Cond branches.
  int cond_group = -1;
  bool branch = false;

  // While loops. loop_vars[0] is the hidden iteration counter.
  std::string frame_name;
  int parallel_iterations = 32;
  std::vector<LoopVarDef> loop_vars;
  std::vector<std::string> constant_enters;
  Port pred;
};

// A conditional: the pair of branch contexts plus the nodes that route values
// into and out of them. The routing nodes live in the parent context.
struct CondGroupDef {
  int id = 0;
  int parent = 0;
  Port pred;
  int true_context = -1;
  int false_context = -1;
  std::string pivot_switch;
  std::vector<std::string> switches;  // captures for either branch
  std::vector<std::string> merges;    // one per output
};

class GraphDef {
 public:
  GraphDef();

  // Adds a node. Throws DuplicateId or DanglingInput.
  const std::string& add_node(NodeDef node);

  bool has_node(std::string_view id) const;
  const NodeDef& node(std::string_view id) const;
  NodeDef& mutable_node(std::string_view id);
  const NodeDef* find(std::string_view id) const;
  int index_of(std::string_view id) const;  // -1 when absent
  const std::vector<NodeDef>& nodes() const { return nodes_; }
  std::size_t size() const { return nodes_.size(); }

  // Rewires one data input; used to close loop back-edges once the
  // NextIteration node exists.
  void update_input(std::string_view id, int slot, const Port& src);
  void add_control_input(std::string_view id, const std::string& src);

  int add_context(ContextDef ctx);
  const ContextDef& context(int id) const;
  ContextDef& mutable_context(int id);
  const std::vector<ContextDef>& contexts() const { return contexts_; }

  int add_cond_group(CondGroupDef group);
  const CondGroupDef& cond_group(int id) const;
  CondGroupDef& mutable_cond_group(int id);
  const std::vector<CondGroupDef>& cond_groups() const { return conds_; }

  std::vector<Port>& outputs() { return outputs_; }
  const std::vector<Port>& outputs() const { return outputs_; }

  // Generates an id not yet used, of the form prefix or prefix_N.
  std::string unique_id(const std::string& prefix) const;

  // Context helpers.
  bool is_ancestor_context(int ancestor, int ctx) const;  // reflexive
  int frame_of(int ctx) const;  // innermost while context, 0 for root
  std::vector<int> enclosing_whiles(int ctx) const;  // outermost first
  // Context of the value produced on `port`: Exit outputs belong to the
  // loop's parent, cond capture switches to the matching branch.
  int output_context(const Port& port) const;

 private:
  std::vector<NodeDef> nodes_;
  std::unordered_map<std::string, int> index_;
  std::vector<ContextDef> contexts_;
  std::vector<CondGroupDef> conds_;
  std::vector<Port> outputs_;
};

}  // namespace loomflow

#endif  // LOOMFLOW_GRAPH_H_
