// Copyright 2026 The Loomflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "loomflow/graph.h"

#include <array>
#include <charconv>

#include "loomflow/errors.h"

namespace loomflow {

namespace {

struct OpInfo {
  OpType op;
  std::string_view name;
};

constexpr std::array<OpInfo, 35> kOpTable = {{
    {OpType::kConst, "Const"},
    {OpType::kIdentity, "Identity"},
    {OpType::kAdd, "Add"},
    {OpType::kSub, "Sub"},
    {OpType::kMul, "Mul"},
    {OpType::kNeg, "Neg"},
    {OpType::kMatMul, "MatMul"},
    {OpType::kTranspose, "Transpose"},
    {OpType::kReduceSumAll, "ReduceSumAll"},
    {OpType::kFill, "Fill"},
    {OpType::kLess, "Less"},
    {OpType::kLessEqual, "LessEqual"},
    {OpType::kEqual, "Equal"},
    {OpType::kLogicalAnd, "LogicalAnd"},
    {OpType::kLogicalNot, "LogicalNot"},
    {OpType::kShape, "Shape"},
    {OpType::kSize, "Size"},
    {OpType::kSumToShape, "SumToShape"},
    {OpType::kPlaceholder, "Placeholder"},
    {OpType::kSwitch, "Switch"},
    {OpType::kMerge, "Merge"},
    {OpType::kEnter, "Enter"},
    {OpType::kExit, "Exit"},
    {OpType::kNextIteration, "NextIteration"},
    {OpType::kSend, "Send"},
    {OpType::kRecv, "Recv"},
    {OpType::kStackPush, "StackPush"},
    {OpType::kStackPop, "StackPop"},
    {OpType::kTensorArrayNew, "TensorArrayNew"},
    {OpType::kTensorArrayWrite, "TensorArrayWrite"},
    {OpType::kTensorArrayRead, "TensorArrayRead"},
    {OpType::kTensorArrayUnstack, "TensorArrayUnstack"},
    {OpType::kTensorArrayStack, "TensorArrayStack"},
    {OpType::kTensorArraySize, "TensorArraySize"},
    {OpType::kTensorArrayGrad, "TensorArrayGrad"},
}};

}  // namespace

std::string_view op_name(OpType op) {
  for (const auto& info : kOpTable) {
    if (info.op == op) return info.name;
  }
  return "?";
}

std::optional<OpType> op_from_name(std::string_view name) {
  for (const auto& info : kOpTable) {
    if (info.name == name) return info.op;
  }
  return std::nullopt;
}

std::optional<KernelKind> op_kernel(OpType op) {
  if (static_cast<int>(op) <= static_cast<int>(OpType::kSumToShape)) {
    return static_cast<KernelKind>(static_cast<int>(op));
  }
  return std::nullopt;
}

OpType kernel_op(KernelKind kind) { return static_cast<OpType>(static_cast<int>(kind)); }

bool is_tensor_array_op(OpType op) {
  return static_cast<int>(op) >= static_cast<int>(OpType::kTensorArrayNew);
}

Port Port::parse(std::string_view text) {
  const auto colon = text.rfind(':');
  if (colon == std::string_view::npos) return Port{std::string(text), 0};
  int index = 0;
  auto tail = text.substr(colon + 1);
  auto res = std::from_chars(tail.data(), tail.data() + tail.size(), index);
  if (res.ec != std::errc() || res.ptr != tail.data() + tail.size() || tail.empty()) {
    return Port{std::string(text), 0};
  }
  return Port{std::string(text.substr(0, colon)), index};
}

std::int64_t NodeDef::attr_int(const std::string& name, std::int64_t fallback) const {
  auto it = attrs.find(name);
  if (it == attrs.end()) return fallback;
  if (auto* v = std::get_if<std::int64_t>(&it->second)) return *v;
  return fallback;
}

bool NodeDef::attr_bool(const std::string& name, bool fallback) const {
  auto it = attrs.find(name);
  if (it == attrs.end()) return fallback;
  if (auto* v = std::get_if<bool>(&it->second)) return *v;
  return fallback;
}

std::string NodeDef::attr_string(const std::string& name, const std::string& fallback) const {
  auto it = attrs.find(name);
  if (it == attrs.end()) return fallback;
  if (auto* v = std::get_if<std::string>(&it->second)) return *v;
  return fallback;
}

std::optional<DType> NodeDef::attr_dtype(const std::string& name) const {
  auto it = attrs.find(name);
  if (it == attrs.end()) return std::nullopt;
  if (auto* v = std::get_if<DType>(&it->second)) return *v;
  return std::nullopt;
}

const Tensor* NodeDef::attr_tensor(const std::string& name) const {
  auto it = attrs.find(name);
  if (it == attrs.end()) return nullptr;
  return std::get_if<Tensor>(&it->second);
}

std::optional<std::vector<std::int64_t>> NodeDef::attr_ints(const std::string& name) const {
  auto it = attrs.find(name);
  if (it == attrs.end()) return std::nullopt;
  if (auto* v = std::get_if<std::vector<std::int64_t>>(&it->second)) return *v;
  return std::nullopt;
}

int num_outputs(const NodeDef& node) {
  switch (node.op) {
    case OpType::kSwitch:
    case OpType::kTensorArrayNew:
    case OpType::kTensorArrayGrad:
      return 2;
    case OpType::kSend:
      return 0;
    default:
      return 1;
  }
}

std::string_view context_kind_name(ContextKind kind) {
  switch (kind) {
    case ContextKind::kRoot: return "root";
    case ContextKind::kCond: return "cond";
    case ContextKind::kWhile: return "while";
  }
  return "?";
}

GraphDef::GraphDef() {
  ContextDef root;
  root.id = 0;
  root.kind = ContextKind::kRoot;
  contexts_.push_back(root);
}

const std::string& GraphDef::add_node(NodeDef node) {
  if (node.id.empty()) throw Error(ErrorCode::kInvalidGraph, "node without an id");
  if (index_.count(node.id)) throw Error(ErrorCode::kDuplicateId, "duplicate node id " + node.id, node.id);
  for (const Port& in : node.inputs) {
    const NodeDef* src = find(in.node);
    if (src == nullptr) {
      throw Error(ErrorCode::kDanglingInput, node.id + " reads missing node " + in.node, node.id);
    }
    if (in.index < 0 || in.index >= num_outputs(*src)) {
      throw Error(ErrorCode::kDanglingInput, node.id + " reads missing port " + in.str(), node.id);
    }
  }
  for (const auto& ctl : node.control_inputs) {
    if (!has_node(ctl)) {
      throw Error(ErrorCode::kDanglingInput, node.id + " has control input from missing " + ctl, node.id);
    }
  }
  if (node.context < 0 || node.context >= static_cast<int>(contexts_.size())) {
    throw Error(ErrorCode::kInvalidGraph, node.id + " names unknown context", node.id);
  }
  index_.emplace(node.id, static_cast<int>(nodes_.size()));
  nodes_.push_back(std::move(node));
  return nodes_.back().id;
}

bool GraphDef::has_node(std::string_view id) const { return index_.count(std::string(id)) != 0; }

const NodeDef* GraphDef::find(std::string_view id) const {
  auto it = index_.find(std::string(id));
  return it == index_.end() ? nullptr : &nodes_[it->second];
}

const NodeDef& GraphDef::node(std::string_view id) const {
  const NodeDef* n = find(id);
  if (n == nullptr) throw Error(ErrorCode::kDanglingInput, "no node " + std::string(id));
  return *n;
}

NodeDef& GraphDef::mutable_node(std::string_view id) {
  auto it = index_.find(std::string(id));
  if (it == index_.end()) throw Error(ErrorCode::kDanglingInput, "no node " + std::string(id));
  return nodes_[it->second];
}

int GraphDef::index_of(std::string_view id) const {
  auto it = index_.find(std::string(id));
  return it == index_.end() ? -1 : it->second;
}

void GraphDef::update_input(std::string_view id, int slot, const Port& src) {
  NodeDef& n = mutable_node(id);
  if (slot < 0 || slot >= static_cast<int>(n.inputs.size())) {
    throw Error(ErrorCode::kArityError, "no input slot " + std::to_string(slot) + " on " + n.id, n.id);
  }
  const NodeDef* producer = find(src.node);
  if (producer == nullptr || src.index >= num_outputs(*producer)) {
    throw Error(ErrorCode::kDanglingInput, n.id + " reads missing port " + src.str(), n.id);
  }
  n.inputs[slot] = src;
}

void GraphDef::add_control_input(std::string_view id, const std::string& src) {
  if (!has_node(src)) throw Error(ErrorCode::kDanglingInput, "control input from missing " + src);
  NodeDef& n = mutable_node(id);
  for (const auto& c : n.control_inputs) {
    if (c == src) return;
  }
  n.control_inputs.push_back(src);
}

int GraphDef::add_context(ContextDef ctx) {
  ctx.id = static_cast<int>(contexts_.size());
  if (ctx.parent < 0 || ctx.parent >= ctx.id) {
    throw Error(ErrorCode::kInvalidGraph, "context parent must precede it");
  }
  contexts_.push_back(std::move(ctx));
  return contexts_.back().id;
}

const ContextDef& GraphDef::context(int id) const {
  if (id < 0 || id >= static_cast<int>(contexts_.size())) {
    throw Error(ErrorCode::kInvalidGraph, "unknown context " + std::to_string(id));
  }
  return contexts_[id];
}

ContextDef& GraphDef::mutable_context(int id) {
  if (id < 0 || id >= static_cast<int>(contexts_.size())) {
    throw Error(ErrorCode::kInvalidGraph, "unknown context " + std::to_string(id));
  }
  return contexts_[id];
}

int GraphDef::add_cond_group(CondGroupDef group) {
  group.id = static_cast<int>(conds_.size());
  conds_.push_back(std::move(group));
  return conds_.back().id;
}

const CondGroupDef& GraphDef::cond_group(int id) const {
  if (id < 0 || id >= static_cast<int>(conds_.size())) {
    throw Error(ErrorCode::kInvalidGraph, "unknown cond group " + std::to_string(id));
  }
  return conds_[id];
}

CondGroupDef& GraphDef::mutable_cond_group(int id) {
  if (id < 0 || id >= static_cast<int>(conds_.size())) {
    throw Error(ErrorCode::kInvalidGraph, "unknown cond group " + std::to_string(id));
  }
  return conds_[id];
}

std::string GraphDef::unique_id(const std::string& prefix) const {
  if (!has_node(prefix)) return prefix;
  for (int i = 1;; ++i) {
    std::string candidate = prefix + "_" + std::to_string(i);
    if (!has_node(candidate)) return candidate;
  }
}

bool GraphDef::is_ancestor_context(int ancestor, int ctx) const {
  for (int c = ctx; c >= 0; c = contexts_[c].parent) {
    if (c == ancestor) return true;
  }
  return false;
}

int GraphDef::frame_of(int ctx) const {
  for (int c = ctx; c >= 0; c = contexts_[c].parent) {
    if (contexts_[c].kind == ContextKind::kWhile) return c;
  }
  return 0;
}

std::vector<int> GraphDef::enclosing_whiles(int ctx) const {
  std::vector<int> out;
  for (int c = ctx; c >= 0; c = contexts_[c].parent) {
    if (contexts_[c].kind == ContextKind::kWhile) out.insert(out.begin(), c);
  }
  return out;
}

int GraphDef::output_context(const Port& port) const {
  const NodeDef& n = node(port.node);
  if (n.op == OpType::kExit) {
    const int parent = context(n.context).parent;
    return parent < 0 ? 0 : parent;
  }
  if (n.op == OpType::kSwitch && n.has_attr("cond")) {
    const CondGroupDef& g = cond_group(static_cast<int>(n.attr_int("cond")));
    return port.index == 1 ? g.true_context : g.false_context;
  }
  return n.context;
}

}  // namespace loomflow
