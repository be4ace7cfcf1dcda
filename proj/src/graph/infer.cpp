// Copyright 2026 The Loomflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "loomflow/infer.h"

#include "loomflow/errors.h"

namespace loomflow {

bool TensorSpec::fully_known() const {
  if (!shape) return false;
  for (auto d : *shape) {
    if (d < 0) return false;
  }
  return true;
}

std::string TensorSpec::str() const {
  std::string out(dtype_name(dtype));
  out += ' ';
  if (!shape) return out + "[?]";
  out += '[';
  for (std::size_t i = 0; i < shape->size(); ++i) {
    if (i) out += ',';
    out += (*shape)[i] < 0 ? "?" : std::to_string((*shape)[i]);
  }
  return out + "]";
}

TensorSpec spec_of(const Tensor& t) { return TensorSpec{t.dtype(), t.shape(), t}; }

TensorSpec unknown_spec(DType dtype) { return TensorSpec{dtype, std::nullopt, std::nullopt}; }

TensorSpec merge_specs(const TensorSpec& a, const TensorSpec& b) {
  TensorSpec out{a.dtype, std::nullopt, std::nullopt};
  if (a.value && b.value && a.value->identical(*b.value)) out.value = a.value;
  if (a.shape && b.shape && a.shape->size() == b.shape->size()) {
    Shape s(a.shape->size());
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = (*a.shape)[i] == (*b.shape)[i] ? (*a.shape)[i] : -1;
    out.shape = s;
  }
  return out;
}

int expected_arity(const NodeDef& node) {
  if (auto kind = op_kernel(node.op)) return kernel_arity(*kind);
  switch (node.op) {
    case OpType::kPlaceholder:
    case OpType::kRecv:
      return 0;
    case OpType::kSwitch:
    case OpType::kMerge:
    case OpType::kTensorArrayStack:
    case OpType::kTensorArraySize:
    case OpType::kTensorArrayGrad:
      return 2;
    case OpType::kEnter:
    case OpType::kExit:
    case OpType::kNextIteration:
      return 1;
    case OpType::kTensorArrayWrite:
      return 4;
    case OpType::kTensorArrayRead:
    case OpType::kTensorArrayUnstack:
      return 3;
    default:
      return -1;
  }
}

namespace {

[[noreturn]] void fail(ErrorCode code, const NodeDef& node, const std::string& msg) {
  throw Error(code, node.id + " (" + std::string(op_name(node.op)) + "): " + msg, node.id);
}

bool is_numeric(DType d) { return d == DType::kFloat64 || d == DType::kInt64; }

std::optional<Shape> broadcast(const NodeDef& node, const TensorSpec& a, const TensorSpec& b) {
  if (a.is_scalar()) return b.shape;
  if (b.is_scalar()) return a.shape;
  if (!a.shape || !b.shape) return a.shape ? a.shape : b.shape;
  if (a.shape->size() != b.shape->size()) {
    // One side might still be a scalar at run time only if its rank is
    // unknown, which is not the case here.
    fail(ErrorCode::kShapeMismatch, node, "operands " + a.str() + " and " + b.str());
  }
  Shape out(a.shape->size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto x = (*a.shape)[i], y = (*b.shape)[i];
    if (x >= 0 && y >= 0 && x != y) fail(ErrorCode::kShapeMismatch, node, "operands " + a.str() + " and " + b.str());
    out[i] = x >= 0 ? x : y;
  }
  return out;
}

void require_same(const NodeDef& node, const TensorSpec& a, const TensorSpec& b) {
  if (a.dtype != b.dtype) {
    fail(ErrorCode::kDtypeMismatch, node, std::string(dtype_name(a.dtype)) + " vs " +
                                              std::string(dtype_name(b.dtype)));
  }
}

void require_numeric(const NodeDef& node, const TensorSpec& a) {
  if (!is_numeric(a.dtype)) fail(ErrorCode::kDtypeMismatch, node, "needs a numeric operand, got " + a.str());
}

void require_dtype(const NodeDef& node, const TensorSpec& a, DType want, const char* what) {
  if (a.dtype != want) {
    fail(ErrorCode::kDtypeMismatch, node,
         std::string(what) + " must be " + std::string(dtype_name(want)) + ", got " + a.str());
  }
}

std::optional<Shape> shape_from_value(const TensorSpec& s) {
  if (s.value && s.value->dtype() == DType::kInt64 && s.value->rank() == 1) {
    return Shape(s.value->i64_data().begin(), s.value->i64_data().end());
  }
  if (s.shape && s.shape->size() == 1 && (*s.shape)[0] >= 0) {
    return Shape(static_cast<std::size_t>((*s.shape)[0]), -1);
  }
  return std::nullopt;
}

std::optional<Shape> attr_shape(const NodeDef& node, const char* name) {
  auto dims = node.attr_ints(name);
  if (!dims) return std::nullopt;
  return Shape(dims->begin(), dims->end());
}

TensorSpec scalar_spec(DType dtype) { return TensorSpec{dtype, Shape{}, std::nullopt}; }

}  // namespace

std::vector<TensorSpec> infer_outputs(const NodeDef& node, const std::vector<TensorSpec>& in) {
  const int arity = expected_arity(node);
  if (arity >= 0 && static_cast<int>(in.size()) != arity) {
    fail(ErrorCode::kArityError, node,
         "expects " + std::to_string(arity) + " inputs, got " + std::to_string(in.size()));
  }
  switch (node.op) {
    case OpType::kConst: {
      const Tensor* v = node.attr_tensor("value");
      if (v == nullptr) fail(ErrorCode::kInvalidGraph, node, "Const without a value");
      return {spec_of(*v)};
    }
    case OpType::kIdentity:
    case OpType::kEnter:
    case OpType::kExit:
    case OpType::kNextIteration:
      return {in[0]};
    case OpType::kAdd:
    case OpType::kSub:
    case OpType::kMul:
      require_numeric(node, in[0]);
      require_same(node, in[0], in[1]);
      return {TensorSpec{in[0].dtype, broadcast(node, in[0], in[1]), std::nullopt}};
    case OpType::kNeg:
      require_numeric(node, in[0]);
      return {TensorSpec{in[0].dtype, in[0].shape, std::nullopt}};
    case OpType::kMatMul: {
      require_numeric(node, in[0]);
      require_same(node, in[0], in[1]);
      Shape out{-1, -1};
      for (int i = 0; i < 2; ++i) {
        if (in[i].shape && in[i].shape->size() != 2) fail(ErrorCode::kShapeMismatch, node, "operand " + in[i].str() + " is not a matrix");
      }
      if (in[0].shape && in[1].shape) {
        const auto k0 = (*in[0].shape)[1], k1 = (*in[1].shape)[0];
        if (k0 >= 0 && k1 >= 0 && k0 != k1) fail(ErrorCode::kShapeMismatch, node, "inner extents " + in[0].str() + " x " + in[1].str());
      }
      if (in[0].shape) out[0] = (*in[0].shape)[0];
      if (in[1].shape) out[1] = (*in[1].shape)[1];
      return {TensorSpec{in[0].dtype, out, std::nullopt}};
    }
    case OpType::kTranspose: {
      TensorSpec out{in[0].dtype, in[0].shape, std::nullopt};
      if (out.shape && out.shape->size() == 2) std::swap((*out.shape)[0], (*out.shape)[1]);
      if (out.shape && out.shape->size() > 2) fail(ErrorCode::kShapeMismatch, node, "rank above 2");
      return {out};
    }
    case OpType::kReduceSumAll:
      require_numeric(node, in[0]);
      return {scalar_spec(in[0].dtype)};
    case OpType::kFill:
      require_dtype(node, in[0], DType::kInt64, "shape");
      if (in[1].shape && !in[1].shape->empty()) fail(ErrorCode::kShapeMismatch, node, "value must be a scalar");
      return {TensorSpec{in[1].dtype, shape_from_value(in[0]), std::nullopt}};
    case OpType::kLess:
    case OpType::kLessEqual:
      require_numeric(node, in[0]);
      require_same(node, in[0], in[1]);
      return {TensorSpec{DType::kBool, broadcast(node, in[0], in[1]), std::nullopt}};
    case OpType::kEqual:
      require_same(node, in[0], in[1]);
      return {TensorSpec{DType::kBool, broadcast(node, in[0], in[1]), std::nullopt}};
    case OpType::kLogicalAnd:
      require_dtype(node, in[0], DType::kBool, "operand");
      require_dtype(node, in[1], DType::kBool, "operand");
      return {TensorSpec{DType::kBool, broadcast(node, in[0], in[1]), std::nullopt}};
    case OpType::kLogicalNot:
      require_dtype(node, in[0], DType::kBool, "operand");
      return {TensorSpec{DType::kBool, in[0].shape, std::nullopt}};
    case OpType::kShape: {
      TensorSpec out{DType::kInt64, Shape{-1}, std::nullopt};
      if (in[0].shape) out.shape = Shape{static_cast<std::int64_t>(in[0].shape->size())};
      if (in[0].fully_known()) {
        out.value = Tensor::i64({static_cast<std::int64_t>(in[0].shape->size())}, *in[0].shape);
      }
      return {out};
    }
    case OpType::kSize:
      return {scalar_spec(DType::kInt64)};
    case OpType::kSumToShape:
      require_numeric(node, in[0]);
      require_dtype(node, in[1], DType::kInt64, "shape");
      return {TensorSpec{in[0].dtype, shape_from_value(in[1]), std::nullopt}};
    case OpType::kPlaceholder: {
      auto dtype = node.attr_dtype("dtype");
      if (!dtype) fail(ErrorCode::kInvalidGraph, node, "Placeholder without dtype");
      return {TensorSpec{*dtype, attr_shape(node, "shape"), std::nullopt}};
    }
    case OpType::kSwitch:
      require_dtype(node, in[1], DType::kBool, "predicate");
      if (in[1].shape && !in[1].shape->empty()) fail(ErrorCode::kShapeMismatch, node, "predicate must be a scalar");
      return {in[0], in[0]};
    case OpType::kMerge:
      require_same(node, in[0], in[1]);
      return {merge_specs(in[0], in[1])};
    case OpType::kSend:
      return {};
    case OpType::kRecv: {
      auto dtype = node.attr_dtype("dtype");
      if (!dtype) fail(ErrorCode::kInvalidGraph, node, "Recv without dtype");
      return {TensorSpec{*dtype, attr_shape(node, "shape"), std::nullopt}};
    }
    case OpType::kStackPush:
      if (in.empty()) fail(ErrorCode::kArityError, node, "StackPush needs a value");
      for (std::size_t i = 1; i < in.size(); ++i) require_dtype(node, in[i], DType::kInt64, "index");
      return {in[0]};
    case OpType::kStackPop: {
      for (const auto& s : in) require_dtype(node, s, DType::kInt64, "index");
      auto dtype = node.attr_dtype("dtype");
      if (!dtype) fail(ErrorCode::kInvalidGraph, node, "StackPop without dtype");
      return {TensorSpec{*dtype, attr_shape(node, "shape"), std::nullopt}};
    }
    case OpType::kTensorArrayNew:
      if (in.size() > 1) fail(ErrorCode::kArityError, node, "at most one size input");
      if (in.size() == 1) require_dtype(node, in[0], DType::kInt64, "size");
      return {scalar_spec(DType::kInt64), scalar_spec(DType::kFloat64)};
    case OpType::kTensorArrayWrite:
      require_dtype(node, in[0], DType::kInt64, "handle");
      require_dtype(node, in[1], DType::kInt64, "index");
      require_dtype(node, in[3], DType::kFloat64, "flow");
      return {scalar_spec(DType::kFloat64)};
    case OpType::kTensorArrayRead: {
      require_dtype(node, in[0], DType::kInt64, "handle");
      require_dtype(node, in[1], DType::kInt64, "index");
      auto dtype = node.attr_dtype("dtype");
      if (!dtype) fail(ErrorCode::kInvalidGraph, node, "read without dtype");
      return {TensorSpec{*dtype, attr_shape(node, "element_shape"), std::nullopt}};
    }
    case OpType::kTensorArrayUnstack:
      require_dtype(node, in[0], DType::kInt64, "handle");
      if (in[1].shape && in[1].shape->empty()) fail(ErrorCode::kShapeMismatch, node, "cannot unstack a scalar");
      return {scalar_spec(DType::kFloat64)};
    case OpType::kTensorArrayStack: {
      require_dtype(node, in[0], DType::kInt64, "handle");
      auto dtype = node.attr_dtype("dtype");
      if (!dtype) fail(ErrorCode::kInvalidGraph, node, "stack without dtype");
      std::optional<Shape> shape;
      if (auto elem = attr_shape(node, "element_shape")) {
        shape = Shape{-1};
        shape->insert(shape->end(), elem->begin(), elem->end());
      }
      return {TensorSpec{*dtype, shape, std::nullopt}};
    }
    case OpType::kTensorArraySize:
      require_dtype(node, in[0], DType::kInt64, "handle");
      return {scalar_spec(DType::kInt64)};
    case OpType::kTensorArrayGrad:
      require_dtype(node, in[0], DType::kInt64, "handle");
      return {scalar_spec(DType::kInt64), scalar_spec(DType::kFloat64)};
  }
  fail(ErrorCode::kInternal, node, "unhandled op");
}

const TensorSpec* GraphSpecs::find(const Port& port) const {
  auto it = outputs.find(port.node);
  if (it == outputs.end() || port.index < 0 || port.index >= static_cast<int>(it->second.size())) {
    return nullptr;
  }
  return &it->second[port.index];
}

namespace {

bool same_spec(const std::vector<TensorSpec>& a, const std::vector<TensorSpec>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].dtype != b[i].dtype || a[i].shape != b[i].shape) return false;
    if (a[i].value.has_value() != b[i].value.has_value()) return false;
  }
  return true;
}

}  // namespace

GraphSpecs infer_graph(const GraphDef& graph) {
  GraphSpecs out;
  std::unordered_map<std::string, std::string> failures;
  const std::size_t max_passes = graph.size() + 4;
  for (std::size_t pass = 0; pass < max_passes; ++pass) {
    bool changed = false;
    for (const NodeDef& node : graph.nodes()) {
      std::vector<TensorSpec> in;
      bool ready = true;
      for (const Port& p : node.inputs) {
        const TensorSpec* s = out.find(p);
        if (s == nullptr) {
          ready = false;
          break;
        }
        in.push_back(*s);
      }
      if (!ready && node.op == OpType::kMerge) {
        // A loop merge is typed by whichever input is known so far.
        const TensorSpec* known = nullptr;
        for (const Port& p : node.inputs) {
          if ((known = out.find(p))) break;
        }
        if (known == nullptr) continue;
        in.assign(node.inputs.size(), *known);
        ready = true;
      }
      if (!ready) continue;
      try {
        auto specs = infer_outputs(node, in);
        auto it = out.outputs.find(node.id);
        if (it == out.outputs.end() || !same_spec(it->second, specs)) {
          if (it != out.outputs.end() && node.op == OpType::kMerge) {
            // Only ever relax a merge, so the iteration terminates.
            for (std::size_t i = 0; i < specs.size(); ++i) specs[i] = merge_specs(it->second[i], specs[i]);
            if (same_spec(it->second, specs)) continue;
          }
          out.outputs[node.id] = std::move(specs);
          changed = true;
        }
        failures.erase(node.id);
      } catch (const Error& e) {
        failures[node.id] = e.what();
      }
    }
    if (!changed) break;
  }
  for (const NodeDef& node : graph.nodes()) {
    auto it = failures.find(node.id);
    if (it != failures.end()) out.errors.emplace_back(node.id, it->second);
  }
  return out;
}

}  // namespace loomflow
