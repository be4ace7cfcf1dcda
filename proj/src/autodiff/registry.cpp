// Copyright 2026 The Loomflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "loomflow/autodiff.h"
#include "loomflow/errors.h"

namespace loomflow {

void GradientRegistry::add(OpType op, GradFn fn) {
  non_differentiable_.erase(op);
  fns_[op] = std::move(fn);
}

void GradientRegistry::mark_non_differentiable(OpType op) {
  fns_.erase(op);
  non_differentiable_[op] = true;
}

const GradFn* GradientRegistry::find(OpType op) const {
  auto it = fns_.find(op);
  return it == fns_.end() ? nullptr : &it->second;
}

bool GradientRegistry::is_non_differentiable(OpType op) const { return non_differentiable_.count(op) != 0; }

namespace {

bool same_known_shape(const TensorSpec& a, const TensorSpec& b) {
  return a.shape && b.shape && a.fully_known() && b.fully_known() && *a.shape == *b.shape;
}

// `grad` (shaped like the output) reduced to the shape of input i, undoing
// a scalar broadcast.
SymbolicTensor unbroadcast(GradOpContext& ctx, const SymbolicTensor& grad, int i) {
  const TensorSpec& in = ctx.input_spec(i);
  const TensorSpec& out = ctx.output_spec(0);
  if (same_known_shape(in, out)) return grad;
  if (in.is_scalar() && out.shape && !out.shape->empty()) return ctx.builder.reduce_sum(grad);
  return ctx.builder.sum_to_shape(grad, ctx.input_shape(i));
}

AttrMap element_attrs(const TensorSpec& element) {
  AttrMap attrs{{"dtype", element.dtype}};
  if (element.shape) attrs["element_shape"] = *element.shape;
  return attrs;
}

Tensors grad_array(GradOpContext& ctx, const SymbolicTensor& handle, const SymbolicTensor& flow) {
  return ctx.builder.op(OpType::kTensorArrayGrad, {handle, flow}, {{"source", ctx.source}});
}

GradientRegistry make_standard() {
  GradientRegistry r;
  for (OpType op : {OpType::kConst, OpType::kPlaceholder, OpType::kLess, OpType::kLessEqual, OpType::kEqual,
                    OpType::kLogicalAnd, OpType::kLogicalNot, OpType::kShape, OpType::kSize,
                    OpType::kTensorArrayNew, OpType::kTensorArraySize, OpType::kTensorArrayGrad}) {
    r.mark_non_differentiable(op);
  }

  r.add(OpType::kIdentity, [](GradOpContext& ctx) { return OptionalTensors{ctx.upstream[0]}; });
  r.add(OpType::kAdd, [](GradOpContext& ctx) {
    const auto& g = *ctx.upstream[0];
    return OptionalTensors{unbroadcast(ctx, g, 0), unbroadcast(ctx, g, 1)};
  });
  r.add(OpType::kSub, [](GradOpContext& ctx) {
    const auto& g = *ctx.upstream[0];
    return OptionalTensors{unbroadcast(ctx, g, 0), unbroadcast(ctx, ctx.builder.neg(g), 1)};
  });
  r.add(OpType::kMul, [](GradOpContext& ctx) {
    auto& b = ctx.builder;
    const auto& g = *ctx.upstream[0];
    return OptionalTensors{unbroadcast(ctx, b.mul(g, ctx.input(1)), 0), unbroadcast(ctx, b.mul(g, ctx.input(0)), 1)};
  });
  r.add(OpType::kNeg, [](GradOpContext& ctx) { return OptionalTensors{ctx.builder.neg(*ctx.upstream[0])}; });
  r.add(OpType::kMatMul, [](GradOpContext& ctx) {
    auto& b = ctx.builder;
    const auto& g = *ctx.upstream[0];
    return OptionalTensors{b.matmul(g, b.transpose(ctx.input(1))), b.matmul(b.transpose(ctx.input(0)), g)};
  });
  r.add(OpType::kTranspose, [](GradOpContext& ctx) { return OptionalTensors{ctx.builder.transpose(*ctx.upstream[0])}; });
  r.add(OpType::kReduceSumAll, [](GradOpContext& ctx) {
    return OptionalTensors{ctx.builder.fill(ctx.input_shape(0), *ctx.upstream[0])};
  });
  r.add(OpType::kFill, [](GradOpContext& ctx) {
    return OptionalTensors{std::nullopt, ctx.builder.reduce_sum(*ctx.upstream[0])};
  });
  r.add(OpType::kSumToShape, [](GradOpContext& ctx) {
    auto& b = ctx.builder;
    // The upstream gradient is either shaped like the input or one element.
    SymbolicTensor zeros = b.fill(ctx.input_shape(0), b.scalar(0.0));
    return OptionalTensors{b.add(zeros, *ctx.upstream[0]), std::nullopt};
  });
  // Merges outside any cond route a branch value to an enclosing context;
  // both inputs name the same port.
  r.add(OpType::kMerge, [](GradOpContext& ctx) {
    if (ctx.node.inputs.size() != 2 || ctx.node.inputs[0] != ctx.node.inputs[1]) {
      throw Error(ErrorCode::kNoGradient, "Merge outside a cond or loop has no gradient", ctx.node.id);
    }
    return OptionalTensors{ctx.upstream[0], std::nullopt};
  });
  r.add(OpType::kStackPush, [](GradOpContext& ctx) {
    OptionalTensors out(ctx.node.inputs.size());
    out[0] = ctx.upstream[0];
    return out;
  });

  // TensorArrays: reads and writes swap roles on the gradient array, which
  // sums repeated writes to one cell.
  r.add(OpType::kTensorArrayRead, [](GradOpContext& ctx) {
    auto& b = ctx.builder;
    Tensors ga = grad_array(ctx, ctx.input(0), ctx.input(2));
    SymbolicTensor flow = b.op1(OpType::kTensorArrayWrite, {ga[0], ctx.input(1), *ctx.upstream[0], ga[1]});
    return OptionalTensors{std::nullopt, std::nullopt, flow};
  });
  r.add(OpType::kTensorArrayWrite, [](GradOpContext& ctx) {
    auto& b = ctx.builder;
    const SymbolicTensor& flow = *ctx.upstream[0];
    Tensors ga = grad_array(ctx, ctx.input(0), flow);
    SymbolicTensor value =
        b.op1(OpType::kTensorArrayRead, {ga[0], ctx.input(1), ga[1]}, element_attrs(ctx.input_spec(2)));
    return OptionalTensors{std::nullopt, std::nullopt, value, flow};
  });
  r.add(OpType::kTensorArrayUnstack, [](GradOpContext& ctx) {
    auto& b = ctx.builder;
    const SymbolicTensor& flow = *ctx.upstream[0];
    Tensors ga = grad_array(ctx, ctx.input(0), flow);
    TensorSpec element = ctx.input_spec(1);
    if (element.shape) element.shape = Shape(element.shape->begin() + 1, element.shape->end());
    SymbolicTensor value = b.op1(OpType::kTensorArrayStack, {ga[0], ga[1]}, element_attrs(element));
    return OptionalTensors{std::nullopt, value, flow};
  });
  r.add(OpType::kTensorArrayStack, [](GradOpContext& ctx) {
    auto& b = ctx.builder;
    Tensors ga = grad_array(ctx, ctx.input(0), ctx.input(1));
    SymbolicTensor flow = b.op1(OpType::kTensorArrayUnstack, {ga[0], *ctx.upstream[0], ga[1]});
    return OptionalTensors{std::nullopt, flow};
  });
  return r;
}

}  // namespace

const GradientRegistry& GradientRegistry::standard() {
  static const GradientRegistry registry = make_standard();
  return registry;
}

}  // namespace loomflow
