// Copyright 2026 The Loomflow Authors
// SPDX-License-Identifier: Apache-2.0

// Reverse-mode gradients for graphs with conditionals, loops and
// TensorArrays. Gradients are added to the same graph as new nodes.
//
// Conditionals and loops are differentiated as whole constructs: a cond
// gets a gradient cond on the same predicate, and a loop gets a gradient
// loop that runs the body gradient as many times as the forward loop ran,
// last iteration first. Forward values that a loop gradient needs are
// pushed on a stack by the forward loop and popped by the gradient loop.

#ifndef LOOMFLOW_AUTODIFF_H_
#define LOOMFLOW_AUTODIFF_H_

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "loomflow/builder.h"
#include "loomflow/graph.h"

namespace loomflow {

using OptionalTensors = std::vector<std::optional<SymbolicTensor>>;

// What a gradient function sees of one forward node. Forward values are
// only reachable through input()/output()/input_shape(), which make them
// visible in the gradient context (saving them on stacks where needed).
struct GradOpContext {
  GraphBuilder& builder;
  const NodeDef& node;
  // Gradient flowing into each output; nullopt when none does.
  const OptionalTensors& upstream;
  // Identifies this gradient computation; used for TensorArray gradients.
  const std::string& source;

  std::function<SymbolicTensor(int)> input;
  std::function<SymbolicTensor(int)> output;
  // int64 shape of input i.
  std::function<SymbolicTensor(int)> input_shape;
  std::function<const TensorSpec&(int)> input_spec;
  std::function<const TensorSpec&(int)> output_spec;
};

// Returns one entry per data input of the node: its gradient, or nullopt.
using GradFn = std::function<OptionalTensors(GradOpContext&)>;

class GradientRegistry {
 public:
  void add(OpType op, GradFn fn);
  void mark_non_differentiable(OpType op);

  const GradFn* find(OpType op) const;
  bool is_non_differentiable(OpType op) const;

  // Gradients for every differentiable kernel, TensorArray and stack op.
  static const GradientRegistry& standard();

 private:
  std::map<OpType, GradFn> fns_;
  std::map<OpType, bool> non_differentiable_;
};

// Adds d(y)/d(x) for each x to `graph` and returns the gradient ports, in
// order. `y` must be a float64 scalar in the root context and each x a
// float64 tensor in the root context. An x that y does not depend on gets
// zeros. Throws NonScalarObjective, NoGradient (an op on the path has no
// registered gradient), or InvalidGraph.
std::vector<Port> gradients(GraphDef& graph, const Port& y, const std::vector<Port>& xs,
                            const GradientRegistry& registry = GradientRegistry::standard());

}  // namespace loomflow

#endif  // LOOMFLOW_AUTODIFF_H_
