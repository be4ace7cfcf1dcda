// Copyright 2026 The Loomflow Authors
// SPDX-License-Identifier: Apache-2.0

// Static dtype and shape propagation. Extents of -1 are unknown; an absent
// shape means the rank is unknown too.

#ifndef LOOMFLOW_INFER_H_
#define LOOMFLOW_INFER_H_

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "loomflow/graph.h"
#include "loomflow/tensor.h"

namespace loomflow {

struct TensorSpec {
  DType dtype = DType::kFloat64;
  std::optional<Shape> shape;
  // Known value for small constants (Const outputs and Shape of a fully
  // known tensor); lets Fill and SumToShape resolve their result shape.
  std::optional<Tensor> value;

  bool fully_known() const;
  bool is_scalar() const { return shape && shape->empty(); }
  std::string str() const;
};

TensorSpec spec_of(const Tensor& t);
TensorSpec unknown_spec(DType dtype);
// Most specific spec compatible with both.
TensorSpec merge_specs(const TensorSpec& a, const TensorSpec& b);

// Expected number of data inputs; -1 for variadic ops.
int expected_arity(const NodeDef& node);

// Output specs of one node. Throws ArityError, DtypeMismatch or
// ShapeMismatch for conflicts visible at build time.
std::vector<TensorSpec> infer_outputs(const NodeDef& node, const std::vector<TensorSpec>& inputs);

struct GraphSpecs {
  std::unordered_map<std::string, std::vector<TensorSpec>> outputs;
  // (node id, message) for every node whose inputs conflict.
  std::vector<std::pair<std::string, std::string>> errors;

  const TensorSpec* find(const Port& port) const;
};

// Propagates specs over the whole graph, including through loop back-edges.
GraphSpecs infer_graph(const GraphDef& graph);

}  // namespace loomflow

#endif  // LOOMFLOW_INFER_H_
