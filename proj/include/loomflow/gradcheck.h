// Copyright 2026 The Loomflow Authors
// SPDX-License-Identifier: Apache-2.0

// Checks symbolic gradients against central differences.

#ifndef LOOMFLOW_GRADCHECK_H_
#define LOOMFLOW_GRADCHECK_H_

#include <map>
#include <string>
#include <vector>

#include "loomflow/autodiff.h"
#include "loomflow/executor.h"
#include "loomflow/graph.h"
#include "loomflow/tensor.h"

namespace loomflow {

// Relative error with a floor on the scale, so that gradients near zero are
// compared absolutely.
inline constexpr double kRelativeErrorFloor = 1e-2;
double relative_error(double symbolic, double numeric);

// d(y)/d(feed) for each named float64 feed, flattened in `wrt` order.
std::vector<double> numeric_gradient(const GraphDef& graph, const Port& y, const std::map<std::string, Tensor>& feeds,
                                     const std::vector<std::string>& wrt, double step = 1e-6,
                                     const RunOptions& options = {});

// Symbolic gradients built on a copy of `graph`, flattened the same way.
std::vector<double> symbolic_gradient(const GraphDef& graph, const Port& y, const std::map<std::string, Tensor>& feeds,
                                      const std::vector<std::string>& wrt, const RunOptions& options = {});

struct GradientComparison {
  std::vector<double> symbolic;
  std::vector<double> numeric;
  // One entry per name in `wrt`.
  std::vector<double> max_relative_error_per_x;
  double max_relative_error = 0;
};

GradientComparison compare_gradients(const GraphDef& graph, const Port& y, const std::map<std::string, Tensor>& feeds,
                                     const std::vector<std::string>& wrt, double step = 1e-6);

// When y depends on x only through ops without gradients (comparisons,
// shape queries, Switch predicates), the ids of those ops; otherwise empty.
std::vector<std::string> non_differentiable_path(const GraphDef& graph, const Port& y, const std::string& x,
                                                 const GradientRegistry& registry = GradientRegistry::standard());

}  // namespace loomflow

#endif  // LOOMFLOW_GRADCHECK_H_
