// Copyright 2026 The Loomflow Authors
// SPDX-License-Identifier: Apache-2.0

// Small fixed programs shared by several suites.

#ifndef LOOMFLOW_TESTS_SUPPORT_PROGRAMS_H_
#define LOOMFLOW_TESTS_SUPPORT_PROGRAMS_H_

#include <cstdint>
#include <map>
#include <string>

#include "loomflow/distrib.h"
#include "loomflow/graph.h"
#include "loomflow/tensor.h"

namespace loomflow::testing {

inline Tensor mat11(double v) { return Tensor::f64({1, 1}, {v}); }

// a <- matmul(a, w) for `trips` iterations on 1x1 matrices, starting from
// x; y = reduce_sum(a). Node ids: "x", "w", "a" (the loop result), "y".
// The loop context is "loop", with "loop/step_pred" and "loop/matmul".
struct MatmulLoop {
  GraphDef graph;
  Port y;
  Port a;
  Port x;
  Port w;
  int loop = -1;
};

MatmulLoop matmul_loop(std::int64_t trips, int parallel_iterations = 32);
// The same computation with the loop unrolled.
MatmulLoop matmul_unrolled(std::int64_t trips);

std::map<std::string, Tensor> matmul_feeds(double x = 2, double w = 3);

// Every node on a device picked at random from `devices`.
Placement random_placement(const GraphDef& graph, int devices, std::uint64_t seed);

}  // namespace loomflow::testing

#endif  // LOOMFLOW_TESTS_SUPPORT_PROGRAMS_H_
