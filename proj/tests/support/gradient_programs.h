// Copyright 2026 The Loomflow Authors
// SPDX-License-Identifier: Apache-2.0

// Small randomized programs, one family per construct, for gradient checks.

#ifndef LOOMFLOW_TESTS_SUPPORT_GRADIENT_PROGRAMS_H_
#define LOOMFLOW_TESTS_SUPPORT_GRADIENT_PROGRAMS_H_

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "loomflow/graph.h"
#include "loomflow/tensor.h"

namespace loomflow::testing {

struct GradientProgram {
  GraphDef graph;
  Port y;
  std::map<std::string, Tensor> feeds;
  std::vector<std::string> wrt;
};

enum class Family { kChain, kCond, kWhile, kNestedWhile, kCondInWhile, kTensorArray, kScan };

inline constexpr Family kAllFamilies[] = {Family::kChain,       Family::kCond,        Family::kWhile,
                                          Family::kNestedWhile, Family::kCondInWhile, Family::kTensorArray,
                                          Family::kScan};

const char* family_name(Family family);

// Inputs are drawn uniformly from [0.5, 1.5].
GradientProgram gradient_program(Family family, std::uint64_t seed);

}  // namespace loomflow::testing

#endif  // LOOMFLOW_TESTS_SUPPORT_GRADIENT_PROGRAMS_H_
