// Copyright 2026 The Loomflow Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef LOOMFLOW_VALIDATE_H_
#define LOOMFLOW_VALIDATE_H_

#include <string>
#include <vector>

#include "loomflow/graph.h"

namespace loomflow {

enum class ViolationKind {
  kDanglingInput,
  kArity,
  kIllegalCycle,
  kMissingFrameName,
  kContextNesting,
  kFrameMismatch,
  kDtype,
  kNoTrigger,
  kBadContext,
};

std::string_view violation_kind_name(ViolationKind kind);

struct Violation {
  ViolationKind kind;
  std::string node;
  std::string message;

  std::string str() const;
};

// Returns every structural problem found; an empty list means the graph is
// well formed. Never throws.
std::vector<Violation> validate(const GraphDef& graph);

// Convenience wrapper that throws InvalidGraph listing all violations.
void check_valid(const GraphDef& graph);

// Frame (innermost while context, 0 for root) whose iterations a value on
// `port` belongs to. An Exit's output belongs to the loop's parent frame.
int output_frame(const GraphDef& graph, const Port& port);
// Frame in which `node` consumes its inputs. For an Enter this is the frame
// enclosing its loop.
int input_frame(const GraphDef& graph, const NodeDef& node);

}  // namespace loomflow

#endif  // LOOMFLOW_VALIDATE_H_
