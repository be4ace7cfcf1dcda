// Copyright 2026 The Loomflow Authors
// SPDX-License-Identifier: Apache-2.0

// JSON text form of graphs and tensor literals. Tensors are encoded as
// {"dtype": "float64", "shape": [2], "data": [1, 2]} everywhere: graph
// attributes, feeds on the command line and test fixtures.

#ifndef LOOMFLOW_GRAPH_JSON_H_
#define LOOMFLOW_GRAPH_JSON_H_

#include <string>
#include <string_view>

#include "json.hpp"
#include "loomflow/graph.h"
#include "loomflow/tensor.h"

namespace loomflow {

nlohmann::json tensor_to_json(const Tensor& t);
// Throws ParseError.
Tensor tensor_from_json(const nlohmann::json& j);
Tensor parse_tensor_literal(std::string_view text);

nlohmann::json graph_to_json_value(const GraphDef& graph);
std::string graph_to_json(const GraphDef& graph);
// Throws ParseError for malformed documents and the add_node errors for
// structurally broken ones.
GraphDef graph_from_json(std::string_view text);

GraphDef load_graph(const std::string& path);
void save_graph(const GraphDef& graph, const std::string& path);

}  // namespace loomflow

#endif  // LOOMFLOW_GRAPH_JSON_H_
