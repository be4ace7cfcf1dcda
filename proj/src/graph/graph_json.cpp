// Copyright 2026 The Loomflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "loomflow/graph_json.h"

#include <cmath>
#include <fstream>
#include <sstream>

#include "loomflow/errors.h"

namespace loomflow {

using nlohmann::json;

namespace {

[[noreturn]] void parse_error(const std::string& msg) { throw Error(ErrorCode::kParseError, msg); }

json double_to_json(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

double double_from_json(const json& j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "nan") return std::nan("");
    if (s == "inf") return INFINITY;
    if (s == "-inf") return -INFINITY;
  }
  parse_error("expected a number, got " + j.dump());
}

const json& field(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) parse_error(std::string("missing field \"") + key + "\"");
  return j.at(key);
}

template <typename T>
T get_as(const json& j, const char* what) {
  try {
    return j.get<T>();
  } catch (const json::exception&) {
    parse_error(std::string("bad ") + what + ": " + j.dump());
  }
}

json attr_to_json(const AttrValue& v) {
  return std::visit(
      [](const auto& x) -> json {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, std::int64_t>) {
          return {{"i", x}};
        } else if constexpr (std::is_same_v<T, double>) {
          return {{"f", double_to_json(x)}};
        } else if constexpr (std::is_same_v<T, bool>) {
          return {{"b", x}};
        } else if constexpr (std::is_same_v<T, std::string>) {
          return {{"s", x}};
        } else if constexpr (std::is_same_v<T, Tensor>) {
          return {{"tensor", tensor_to_json(x)}};
        } else if constexpr (std::is_same_v<T, std::vector<std::int64_t>>) {
          return {{"list_i", x}};
        } else {
          return {{"dtype", std::string(dtype_name(x))}};
        }
      },
      v);
}

AttrValue attr_from_json(const json& j) {
  if (!j.is_object() || j.size() != 1) parse_error("attr must be a one-key object: " + j.dump());
  const auto& [key, val] = *j.items().begin();
  if (key == "i") return get_as<std::int64_t>(val, "int attr");
  if (key == "f") return double_from_json(val);
  if (key == "b") return get_as<bool>(val, "bool attr");
  if (key == "s") return get_as<std::string>(val, "string attr");
  if (key == "tensor") return tensor_from_json(val);
  if (key == "list_i") return get_as<std::vector<std::int64_t>>(val, "int list attr");
  if (key == "dtype") {
    auto d = dtype_from_name(get_as<std::string>(val, "dtype attr"));
    if (!d) parse_error("unknown dtype " + val.dump());
    return *d;
  }
  parse_error("unknown attr kind " + key);
}

json port_to_json(const Port& p) { return p.str(); }

Port port_from_json(const json& j) { return Port::parse(get_as<std::string>(j, "port")); }

json node_to_json(const NodeDef& n) {
  json attrs = json::object();
  for (const auto& [k, v] : n.attrs) attrs[k] = attr_to_json(v);
  json inputs = json::array();
  for (const auto& p : n.inputs) inputs.push_back(port_to_json(p));
  return {{"id", n.id},
          {"op", std::string(op_name(n.op))},
          {"attrs", attrs},
          {"inputs", inputs},
          {"control_inputs", n.control_inputs},
          {"context", n.context},
          {"device", n.device}};
}

json context_to_json(const ContextDef& c) {
  json j = {{"id", c.id}, {"kind", std::string(context_kind_name(c.kind))}, {"parent", c.parent}};
  if (c.kind == ContextKind::kCond) {
    j["cond_group"] = c.cond_group;
    j["branch"] = c.branch;
  }
  if (c.kind == ContextKind::kWhile) {
    j["frame_name"] = c.frame_name;
    j["parallel_iterations"] = c.parallel_iterations;
    json vars = json::array();
    for (const auto& v : c.loop_vars) {
      vars.push_back({{"enter", v.enter},
                      {"merge", v.merge},
                      {"switch", v.switch_node},
                      {"exit", v.exit},
                      {"identity", v.identity},
                      {"next_iteration", v.next_iteration}});
    }
    j["loop_vars"] = vars;
    j["constant_enters"] = c.constant_enters;
    j["pred"] = port_to_json(c.pred);
  }
  return j;
}

ContextDef context_from_json(const json& j) {
  ContextDef c;
  c.id = get_as<int>(field(j, "id"), "context id");
  const auto kind = get_as<std::string>(field(j, "kind"), "context kind");
  if (kind == "root") {
    c.kind = ContextKind::kRoot;
  } else if (kind == "cond") {
    c.kind = ContextKind::kCond;
  } else if (kind == "while") {
    c.kind = ContextKind::kWhile;
  } else {
    parse_error("unknown context kind " + kind);
  }
  c.parent = get_as<int>(field(j, "parent"), "context parent");
  if (c.kind == ContextKind::kCond) {
    c.cond_group = get_as<int>(field(j, "cond_group"), "cond group");
    c.branch = get_as<bool>(field(j, "branch"), "branch");
  }
  if (c.kind == ContextKind::kWhile) {
    c.frame_name = get_as<std::string>(field(j, "frame_name"), "frame name");
    c.parallel_iterations = get_as<int>(field(j, "parallel_iterations"), "parallel_iterations");
    for (const auto& v : field(j, "loop_vars")) {
      c.loop_vars.push_back(LoopVarDef{get_as<std::string>(field(v, "enter"), "enter"),
                                       get_as<std::string>(field(v, "merge"), "merge"),
                                       get_as<std::string>(field(v, "switch"), "switch"),
                                       get_as<std::string>(field(v, "exit"), "exit"),
                                       get_as<std::string>(field(v, "identity"), "identity"),
                                       get_as<std::string>(field(v, "next_iteration"), "next_iteration")});
    }
    c.constant_enters = get_as<std::vector<std::string>>(field(j, "constant_enters"), "constant enters");
    c.pred = port_from_json(field(j, "pred"));
  }
  return c;
}

json cond_to_json(const CondGroupDef& g) {
  return {{"id", g.id},
          {"parent", g.parent},
          {"pred", port_to_json(g.pred)},
          {"true_context", g.true_context},
          {"false_context", g.false_context},
          {"pivot_switch", g.pivot_switch},
          {"switches", g.switches},
          {"merges", g.merges}};
}

CondGroupDef cond_from_json(const json& j) {
  CondGroupDef g;
  g.id = get_as<int>(field(j, "id"), "cond id");
  g.parent = get_as<int>(field(j, "parent"), "cond parent");
  g.pred = port_from_json(field(j, "pred"));
  g.true_context = get_as<int>(field(j, "true_context"), "true context");
  g.false_context = get_as<int>(field(j, "false_context"), "false context");
  g.pivot_switch = get_as<std::string>(field(j, "pivot_switch"), "pivot switch");
  g.switches = get_as<std::vector<std::string>>(field(j, "switches"), "switches");
  g.merges = get_as<std::vector<std::string>>(field(j, "merges"), "merges");
  return g;
}

}  // namespace

json tensor_to_json(const Tensor& t) {
  json data = json::array();
  for (std::int64_t i = 0; i < t.num_elements(); ++i) {
    switch (t.dtype()) {
      case DType::kFloat64: data.push_back(double_to_json(t.f64_data()[i])); break;
      case DType::kInt64: data.push_back(t.i64_data()[i]); break;
      case DType::kBool: data.push_back(t.bool_data()[i] != 0); break;
    }
  }
  return {{"dtype", std::string(dtype_name(t.dtype()))}, {"shape", t.shape()}, {"data", data}};
}

Tensor tensor_from_json(const json& j) {
  const auto dname = get_as<std::string>(field(j, "dtype"), "dtype");
  auto dtype = dtype_from_name(dname);
  if (!dtype) parse_error("unknown dtype " + dname);
  auto shape = get_as<Shape>(field(j, "shape"), "shape");
  const json& data = field(j, "data");
  if (!data.is_array()) parse_error("tensor data must be an array");
  try {
    switch (*dtype) {
      case DType::kFloat64: {
        std::vector<double> v;
        for (const auto& x : data) v.push_back(double_from_json(x));
        return Tensor::f64(std::move(shape), std::move(v));
      }
      case DType::kInt64:
        return Tensor::i64(std::move(shape), get_as<std::vector<std::int64_t>>(data, "int64 data"));
      case DType::kBool: {
        std::vector<std::uint8_t> v;
        for (const auto& x : data) v.push_back(get_as<bool>(x, "bool element") ? 1 : 0);
        return Tensor::boolean(std::move(shape), std::move(v));
      }
    }
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kParseError) throw;
    parse_error(e.what());
  }
  parse_error("unreachable dtype");
}

Tensor parse_tensor_literal(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    parse_error(std::string("tensor literal: ") + e.what());
  }
  // Bare numbers are accepted as float64 scalars, bare integers as int64.
  if (j.is_number_integer()) return Tensor::scalar_int(j.get<std::int64_t>());
  if (j.is_number()) return Tensor::scalar(j.get<double>());
  if (j.is_boolean()) return Tensor::scalar_bool(j.get<bool>());
  return tensor_from_json(j);
}

json graph_to_json_value(const GraphDef& graph) {
  json nodes = json::array();
  for (const auto& n : graph.nodes()) nodes.push_back(node_to_json(n));
  json outputs = json::array();
  for (const auto& p : graph.outputs()) outputs.push_back(port_to_json(p));
  json contexts = json::array();
  for (const auto& c : graph.contexts()) contexts.push_back(context_to_json(c));
  json conds = json::array();
  for (const auto& g : graph.cond_groups()) conds.push_back(cond_to_json(g));
  return {{"version", 1}, {"nodes", nodes}, {"outputs", outputs}, {"contexts", contexts}, {"conds", conds}};
}

std::string graph_to_json(const GraphDef& graph) { return graph_to_json_value(graph).dump(2) + "\n"; }

GraphDef graph_from_json(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    parse_error(std::string("graph document: ") + e.what());
  }
  if (get_as<int>(field(doc, "version"), "version") != 1) parse_error("unsupported graph version");
  GraphDef graph;
  if (doc.contains("contexts")) {
    for (const auto& cj : doc.at("contexts")) {
      ContextDef c = context_from_json(cj);
      if (c.kind == ContextKind::kRoot) {
        if (c.id != 0) parse_error("root context must have id 0");
        continue;
      }
      const int expect = static_cast<int>(graph.contexts().size());
      if (c.id != expect) parse_error("contexts must be listed in id order");
      graph.add_context(std::move(c));
    }
  }
  if (doc.contains("conds")) {
    for (const auto& gj : doc.at("conds")) {
      CondGroupDef g = cond_from_json(gj);
      if (g.id != static_cast<int>(graph.cond_groups().size())) parse_error("conds must be listed in id order");
      graph.add_cond_group(std::move(g));
    }
  }

  // Loop back-edges point forward in node order, so inputs are attached after
  // every node exists.
  struct Pending {
    std::string id;
    std::vector<Port> inputs;
    std::vector<std::string> controls;
  };
  std::vector<Pending> pending;
  for (const auto& nj : field(doc, "nodes")) {
    NodeDef n;
    n.id = get_as<std::string>(field(nj, "id"), "node id");
    const auto op = get_as<std::string>(field(nj, "op"), "op");
    auto parsed = op_from_name(op);
    if (!parsed) parse_error("unknown op " + op + " on node " + n.id);
    n.op = *parsed;
    if (nj.contains("attrs")) {
      for (const auto& [k, v] : nj.at("attrs").items()) n.attrs[k] = attr_from_json(v);
    }
    Pending p{n.id, {}, {}};
    if (nj.contains("inputs")) {
      for (const auto& ij : nj.at("inputs")) p.inputs.push_back(port_from_json(ij));
    }
    if (nj.contains("control_inputs")) {
      p.controls = get_as<std::vector<std::string>>(nj.at("control_inputs"), "control inputs");
    }
    if (nj.contains("context")) n.context = get_as<int>(nj.at("context"), "context");
    if (nj.contains("device")) n.device = get_as<std::string>(nj.at("device"), "device");
    graph.add_node(std::move(n));
    pending.push_back(std::move(p));
  }
  for (auto& p : pending) {
    for (const Port& in : p.inputs) {
      const NodeDef* src = graph.find(in.node);
      if (src == nullptr || in.index < 0 || in.index >= num_outputs(*src)) {
        throw Error(ErrorCode::kDanglingInput, p.id + " reads missing port " + in.str(), p.id);
      }
    }
    for (const auto& c : p.controls) graph.add_control_input(p.id, c);
    graph.mutable_node(p.id).inputs = std::move(p.inputs);
  }
  if (doc.contains("outputs")) {
    for (const auto& oj : doc.at("outputs")) {
      Port out = port_from_json(oj);
      const NodeDef* src = graph.find(out.node);
      if (src == nullptr || out.index >= num_outputs(*src)) {
        throw Error(ErrorCode::kDanglingInput, "output names missing port " + out.str());
      }
      graph.outputs().push_back(out);
    }
  }
  return graph;
}

GraphDef load_graph(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kParseError, "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return graph_from_json(ss.str());
}

void save_graph(const GraphDef& graph, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kParseError, "cannot write " + path);
  out << graph_to_json(graph);
}

}  // namespace loomflow
