// Copyright 2026 The Loomflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "loomflow/gradcheck.h"

#include <algorithm>
#include <cmath>
#include <deque>
#include <set>

#include "loomflow/errors.h"

namespace loomflow {

namespace {

double eval_scalar(const GraphDef& graph, const Port& y, const std::map<std::string, Tensor>& feeds,
                   const RunOptions& options) {
  auto out = run(graph, feeds, {y}, options);
  if (is_dead(out[0])) throw Error(ErrorCode::kNonScalarObjective, "objective " + y.str() + " is dead", y.node);
  return std::get<Tensor>(out[0]).scalar_value();
}

Tensor with_element(const Tensor& t, std::int64_t i, double value) {
  std::vector<double> data(t.f64_data().begin(), t.f64_data().end());
  data[i] = value;
  return Tensor::f64(t.shape(), std::move(data));
}

const Tensor& feed_of(const std::map<std::string, Tensor>& feeds, const std::string& name) {
  auto it = feeds.find(name);
  if (it == feeds.end()) throw Error(ErrorCode::kMissingFeed, "no value fed for " + name, name);
  if (it->second.dtype() != DType::kFloat64) {
    throw Error(ErrorCode::kDtypeMismatch, name + " must be float64 to differentiate against", name);
  }
  return it->second;
}

}  // namespace

double relative_error(double symbolic, double numeric) {
  const double scale = std::max({std::abs(symbolic), std::abs(numeric), kRelativeErrorFloor});
  return std::abs(symbolic - numeric) / scale;
}

std::vector<double> numeric_gradient(const GraphDef& graph, const Port& y, const std::map<std::string, Tensor>& feeds,
                                     const std::vector<std::string>& wrt, double step, const RunOptions& options) {
  std::vector<double> out;
  for (const auto& name : wrt) {
    const Tensor base = feed_of(feeds, name);
    for (std::int64_t i = 0; i < base.num_elements(); ++i) {
      auto shifted = feeds;
      const double v = base.f64_data()[i];
      shifted[name] = with_element(base, i, v + step);
      const double up = eval_scalar(graph, y, shifted, options);
      shifted[name] = with_element(base, i, v - step);
      const double down = eval_scalar(graph, y, shifted, options);
      out.push_back((up - down) / (2 * step));
    }
  }
  return out;
}

std::vector<double> symbolic_gradient(const GraphDef& graph, const Port& y, const std::map<std::string, Tensor>& feeds,
                                      const std::vector<std::string>& wrt, const RunOptions& options) {
  GraphDef g = graph;
  std::vector<Port> xs;
  for (const auto& name : wrt) xs.push_back(Port{name, 0});
  const std::vector<Port> grads = gradients(g, y, xs);
  auto values = run(g, feeds, grads, options);
  std::vector<double> out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (is_dead(values[i])) throw Error(ErrorCode::kInternal, "gradient for " + wrt[i] + " is dead", wrt[i]);
    const Tensor& t = std::get<Tensor>(values[i]);
    out.insert(out.end(), t.f64_data().begin(), t.f64_data().end());
  }
  return out;
}

GradientComparison compare_gradients(const GraphDef& graph, const Port& y, const std::map<std::string, Tensor>& feeds,
                                     const std::vector<std::string>& wrt, double step) {
  GradientComparison c;
  c.symbolic = symbolic_gradient(graph, y, feeds, wrt);
  c.numeric = numeric_gradient(graph, y, feeds, wrt, step);
  if (c.symbolic.size() != c.numeric.size()) throw Error(ErrorCode::kInternal, "gradient sizes differ");
  std::size_t offset = 0;
  for (const auto& name : wrt) {
    const auto count = static_cast<std::size_t>(feeds.at(name).num_elements());
    double worst = 0;
    for (std::size_t i = offset; i < offset + count; ++i) worst = std::max(worst, relative_error(c.symbolic[i], c.numeric[i]));
    c.max_relative_error_per_x.push_back(worst);
    c.max_relative_error = std::max(c.max_relative_error, worst);
    offset += count;
  }
  return c;
}

std::vector<std::string> non_differentiable_path(const GraphDef& graph, const Port& y, const std::string& x,
                                                 const GradientRegistry& registry) {
  struct Use {
    std::string node;
    int slot;
  };
  std::map<std::string, std::vector<Use>> uses;
  std::map<std::string, std::vector<std::string>> producers;
  for (const NodeDef& n : graph.nodes()) {
    for (std::size_t k = 0; k < n.inputs.size(); ++k) {
      uses[n.inputs[k].node].push_back({n.id, static_cast<int>(k)});
      producers[n.id].push_back(n.inputs[k].node);
    }
    for (const auto& c : n.control_inputs) {
      uses[c].push_back({n.id, -1});
      producers[n.id].push_back(c);
    }
  }
  auto blocks = [&](const NodeDef& n, int slot) {
    return slot < 0 || registry.is_non_differentiable(n.op) || (n.op == OpType::kSwitch && slot == 1);
  };
  auto forward = [&](bool differentiable_only) {
    std::set<std::string> seen{x};
    std::deque<std::string> work{x};
    while (!work.empty()) {
      const std::string id = work.front();
      work.pop_front();
      for (const Use& u : uses[id]) {
        if (differentiable_only && blocks(graph.node(u.node), u.slot)) continue;
        if (seen.insert(u.node).second) work.push_back(u.node);
      }
    }
    return seen;
  };
  const std::set<std::string> reached = forward(false);
  const std::set<std::string> smooth = forward(true);
  if (!reached.count(y.node) || smooth.count(y.node)) return {};

  std::set<std::string> feeds_y{y.node};
  std::deque<std::string> work{y.node};
  while (!work.empty()) {
    const std::string id = work.front();
    work.pop_front();
    for (const auto& p : producers[id]) {
      if (feeds_y.insert(p).second) work.push_back(p);
    }
  }
  // Where the differentiable part of the flow from x stops.
  std::set<std::string> stops;
  for (const auto& id : smooth) {
    for (const Use& u : uses[id]) {
      if (feeds_y.count(u.node) && blocks(graph.node(u.node), u.slot)) stops.insert(u.node);
    }
  }
  std::vector<std::string> out(stops.begin(), stops.end());
  return out;
}

}  // namespace loomflow
