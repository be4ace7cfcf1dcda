// Copyright 2026 The Loomflow Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "loomflow/gradcheck.h"
#include "loomflow/graph_json.h"
#include "loomflow/transport.h"
#include "loomflow/validate.h"
#include "tools/cli/cli.h"

namespace loomflow::cli {

namespace {

std::string number(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string rate(double v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << v;
  return s.str();
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kParseError, "cannot read " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void report(const Error& e, std::ostream& err) {
  err << "error: " << e.what();
  if (!e.node().empty()) err << " [node " << e.node() << "]";
  err << "\n";
}

// Runs `body`, mapping failures to an exit status.
template <typename Fn>
int guarded(std::ostream& err, Fn&& body) {
  try {
    return body();
  } catch (const Error& e) {
    report(e, err);
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

std::unique_ptr<Transport> transport_for(const std::string& name, std::optional<std::uint64_t> seed) {
  if (name == "tcp") return make_tcp_transport();
  InProcOptions o;
  o.shuffle_seed = seed;
  return make_inproc_transport(o);
}

void check_transport(const std::string& name) {
  if (name != "inproc" && name != "tcp") throw Error(ErrorCode::kInvalidGraph, "unknown transport " + name);
}

}  // namespace

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kShapeMismatch:
    case ErrorCode::kDtypeMismatch:
    case ErrorCode::kArityError:
    case ErrorCode::kDuplicateId:
    case ErrorCode::kDanglingInput:
    case ErrorCode::kInvalidGraph:
    case ErrorCode::kBranchArityMismatch:
    case ErrorCode::kBranchDtypeMismatch:
    case ErrorCode::kArityMismatch:
    case ErrorCode::kNonBooleanPredicate:
    case ErrorCode::kNonScalarObjective:
    case ErrorCode::kNoGradient:
    case ErrorCode::kMissingFeed:
    case ErrorCode::kUnknownDevice:
    case ErrorCode::kParseError:
      return kExitInvalid;
    default:
      return kExitRuntime;
  }
}

std::string format_fetch(const FetchValue& value) {
  if (is_dead(value)) return "DEAD";
  const Tensor& t = std::get<Tensor>(value);
  std::string out = std::string(dtype_name(t.dtype())) + " " + shape_string(t.shape());
  for (std::int64_t i = 0; i < t.num_elements(); ++i) {
    out += ' ';
    switch (t.dtype()) {
      case DType::kFloat64: out += number(t.f64_data()[i]); break;
      case DType::kInt64: out += std::to_string(t.i64_data()[i]); break;
      case DType::kBool: out += t.bool_data()[i] ? "true" : "false"; break;
    }
  }
  return out;
}

std::map<std::string, Tensor> parse_feeds(const GraphDef& graph, const std::vector<std::string>& specs) {
  std::map<std::string, Tensor> feeds;
  for (const auto& spec : specs) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0) throw Error(ErrorCode::kParseError, "feed must be name=value: " + spec);
    const std::string name = spec.substr(0, eq);
    const std::string source = spec.substr(eq + 1);
    const NodeDef* node = graph.find(name);
    if (node == nullptr || node->op != OpType::kPlaceholder) {
      throw Error(ErrorCode::kMissingFeed, "feed " + name + " does not name a placeholder", name);
    }
    std::error_code ec;
    const bool is_file = !source.empty() && std::filesystem::is_regular_file(source, ec);
    Tensor value = parse_tensor_literal(is_file ? read_file(source) : source);
    const auto dtype = node->attr_dtype("dtype");
    if (dtype == DType::kFloat64 && value.dtype() == DType::kInt64) {
      std::vector<double> data(value.i64_data().begin(), value.i64_data().end());
      value = Tensor::f64(value.shape(), std::move(data));
    }
    if (auto shape = node->attr_ints("shape"); shape && value.rank() == 0 && !shape->empty()) {
      value = Tensor::filled(value.dtype(), *shape, value.element(0));
    }
    feeds[name] = value;
  }
  return feeds;
}

int cmd_run(const RunArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    check_transport(args.transport);
    const GraphDef graph = load_graph(args.graph);
    check_valid(graph);
    std::vector<Port> fetches;
    for (const auto& f : args.fetches) fetches.push_back(Port::parse(f));
    if (fetches.empty()) fetches = graph.outputs();
    if (fetches.empty()) throw Error(ErrorCode::kInvalidGraph, "nothing to fetch: pass --fetch or list graph outputs");
    const auto feeds = parse_feeds(graph, args.feeds);

    RunOptions local;
    local.parallel_limit = args.parallel_limit;
    local.spill_threshold = args.spill_threshold;
    local.schedule_seed = args.seed;

    std::vector<FetchValue> values;
    if (args.placement.empty()) {
      values = run(graph, feeds, fetches, local);
    } else {
      const Placement placement = Placement::load(args.placement);
      const PartitionedGraph parts = partition(graph, placement);
      DistributedOptions dist;
      dist.local = local;
      dist.make_transport = [&] { return transport_for(args.transport, args.seed); };
      values = run_distributed(parts, feeds, fetches, dist).fetches;
    }
    for (const auto& v : values) out << format_fetch(v) << "\n";
    return kExitOk;
  });
}

int cmd_gradcheck(const GradcheckArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (args.xs.empty()) throw Error(ErrorCode::kInvalidGraph, "gradcheck needs at least one --x");
    if (!(args.step > 0)) throw Error(ErrorCode::kInvalidGraph, "step must be positive");
    const GraphDef graph = load_graph(args.graph);
    check_valid(graph);
    const Port y = Port::parse(args.y);
    auto feeds = parse_feeds(graph, args.feeds);
    for (const auto& x : args.xs) {
      const NodeDef* node = graph.find(x);
      if (node == nullptr || node->op != OpType::kPlaceholder) {
        throw Error(ErrorCode::kInvalidGraph, "x must name a placeholder: " + x, x);
      }
      if (!feeds.count(x)) {
        const Tensor* fallback = node->attr_tensor("default");
        if (fallback == nullptr) throw Error(ErrorCode::kMissingFeed, "no value for " + x + "; pass --feed", x);
        feeds[x] = *fallback;
      }
    }
    // Below this, rounding in y(x +- step) swamps the difference quotient.
    if (args.step < 1e-9) {
      err << "warning: step " << args.step
          << " is small enough that floating-point cancellation dominates the central difference\n";
    }
    for (const auto& x : args.xs) {
      const auto blocked = non_differentiable_path(graph, y, x);
      if (blocked.empty()) continue;
      err << "note: " << x << " reaches " << y.node << " only through a non-differentiable path (";
      for (std::size_t i = 0; i < blocked.size(); ++i) {
        err << (i ? ", " : "") << op_name(graph.node(blocked[i]).op) << " " << blocked[i];
      }
      err << "); its gradient is zero\n";
    }
    const GradientComparison c = compare_gradients(graph, y, feeds, args.xs, args.step);
    bool ok = true;
    for (std::size_t i = 0; i < args.xs.size(); ++i) {
      const double e = c.max_relative_error_per_x[i];
      const bool pass = e <= args.tolerance;
      ok = ok && pass;
      out << args.xs[i] << " max_rel_error=" << std::setprecision(3) << std::scientific << e << std::defaultfloat
          << (pass ? " ok" : " FAIL") << "\n";
    }
    return ok ? kExitOk : kExitGradientMismatch;
  });
}

int cmd_bench(const BenchArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    check_transport(args.transport);
    const auto pattern = pipeline_pattern_from_name(args.pattern);
    if (!pattern) throw Error(ErrorCode::kInvalidGraph, "unknown pattern " + args.pattern);
    if (args.devices < 1 || args.trials < 1 || args.iterations < 1 || args.parallel_limits.empty()) {
      throw Error(ErrorCode::kInvalidGraph, "devices, iterations and trials must be positive");
    }
    std::vector<double> medians;
    for (int limit : args.parallel_limits) {
      PipelineOptions o;
      o.pattern = *pattern;
      o.devices = args.devices;
      o.stages = args.stages > 0 ? args.stages : args.devices;
      o.iterations = args.iterations;
      o.parallel_limit = limit;
      o.per_op_delay = std::chrono::microseconds(static_cast<std::int64_t>(args.delay_ms * 1000));
      if (args.transport == "tcp") o.make_transport = [] { return make_tcp_transport(); };
      std::vector<double> rates;
      for (int t = 0; t < args.trials; ++t) {
        rates.push_back(bench_pipeline(o).iterations_per_sec);
        out << "bench," << args.pattern << "," << args.devices << "," << limit << "," << rate(rates.back()) << "\n";
      }
      std::sort(rates.begin(), rates.end());
      const std::size_t mid = rates.size() / 2;
      const double median = rates.size() % 2 ? rates[mid] : (rates[mid - 1] + rates[mid]) / 2;
      medians.push_back(median);
      out << "median," << args.pattern << "," << args.devices << "," << limit << "," << rate(median) << "\n";
    }
    if (medians.size() > 1) {
      for (std::size_t i = 1; i < medians.size(); ++i) {
        out << "ratio," << args.pattern << "," << args.devices << "," << args.parallel_limits[i] << "/"
            << args.parallel_limits[0] << "," << rate(medians[i] / medians[0]) << "\n";
      }
    }
    return kExitOk;
  });
}

int cmd_example(const ExampleArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (args.name.empty()) {
      for (const auto& n : example_names()) out << n << ": " << make_example(n, args.devices).description << "\n";
      return kExitOk;
    }
    const Example e = make_example(args.name, args.devices);
    if (args.out.empty()) {
      out << graph_to_json(e.graph);
    } else {
      save_graph(e.graph, args.out);
    }
    if (!args.placement_out.empty()) {
      std::ofstream p(args.placement_out);
      if (!p) throw Error(ErrorCode::kParseError, "cannot write " + args.placement_out);
      p << e.placement.to_json() << "\n";
    }
    return kExitOk;
  });
}

}  // namespace loomflow::cli
