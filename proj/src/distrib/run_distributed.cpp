// Copyright 2026 The Loomflow Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <atomic>
#include <set>
#include <thread>

#include "loomflow/distrib.h"
#include "loomflow/errors.h"

namespace loomflow {

namespace {

std::string key_template(const std::string& key) {
  const auto pos = key.find(";tag=");
  return pos == std::string::npos ? key : key.substr(0, pos);
}

struct Failure {
  std::size_t order = 0;
  std::string device;
  std::exception_ptr error;
};

// The error the caller sees: the earliest failure that is not a knock-on
// effect of closing the transport.
[[noreturn]] void rethrow_primary(std::vector<Failure> failures) {
  std::sort(failures.begin(), failures.end(), [](const Failure& a, const Failure& b) { return a.order < b.order; });
  const Failure* primary = &failures.front();
  for (const auto& f : failures) {
    try {
      std::rethrow_exception(f.error);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kTransportClosed) {
        primary = &f;
        break;
      }
    } catch (...) {
      primary = &f;
      break;
    }
  }
  try {
    std::rethrow_exception(primary->error);
  } catch (const Error& e) {
    const ErrorCode code = e.code() == ErrorCode::kRuntimeKernelError ? ErrorCode::kRemoteKernelError : e.code();
    throw Error(code, "device " + primary->device + ": " + e.what(), e.node());
  } catch (const std::exception& e) {
    throw Error(ErrorCode::kRemoteKernelError, "device " + primary->device + ": " + e.what());
  }
}

// Devices that run some part of each loop, keyed by frame name.
std::map<std::string, std::vector<std::string>> loop_participants(const PartitionedGraph& partitions) {
  std::map<std::string, std::set<std::string>> found;
  for (const auto& [device, graph] : partitions.subgraphs) {
    for (const NodeDef& n : graph.nodes()) {
      for (int ctx : graph.enclosing_whiles(n.context)) found[graph.context(ctx).frame_name].insert(device);
    }
  }
  std::map<std::string, std::vector<std::string>> out;
  for (auto& [frame, devices] : found) out[frame].assign(devices.begin(), devices.end());
  return out;
}

}  // namespace

DistributedResult run_distributed(const PartitionedGraph& partitions, const std::map<std::string, Tensor>& feeds,
                                  const std::vector<Port>& fetches, const DistributedOptions& options) {
  const auto& devices = partitions.devices;
  std::map<std::string, std::map<std::string, Tensor>> device_feeds;
  for (const auto& [id, value] : feeds) {
    auto it = partitions.assignment.find(id);
    if (it == partitions.assignment.end()) throw Error(ErrorCode::kInvalidGraph, "feed for unknown node " + id, id);
    device_feeds[it->second].emplace(id, value);
  }
  std::map<std::string, std::vector<std::pair<std::size_t, Port>>> device_fetches;
  for (std::size_t i = 0; i < fetches.size(); ++i) {
    auto it = partitions.assignment.find(fetches[i].node);
    if (it == partitions.assignment.end()) {
      throw Error(ErrorCode::kInvalidGraph, "fetch of unknown node " + fetches[i].node, fetches[i].node);
    }
    device_fetches[it->second].emplace_back(i, fetches[i]);
  }

  for (const auto& d : devices) {
    device_feeds[d];
    device_fetches[d];
  }

  std::unique_ptr<Transport> transport =
      options.make_transport ? options.make_transport() : make_inproc_transport();
  transport->open(devices);

  auto window = std::make_shared<IterationWindow>(loop_participants(partitions));

  std::mutex mu;
  std::vector<Failure> failures;
  std::atomic<std::size_t> failure_order{0};
  DistributedResult result;
  result.fetches.resize(fetches.size(), DeadMarker{});
  result.devices.resize(devices.size());

  auto run_device = [&](std::size_t index) {
    const std::string& device = devices[index];
    RunOptions local = options.local;
    local.device = device;
    local.validated = true;
    local.window = window;
    local.send = [&, device](const std::string& key, const std::optional<Tensor>& value) {
      auto it = partitions.key_destination.find(key_template(key));
      if (it == partitions.key_destination.end()) {
        throw Error(ErrorCode::kInternal, "no receiver registered for key " + key);
      }
      transport->send(device, it->second, key, value);
    };
    local.recv = [&, device](const std::string& key, std::function<void(RecvResult)> done) {
      transport->recv(device, key, std::move(done));
    };
    std::vector<Port> local_fetches;
    for (const auto& [slot, port] : device_fetches[device]) local_fetches.push_back(port);
    try {
      RunResult r = run_with_stats(partitions.subgraphs.at(device), device_feeds[device], local_fetches, local);
      std::lock_guard<std::mutex> lock(mu);
      const auto& slots = device_fetches[device];
      for (std::size_t i = 0; i < slots.size(); ++i) result.fetches[slots[i].first] = r.fetches[i];
      result.devices[index] = DeviceReport{device, std::move(r.stats)};
    } catch (...) {
      {
        std::lock_guard<std::mutex> lock(mu);
        failures.push_back({failure_order++, device, std::current_exception()});
        result.devices[index].device = device;
      }
      transport->close(std::make_exception_ptr(
          Error(ErrorCode::kTransportClosed, "run aborted after a failure on device " + device)));
    }
  };

  std::vector<std::thread> threads;
  for (std::size_t i = 0; i < devices.size(); ++i) threads.emplace_back(run_device, i);
  for (auto& t : threads) t.join();
  result.transport = transport->stats();
  transport->close(nullptr);
  if (!failures.empty()) rethrow_primary(std::move(failures));
  return result;
}

}  // namespace loomflow
