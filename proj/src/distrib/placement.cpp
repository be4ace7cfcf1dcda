// Copyright 2026 The Loomflow Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "json.hpp"
#include "loomflow/distrib.h"
#include "loomflow/errors.h"

namespace loomflow {

Placement Placement::from_json(std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParseError, std::string("placement: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("devices") || !doc["devices"].is_array()) {
    throw Error(ErrorCode::kParseError, "placement: expected an object with a \"devices\" array");
  }
  Placement p;
  for (const auto& d : doc["devices"]) {
    if (!d.is_string()) throw Error(ErrorCode::kParseError, "placement: device names must be strings");
    p.devices.push_back(d.get<std::string>());
  }
  if (p.devices.empty()) throw Error(ErrorCode::kParseError, "placement: no devices");
  if (doc.contains("placement")) {
    const auto& rules = doc["placement"];
    if (!rules.is_object()) throw Error(ErrorCode::kParseError, "placement: \"placement\" must be an object");
    for (const auto& [pattern, device] : rules.items()) {
      if (!device.is_string()) throw Error(ErrorCode::kParseError, "placement: device for " + pattern);
      p.rules.emplace_back(pattern, device.get<std::string>());
    }
  }
  return p;
}

Placement Placement::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kParseError, "cannot read placement file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return from_json(buf.str());
}

std::string Placement::to_json() const {
  nlohmann::json doc;
  doc["devices"] = devices;
  doc["placement"] = nlohmann::json::object();
  for (const auto& [pattern, device] : rules) doc["placement"][pattern] = device;
  return doc.dump(2);
}

std::map<std::string, std::string> Placement::resolve(const GraphDef& graph) const {
  if (devices.empty()) throw Error(ErrorCode::kUnknownDevice, "placement lists no devices");
  auto known = [&](const std::string& d) { return std::find(devices.begin(), devices.end(), d) != devices.end(); };

  std::map<std::string, std::string> exact;
  std::vector<std::pair<std::string, std::string>> prefixes;
  for (const auto& [pattern, device] : rules) {
    if (!known(device)) throw Error(ErrorCode::kUnknownDevice, "rule " + pattern + " names unknown device " + device);
    if (!pattern.empty() && pattern.back() == '*') {
      prefixes.emplace_back(pattern.substr(0, pattern.size() - 1), device);
    } else {
      exact[pattern] = device;
    }
  }
  std::stable_sort(prefixes.begin(), prefixes.end(),
                   [](const auto& a, const auto& b) { return a.first.size() > b.first.size(); });

  auto by_rule = [&](const std::string& id) -> std::optional<std::string> {
    if (auto it = exact.find(id); it != exact.end()) return it->second;
    for (const auto& [prefix, device] : prefixes) {
      if (id.compare(0, prefix.size(), prefix) == 0) return device;
    }
    return std::nullopt;
  };

  std::map<std::string, std::string> out;
  std::set<std::string> visiting;
  std::function<std::string(const NodeDef&)> place = [&](const NodeDef& n) -> std::string {
    if (auto it = out.find(n.id); it != out.end()) return it->second;
    std::string device;
    if (auto d = by_rule(n.id)) {
      device = *d;
    } else if (!n.device.empty()) {
      if (!known(n.device)) throw Error(ErrorCode::kUnknownDevice, n.id + " requests unknown device " + n.device, n.id);
      device = n.device;
    } else if (!n.inputs.empty() && !visiting.count(n.id)) {
      visiting.insert(n.id);
      device = place(graph.node(n.inputs[0].node));
      visiting.erase(n.id);
    } else {
      device = devices.front();
    }
    // A node on a cycle may have been placed while its producer chain was
    // being resolved.
    return out.emplace(n.id, device).first->second;
  };
  for (const NodeDef& n : graph.nodes()) place(n);
  return out;
}

}  // namespace loomflow
