// Copyright 2026 The Loomflow Authors
// SPDX-License-Identifier: Apache-2.0

#include <fstream>

#include "json.hpp"
#include "loomflow/errors.h"
#include "loomflow/executor.h"
#include "loomflow/kernels.h"

namespace loomflow {

FrameTag FrameTag::enter(const std::string& frame) const {
  auto path = path_;
  path.push_back({frame, 0});
  return FrameTag(std::move(path));
}

FrameTag FrameTag::next() const {
  if (path_.empty()) throw Error(ErrorCode::kTagMismatch, "NextIteration at the root tag");
  auto path = path_;
  ++path.back().iteration;
  return FrameTag(std::move(path));
}

FrameTag FrameTag::exit() const {
  if (path_.empty()) throw Error(ErrorCode::kTagMismatch, "Exit at the root tag");
  auto path = path_;
  path.pop_back();
  return FrameTag(std::move(path));
}

std::string FrameTag::str() const {
  std::string s = "root";
  for (const auto& l : path_) s += "/" + l.frame + "/" + std::to_string(l.iteration);
  return s;
}

std::string rendezvous_key(const std::string& key_template, const FrameTag& tag) {
  return key_template + ";tag=" + tag.str();
}

std::string fetch_string(const FetchValue& v) {
  if (is_dead(v)) return "DEAD";
  return std::get<Tensor>(v).debug_string();
}

bool same_fetch(const FetchValue& a, const FetchValue& b) {
  if (is_dead(a) || is_dead(b)) return is_dead(a) && is_dead(b);
  return std::get<Tensor>(a).identical(std::get<Tensor>(b));
}

std::string_view event_action_name(EventAction a) {
  switch (a) {
    case EventAction::kStart: return "start";
    case EventAction::kDone: return "done";
    case EventAction::kDead: return "dead";
    case EventAction::kPush: return "push";
    case EventAction::kPop: return "pop";
    case EventAction::kSpill: return "spill";
    case EventAction::kRestore: return "restore";
  }
  return "?";
}

EventLog::EventLog() : start_(std::chrono::steady_clock::now()) {}

void EventLog::record(const std::string& device, const std::string& node, const std::string& tag,
                      EventAction action) {
  const auto now = std::chrono::steady_clock::now();
  std::lock_guard<std::mutex> lock(mu_);
  Event e;
  e.seq = events_.size();
  e.time_us = std::chrono::duration_cast<std::chrono::microseconds>(now - start_).count();
  e.device = device;
  e.node = node;
  e.tag = tag;
  e.action = action;
  events_.push_back(std::move(e));
}

std::vector<Event> EventLog::events() const {
  std::lock_guard<std::mutex> lock(mu_);
  return events_;
}

void EventLog::write_ndjson(const std::string& path, bool append) const {
  std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
  if (!out) throw Error(ErrorCode::kParseError, "cannot write event log " + path);
  for (const auto& e : events()) {
    nlohmann::json j = {{"seq", e.seq},   {"time_us", e.time_us}, {"device", e.device},
                        {"node", e.node}, {"tag", e.tag},         {"action", event_action_name(e.action)}};
    out << j.dump() << "\n";
  }
}

namespace {

[[noreturn]] void need_resources(const NodeDef& node) {
  throw Error(ErrorCode::kInvalidGraph, node.id + ": " + std::string(op_name(node.op)) + " needs runtime resources",
              node.id);
}

std::int64_t handle_of(const TaggedTensor& t) { return t.value->scalar_int_value(); }

std::optional<Shape> shape_attr(const NodeDef& node, const char* name) {
  auto dims = node.attr_ints(name);
  if (!dims) return std::nullopt;
  return Shape(dims->begin(), dims->end());
}

StackStore::Key stack_key(const std::vector<TaggedTensor>& inputs, std::size_t first) {
  StackStore::Key key;
  for (std::size_t i = first; i < inputs.size(); ++i) key.push_back(inputs[i].value->scalar_int_value());
  return key;
}

}  // namespace

std::vector<TaggedTensor> eval_node(const NodeDef& node, const std::vector<TaggedTensor>& inputs,
                                    const EvalContext& ctx) {
  const FrameTag tag = inputs.empty() ? ctx.tag : inputs[0].tag;
  if (node.op != OpType::kMerge) {
    for (const auto& in : inputs) {
      if (!(in.tag == tag)) {
        throw Error(ErrorCode::kTagMismatch, node.id + " received " + in.tag.str() + " and " + tag.str(), node.id);
      }
    }
  }
  bool dead = ctx.control_dead;
  for (const auto& in : inputs) dead = dead || in.is_dead();

  const int n_out = num_outputs(node);
  auto all_dead = [&](const FrameTag& t) { return std::vector<TaggedTensor>(n_out, TaggedTensor::dead(t)); };
  auto single = [&](std::optional<Tensor> v, FrameTag t) {
    return std::vector<TaggedTensor>{TaggedTensor{std::move(v), std::move(t)}};
  };

  switch (node.op) {
    case OpType::kSwitch: {
      // Port 0 carries the value when the predicate is false, port 1 when
      // it is true.
      if (dead) return all_dead(tag);
      const bool p = inputs[1].value->scalar_bool_value();
      std::vector<TaggedTensor> out(2, TaggedTensor::dead(tag));
      out[p ? 1 : 0].value = inputs[0].value;
      return out;
    }
    case OpType::kMerge: {
      if (inputs.empty()) throw Error(ErrorCode::kArityError, node.id + ": Merge with no available input", node.id);
      if (!ctx.control_dead) {
        for (const auto& in : inputs) {
          if (!in.is_dead()) return single(in.value, in.tag);
        }
      }
      return single(std::nullopt, inputs[0].tag);
    }
    case OpType::kEnter: {
      const auto frame = node.attr_string("frame_name");
      if (frame.empty()) throw Error(ErrorCode::kInvalidGraph, node.id + ": Enter without frame_name", node.id);
      return single(dead ? std::nullopt : inputs[0].value, tag.enter(frame));
    }
    case OpType::kExit:
      return single(dead ? std::nullopt : inputs[0].value, ctx.parent_tag.value_or(tag.exit()));
    case OpType::kNextIteration:
      return single(dead ? std::nullopt : inputs[0].value, tag.next());
    default:
      break;
  }

  if (dead) return all_dead(tag);

  const RunResources& res = ctx.resources;
  switch (node.op) {
    case OpType::kConst: {
      const Tensor* v = node.attr_tensor("value");
      if (v == nullptr) throw Error(ErrorCode::kInvalidGraph, node.id + ": Const without value", node.id);
      return single(*v, tag);
    }
    case OpType::kPlaceholder: {
      if (ctx.feed) return single(*ctx.feed, tag);
      if (const Tensor* d = node.attr_tensor("default")) return single(*d, tag);
      throw Error(ErrorCode::kMissingFeed, "no value fed for placeholder " + node.id, node.id);
    }
    case OpType::kStackPush: {
      if (res.stacks == nullptr) need_resources(node);
      res.stacks->push(node.attr_string("stack"), stack_key(inputs, 1), *inputs[0].value);
      return single(inputs[0].value, tag);
    }
    case OpType::kTensorArrayNew: {
      if (res.arrays == nullptr) need_resources(node);
      std::optional<std::int64_t> size;
      if (!inputs.empty()) size = inputs[0].value->scalar_int_value();
      auto dtype = node.attr_dtype("dtype");
      const std::int64_t h = res.arrays->create(dtype.value_or(DType::kFloat64), size,
                                                shape_attr(node, "element_shape"), node.attr_bool("dynamic_size"));
      return {TaggedTensor::live(Tensor::scalar_int(h), tag), TaggedTensor::live(Tensor::scalar(0.0), tag)};
    }
    case OpType::kTensorArrayWrite:
      if (res.arrays == nullptr) need_resources(node);
      res.arrays->write(handle_of(inputs[0]), inputs[1].value->scalar_int_value(), *inputs[2].value);
      return single(Tensor::scalar(0.0), tag);
    case OpType::kTensorArrayRead:
      if (res.arrays == nullptr) need_resources(node);
      return single(res.arrays->read(handle_of(inputs[0]), inputs[1].value->scalar_int_value()), tag);
    case OpType::kTensorArrayUnstack:
      if (res.arrays == nullptr) need_resources(node);
      res.arrays->unstack(handle_of(inputs[0]), *inputs[1].value);
      return single(Tensor::scalar(0.0), tag);
    case OpType::kTensorArrayStack:
      if (res.arrays == nullptr) need_resources(node);
      return single(res.arrays->stack(handle_of(inputs[0])), tag);
    case OpType::kTensorArraySize:
      if (res.arrays == nullptr) need_resources(node);
      return single(Tensor::scalar_int(res.arrays->size(handle_of(inputs[0]))), tag);
    case OpType::kTensorArrayGrad: {
      if (res.arrays == nullptr) need_resources(node);
      const std::int64_t g = res.arrays->grad(handle_of(inputs[0]), node.attr_string("source"));
      return {TaggedTensor::live(Tensor::scalar_int(g), tag), TaggedTensor::live(Tensor::scalar(0.0), tag)};
    }
    case OpType::kSend:
    case OpType::kRecv:
    case OpType::kStackPop:
      throw Error(ErrorCode::kInvalidGraph,
                  node.id + ": " + std::string(op_name(node.op)) + " is asynchronous and runs in the executor",
                  node.id);
    default:
      break;
  }

  auto kind = op_kernel(node.op);
  if (!kind) throw Error(ErrorCode::kInternal, "no rule for " + std::string(op_name(node.op)), node.id);
  std::vector<Tensor> values;
  values.reserve(inputs.size());
  for (const auto& in : inputs) values.push_back(*in.value);
  auto outs = eval_kernel(*kind, values, node.attr_tensor("value"));
  std::vector<TaggedTensor> result;
  for (auto& o : outs) result.push_back(TaggedTensor::live(std::move(o), tag));
  return result;
}

}  // namespace loomflow
