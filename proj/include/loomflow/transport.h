// Copyright 2026 The Loomflow Authors
// SPDX-License-Identifier: Apache-2.0

// Message channels between device runtimes. A message is a rendezvous key
// plus one value (or a dead marker). Delivery is reliable and ordered per
// (sender, receiver) pair; a receiver asks for a key and is called back once
// the matching message has arrived.

#ifndef LOOMFLOW_TRANSPORT_H_
#define LOOMFLOW_TRANSPORT_H_

#include <cstdint>
#include <exception>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "loomflow/executor.h"
#include "loomflow/serialize.h"
#include "loomflow/tensor.h"

namespace loomflow {

struct TransportStats {
  std::size_t messages = 0;
  std::size_t bytes = 0;
  // Keys published more than once; always zero for partitioned graphs.
  std::size_t duplicate_keys = 0;
  // Messages that arrived but were never received.
  std::size_t undelivered = 0;
};

// One message body on the wire: u32 key length, key bytes, encoded value.
Bytes encode_message(const std::string& key, const std::optional<Tensor>& value);
void decode_message(std::span<const std::byte> data, std::string* key, std::optional<Tensor>* value);

// Per-device receive side: arrived messages waiting for a Recv, and Recvs
// waiting for a message.
class Mailbox {
 public:
  using Callback = std::function<void(RecvResult)>;

  void deliver(const std::string& key, std::optional<Tensor> value);
  void take(const std::string& key, Callback done);
  // Fails every waiting and future take.
  void close(std::exception_ptr reason);

  std::size_t unclaimed() const;
  std::size_t duplicates() const;

 private:
  mutable std::mutex mu_;
  std::map<std::string, std::optional<Tensor>> arrived_;
  std::map<std::string, Callback> waiting_;
  std::set<std::string> seen_;
  std::size_t duplicates_ = 0;
  std::exception_ptr closed_;
};

class Transport {
 public:
  virtual ~Transport() = default;

  // Sets up endpoints for `devices`; called once before any traffic.
  virtual void open(const std::vector<std::string>& devices) = 0;
  virtual void send(const std::string& from, const std::string& to, const std::string& key,
                    const std::optional<Tensor>& value) = 0;
  virtual void recv(const std::string& device, const std::string& key, Mailbox::Callback done) = 0;
  // Fails pending and future receives with `reason` (TransportClosed when
  // null) and releases endpoints. Idempotent.
  virtual void close(std::exception_ptr reason = nullptr) = 0;
  virtual TransportStats stats() const = 0;
};

struct InProcOptions {
  // When set, a delivery thread picks the next message at random (seeded),
  // yielding between deliveries; otherwise send() delivers synchronously.
  std::optional<std::uint64_t> shuffle_seed;
  // With shuffling, also reorder messages within one (sender, receiver)
  // pair. Off by default: the protocol is specified for FIFO pairs.
  bool reorder_within_pair = false;
};

std::unique_ptr<Transport> make_inproc_transport(InProcOptions options = {});

// Loopback TCP: every device listens on 127.0.0.1, each ordered pair uses
// one connection, and frames are a 4-byte big-endian length followed by an
// encode_message body.
std::unique_ptr<Transport> make_tcp_transport();

}  // namespace loomflow

#endif  // LOOMFLOW_TRANSPORT_H_
