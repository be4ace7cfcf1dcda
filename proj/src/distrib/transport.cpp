// Copyright 2026 The Loomflow Authors
// SPDX-License-Identifier: Apache-2.0

#include <condition_variable>
#include <deque>
#include <random>
#include <thread>

#include "loomflow/errors.h"
#include "loomflow/transport.h"

namespace loomflow {

Bytes encode_message(const std::string& key, const std::optional<Tensor>& value) {
  Bytes out;
  put_u32_le(static_cast<std::uint32_t>(key.size()), &out);
  for (char c : key) out.push_back(static_cast<std::byte>(c));
  encode_value(value, &out);
  return out;
}

void decode_message(std::span<const std::byte> data, std::string* key, std::optional<Tensor>* value) {
  std::size_t offset = 0;
  const std::uint32_t len = get_u32_le(data, &offset);
  if (data.size() - offset < len) throw Error(ErrorCode::kParseError, "message key truncated");
  key->assign(reinterpret_cast<const char*>(data.data() + offset), len);
  offset += len;
  *value = decode_value(data, &offset);
  if (offset != data.size()) throw Error(ErrorCode::kParseError, "trailing bytes after message value");
}

void Mailbox::deliver(const std::string& key, std::optional<Tensor> value) {
  Callback done;
  {
    std::lock_guard<std::mutex> lock(mu_);
    if (!seen_.insert(key).second) ++duplicates_;
    auto it = waiting_.find(key);
    if (it == waiting_.end()) {
      arrived_[key] = std::move(value);
      return;
    }
    done = std::move(it->second);
    waiting_.erase(it);
  }
  done(RecvResult{std::move(value), nullptr});
}

void Mailbox::take(const std::string& key, Callback done) {
  RecvResult result;
  {
    std::lock_guard<std::mutex> lock(mu_);
    if (closed_) {
      result.error = closed_;
    } else if (auto it = arrived_.find(key); it != arrived_.end()) {
      result.value = std::move(it->second);
      arrived_.erase(it);
    } else {
      waiting_[key] = std::move(done);
      return;
    }
  }
  done(std::move(result));
}

void Mailbox::close(std::exception_ptr reason) {
  std::map<std::string, Callback> waiting;
  {
    std::lock_guard<std::mutex> lock(mu_);
    if (closed_) return;
    closed_ = reason ? reason
                     : std::make_exception_ptr(Error(ErrorCode::kTransportClosed, "transport closed"));
    waiting.swap(waiting_);
  }
  for (auto& [key, done] : waiting) {
    done(RecvResult{std::nullopt, closed_});
  }
}

std::size_t Mailbox::unclaimed() const {
  std::lock_guard<std::mutex> lock(mu_);
  return arrived_.size();
}

std::size_t Mailbox::duplicates() const {
  std::lock_guard<std::mutex> lock(mu_);
  return duplicates_;
}

namespace {

class InProcTransport : public Transport {
 public:
  explicit InProcTransport(InProcOptions options) : options_(options) {
    if (options_.shuffle_seed) rng_.seed(*options_.shuffle_seed);
  }
  ~InProcTransport() override { close(nullptr); }

  void open(const std::vector<std::string>& devices) override {
    for (const auto& d : devices) boxes_[d] = std::make_unique<Mailbox>();
    if (options_.shuffle_seed) pump_ = std::thread([this] { pump(); });
  }

  void send(const std::string& from, const std::string& to, const std::string& key,
            const std::optional<Tensor>& value) override {
    Bytes wire = encode_message(key, value);
    std::unique_lock<std::mutex> lock(mu_);
    ++stats_.messages;
    stats_.bytes += wire.size();
    if (!options_.shuffle_seed) {
      lock.unlock();
      deliver(to, wire);
      return;
    }
    queues_[{from, to}].push_back(std::move(wire));
    ++queued_;
    cv_.notify_one();
  }

  void recv(const std::string& device, const std::string& key, Mailbox::Callback done) override {
    box(device).take(key, std::move(done));
  }

  void close(std::exception_ptr reason) override {
    {
      std::lock_guard<std::mutex> lock(mu_);
      if (closed_) return;
      closed_ = true;
    }
    cv_.notify_all();
    if (pump_.joinable()) pump_.join();
    for (auto& [d, b] : boxes_) b->close(reason);
  }

  TransportStats stats() const override {
    std::lock_guard<std::mutex> lock(mu_);
    TransportStats s = stats_;
    s.undelivered = queued_;
    for (const auto& [d, b] : boxes_) {
      s.undelivered += b->unclaimed();
      s.duplicate_keys += b->duplicates();
    }
    return s;
  }

 private:
  Mailbox& box(const std::string& device) {
    auto it = boxes_.find(device);
    if (it == boxes_.end()) throw Error(ErrorCode::kUnknownDevice, "no endpoint for device " + device);
    return *it->second;
  }

  void deliver(const std::string& to, const Bytes& wire) {
    std::string key;
    std::optional<Tensor> value;
    decode_message(wire, &key, &value);
    box(to).deliver(key, std::move(value));
  }

  void pump() {
    std::unique_lock<std::mutex> lock(mu_);
    for (;;) {
      cv_.wait(lock, [&] { return closed_ || queued_ > 0; });
      if (closed_) return;
      // Pick a non-empty pair, then (optionally) any message within it.
      std::vector<std::deque<Bytes>*> pairs;
      std::vector<std::string> targets;
      for (auto& [pair, q] : queues_) {
        if (!q.empty()) {
          pairs.push_back(&q);
          targets.push_back(pair.second);
        }
      }
      const std::size_t p = std::uniform_int_distribution<std::size_t>(0, pairs.size() - 1)(rng_);
      auto& q = *pairs[p];
      std::size_t m = 0;
      if (options_.reorder_within_pair) m = std::uniform_int_distribution<std::size_t>(0, q.size() - 1)(rng_);
      Bytes wire = std::move(q[m]);
      q.erase(q.begin() + static_cast<std::ptrdiff_t>(m));
      --queued_;
      const bool pause = std::uniform_int_distribution<int>(0, 3)(rng_) == 0;
      lock.unlock();
      try {
        deliver(targets[p], wire);
      } catch (...) {
        for (auto& [d, b] : boxes_) b->close(std::current_exception());
      }
      if (pause) std::this_thread::yield();
      lock.lock();
    }
  }

  InProcOptions options_;
  std::map<std::string, std::unique_ptr<Mailbox>> boxes_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::map<std::pair<std::string, std::string>, std::deque<Bytes>> queues_;
  std::size_t queued_ = 0;
  std::mt19937_64 rng_;
  std::thread pump_;
  bool closed_ = false;
  TransportStats stats_;
};

}  // namespace

std::unique_ptr<Transport> make_inproc_transport(InProcOptions options) {
  return std::make_unique<InProcTransport>(options);
}

}  // namespace loomflow
