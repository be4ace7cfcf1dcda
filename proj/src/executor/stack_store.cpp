// Copyright 2026 The Loomflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "loomflow/stack_store.h"

#include <cstring>
#include <filesystem>
#include <fstream>

#include "loomflow/errors.h"

namespace loomflow {

namespace {

std::string key_string(const std::string& stack, const StackStore::Key& key) {
  std::string s = stack + "[";
  for (std::size_t i = 0; i < key.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(key[i]);
  }
  return s + "]";
}

class MemorySpillStore : public SpillStore {
 public:
  explicit MemorySpillStore(std::size_t capacity) : capacity_(capacity) {}

  void put(std::uint64_t id, const Tensor& value) override {
    Bytes bytes = encode_value(value);
    std::lock_guard<std::mutex> lock(mu_);
    if (used_ + bytes.size() > capacity_) {
      throw Error(ErrorCode::kSpillStoreFull, "memory spill store full at " + std::to_string(used_) + " bytes");
    }
    used_ += bytes.size();
    blobs_[id] = std::move(bytes);
  }

  Tensor take(std::uint64_t id) override {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = blobs_.find(id);
    if (it == blobs_.end()) throw Error(ErrorCode::kInternal, "spill entry " + std::to_string(id) + " missing");
    auto value = decode_value(it->second);
    used_ -= it->second.size();
    blobs_.erase(it);
    return *value;
  }

  std::size_t stored_bytes() const override {
    std::lock_guard<std::mutex> lock(mu_);
    return used_;
  }

 private:
  std::size_t capacity_;
  mutable std::mutex mu_;
  std::unordered_map<std::uint64_t, Bytes> blobs_;
  std::size_t used_ = 0;
};

class DirectorySpillStore : public SpillStore {
 public:
  DirectorySpillStore(std::string dir, std::size_t capacity) : dir_(std::move(dir)), capacity_(capacity) {
    std::filesystem::create_directories(dir_);
  }

  void put(std::uint64_t id, const Tensor& value) override {
    Bytes bytes = encode_value(value);
    {
      std::lock_guard<std::mutex> lock(mu_);
      if (used_ + bytes.size() > capacity_) {
        throw Error(ErrorCode::kSpillStoreFull, "spill directory " + dir_ + " over capacity");
      }
      used_ += bytes.size();
      sizes_[id] = bytes.size();
    }
    std::ofstream out(path(id), std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::kSpillStoreFull, "cannot write " + path(id));
  }

  Tensor take(std::uint64_t id) override {
    const std::string p = path(id);
    std::ifstream in(p, std::ios::binary);
    if (!in) throw Error(ErrorCode::kInternal, "spill file " + p + " missing");
    std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    std::filesystem::remove(p);
    {
      std::lock_guard<std::mutex> lock(mu_);
      used_ -= sizes_[id];
      sizes_.erase(id);
    }
    Bytes bytes(raw.size());
    std::memcpy(bytes.data(), raw.data(), raw.size());
    return *decode_value(bytes);
  }

  std::size_t stored_bytes() const override {
    std::lock_guard<std::mutex> lock(mu_);
    return used_;
  }

 private:
  std::string path(std::uint64_t id) const { return dir_ + "/spill_" + std::to_string(id) + ".bin"; }

  std::string dir_;
  std::size_t capacity_;
  mutable std::mutex mu_;
  std::unordered_map<std::uint64_t, std::size_t> sizes_;
  std::size_t used_ = 0;
};

}  // namespace

std::unique_ptr<SpillStore> make_spill_store(const SpillStoreConfig& config) {
  if (config.kind == SpillStoreConfig::Kind::kDirectory) {
    return std::make_unique<DirectorySpillStore>(config.directory, config.capacity);
  }
  return std::make_unique<MemorySpillStore>(config.capacity);
}

StackStore::StackStore(Options options)
    : options_(std::move(options)), store_(make_spill_store(options_.store)) {
  if (options_.spill_threshold) spill_thread_ = std::thread([this] { spill_loop(); });
}

StackStore::~StackStore() {
  try {
    close();
  } catch (...) {
  }
}

void StackStore::notify(StackAction a, const Entry& e, std::vector<Notification>& notes) {
  if (!options_.on_event) return;
  notes.push_back([this, a, stack = e.stack, key = e.key, bytes = e.bytes] { options_.on_event(a, stack, key, bytes); });
}

void StackStore::push(const std::string& stack, const Key& key, const Tensor& value) {
  std::vector<Notification> notes;
  {
    std::unique_lock<std::mutex> lock(mu_);
    EntryKey ek{stack, key};
    if (entries_.count(ek)) throw Error(ErrorCode::kInternal, key_string(stack, key) + " pushed twice");
    auto e = std::make_shared<Entry>();
    e->id = next_id_++;
    e->stack = stack;
    e->key = key;
    e->bytes = value.byte_size();
    e->value = value;
    ++stats_.pushes;
    history_[stack].emplace_back(StackAction::kPush, key);
    notify(StackAction::kPush, *e, notes);

    if (auto w = waiters_.find(ek); w != waiters_.end()) {
      // The pop got here first; hand the value over directly.
      auto done = std::move(w->second);
      waiters_.erase(w);
      ++stats_.pops;
      history_[stack].emplace_back(StackAction::kPop, key);
      notify(StackAction::kPop, *e, notes);
      notes.push_back([done = std::move(done), value] { done(value); });
    } else {
      entries_[ek] = e;
      by_age_[e->id] = e;
      resident_ += e->bytes;
      stats_.peak_resident_bytes = std::max(stats_.peak_resident_bytes, resident_);
      plan_spills_locked(notes);
      if (options_.resident_cap && resident_ > *options_.resident_cap) {
        throw Error(ErrorCode::kOutOfBudget, "resident stack bytes " + std::to_string(resident_) +
                                                 " exceed the cap of " + std::to_string(*options_.resident_cap));
      }
    }
  }
  for (auto& n : notes) n();
}

void StackStore::plan_spills_locked(std::vector<Notification>& notes) {
  if (!options_.spill_threshold) return;
  while (resident_ > *options_.spill_threshold) {
    std::shared_ptr<Entry> victim;
    for (auto& [id, e] : by_age_) {
      if (e->bytes >= kMinSpillBytes) {
        victim = e;
        break;
      }
    }
    if (!victim) return;
    by_age_.erase(victim->id);
    victim->state = State::kSpilling;
    resident_ -= victim->bytes;
    ++stats_.spills;
    notify(StackAction::kSpill, *victim, notes);
    spill_queue_.push_back(victim);
    cv_.notify_one();
  }
}

void StackStore::spill_loop() {
  for (;;) {
    std::shared_ptr<Entry> e;
    Tensor value;
    {
      std::unique_lock<std::mutex> lock(mu_);
      cv_.wait(lock, [&] { return stopping_ || !spill_queue_.empty(); });
      if (spill_queue_.empty()) return;
      e = spill_queue_.front();
      spill_queue_.pop_front();
      value = *e->value;
    }
    std::exception_ptr failure;
    try {
      store_->put(e->id, value);
    } catch (...) {
      failure = std::current_exception();
    }
    std::vector<Notification> notes;
    {
      std::unique_lock<std::mutex> lock(mu_);
      if (failure) {
        if (!spill_error_) spill_error_ = failure;
        if (e->waiting_pop) {
          notes.push_back([done = std::move(e->waiting_pop), value] { done(value); });
        } else {
          e->state = State::kResident;
          by_age_[e->id] = e;
          resident_ += e->bytes;
        }
      } else if (e->waiting_pop) {
        // Popped while being written out; read it straight back.
        auto done = std::move(e->waiting_pop);
        lock.unlock();
        Tensor back = store_->take(e->id);
        lock.lock();
        ++stats_.restores;
        notify(StackAction::kRestore, *e, notes);
        notes.push_back([done = std::move(done), back] { done(back); });
      } else {
        e->state = State::kSpilled;
        e->value.reset();
      }
    }
    for (auto& n : notes) n();
    if (failure && options_.on_error) options_.on_error(failure);
  }
}

void StackStore::pop(const std::string& stack, const Key& key, std::function<void(Tensor)> done) {
  std::vector<Notification> notes;
  std::shared_ptr<Entry> spilled;
  {
    std::lock_guard<std::mutex> lock(mu_);
    EntryKey ek{stack, key};
    auto it = entries_.find(ek);
    if (it == entries_.end()) {
      if (waiters_.count(ek)) throw Error(ErrorCode::kInternal, key_string(stack, key) + " popped twice");
      waiters_[ek] = std::move(done);
      return;
    }
    auto e = it->second;
    entries_.erase(it);
    ++stats_.pops;
    history_[stack].emplace_back(StackAction::kPop, key);
    notify(StackAction::kPop, *e, notes);
    switch (e->state) {
      case State::kResident:
        by_age_.erase(e->id);
        resident_ -= e->bytes;
        notes.push_back([done = std::move(done), v = *e->value] { done(v); });
        break;
      case State::kSpilling:
        e->waiting_pop = std::move(done);
        break;
      case State::kSpilled:
        spilled = e;
        break;
    }
  }
  if (spilled) {
    Tensor back = store_->take(spilled->id);
    {
      std::lock_guard<std::mutex> lock(mu_);
      ++stats_.restores;
      notify(StackAction::kRestore, *spilled, notes);
    }
    notes.push_back([done = std::move(done), back] { done(back); });
  }
  for (auto& n : notes) n();
}

std::size_t StackStore::waiting_pops() const {
  std::lock_guard<std::mutex> lock(mu_);
  return waiters_.size();
}

std::vector<std::string> StackStore::waiting_descriptions() const {
  std::lock_guard<std::mutex> lock(mu_);
  std::vector<std::string> out;
  for (const auto& [ek, fn] : waiters_) out.push_back(key_string(ek.first, ek.second));
  return out;
}

std::size_t StackStore::resident_bytes() const {
  std::lock_guard<std::mutex> lock(mu_);
  return resident_;
}

StackStore::Stats StackStore::stats() const {
  std::lock_guard<std::mutex> lock(mu_);
  return stats_;
}

std::map<std::string, std::vector<std::pair<StackAction, StackStore::Key>>> StackStore::history() const {
  std::lock_guard<std::mutex> lock(mu_);
  return history_;
}

void StackStore::close() {
  {
    std::lock_guard<std::mutex> lock(mu_);
    stopping_ = true;
  }
  cv_.notify_all();
  if (spill_thread_.joinable()) spill_thread_.join();
  std::lock_guard<std::mutex> lock(mu_);
  if (spill_error_) {
    auto e = spill_error_;
    spill_error_ = nullptr;
    std::rethrow_exception(e);
  }
}

}  // namespace loomflow
