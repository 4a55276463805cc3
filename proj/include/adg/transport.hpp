#pragma once

// In-process message transport for the threaded backend.

#include <condition_variable>
#include <cstddef>
#include <deque>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

#include "adg/types.hpp"

namespace adg {

// Bounded single-producer single-consumer queue. A push into a full mailbox
// discards the oldest unread message.
template <typename T>
class Mailbox {
 public:
  explicit Mailbox(std::size_t capacity) : capacity_(capacity) {
    require(capacity >= 1, "Mailbox: capacity must be positive");
  }

  // Returns true iff an unread message was overwritten.
  bool push(T value) {
    bool overwrote = false;
    {
      std::lock_guard lock(mu_);
      if (queue_.size() == capacity_) {
        queue_.pop_front();
        overwrote = true;
      }
      queue_.push_back(std::move(value));
    }
    cv_.notify_one();
    return overwrote;
  }

  // All unread messages, oldest first.
  std::vector<T> drain() {
    std::lock_guard lock(mu_);
    std::vector<T> out(std::make_move_iterator(queue_.begin()),
                       std::make_move_iterator(queue_.end()));
    queue_.clear();
    return out;
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return queue_.size();
  }

 private:
  std::size_t capacity_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<T> queue_;
};

// Persistent worker threads; run() executes one task per machine and returns
// once every task has finished, which acts as a barrier.
class MachinePool {
 public:
  explicit MachinePool(std::size_t threads);
  ~MachinePool();
  MachinePool(const MachinePool&) = delete;
  MachinePool& operator=(const MachinePool&) = delete;

  std::size_t size() const { return threads_.size(); }

  // task(i) runs on thread i for i < size(); rethrows the first exception.
  void run(const std::function<void(std::size_t)>& task);

 private:
  void loop(std::size_t id);

  std::vector<std::thread> threads_;
  std::mutex mu_;
  std::condition_variable start_cv_;
  std::condition_variable done_cv_;
  const std::function<void(std::size_t)>* task_ = nullptr;
  std::uint64_t generation_ = 0;
  std::size_t pending_ = 0;
  bool shutdown_ = false;
  std::exception_ptr error_;
};

// Runs task(i) for every i < n, on `pool` when given, else sequentially.
void for_each_machine(MachinePool* pool, std::size_t n,
                      const std::function<void(std::size_t)>& task);

}  // namespace adg
