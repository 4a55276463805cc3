#include "adg/transport.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>

#include "adg/async_core.hpp"

namespace adg {

MachinePool::MachinePool(std::size_t threads) {
  require(threads >= 1, "MachinePool: at least one thread");
  threads_.reserve(threads);
  for (std::size_t i = 0; i < threads; ++i) threads_.emplace_back([this, i] { loop(i); });
}

MachinePool::~MachinePool() {
  {
    std::lock_guard lock(mu_);
    shutdown_ = true;
  }
  start_cv_.notify_all();
  for (auto& t : threads_) t.join();
}

void MachinePool::run(const std::function<void(std::size_t)>& task) {
  std::unique_lock lock(mu_);
  task_ = &task;
  pending_ = threads_.size();
  error_ = nullptr;
  ++generation_;
  start_cv_.notify_all();
  done_cv_.wait(lock, [this] { return pending_ == 0; });
  task_ = nullptr;
  if (error_) std::rethrow_exception(error_);
}

void MachinePool::loop(std::size_t id) {
  std::uint64_t seen = 0;
  for (;;) {
    const std::function<void(std::size_t)>* task = nullptr;
    {
      std::unique_lock lock(mu_);
      start_cv_.wait(lock, [&] { return shutdown_ || generation_ != seen; });
      if (shutdown_) return;
      seen = generation_;
      task = task_;
    }
    std::exception_ptr err;
    try {
      (*task)(id);
    } catch (...) {
      err = std::current_exception();
    }
    std::lock_guard lock(mu_);
    if (err && !error_) error_ = err;
    if (--pending_ == 0) done_cv_.notify_one();
  }
}

void for_each_machine(MachinePool* pool, std::size_t n,
                      const std::function<void(std::size_t)>& task) {
  if (pool) {
    require(pool->size() == n, "for_each_machine: pool size mismatch");
    pool->run(task);
  } else {
    for (std::size_t i = 0; i < n; ++i) task(i);
  }
}

namespace {

using Clock = std::chrono::steady_clock;
constexpr std::size_t kMailboxCapacity = 4;

std::uint64_t micros_since(Clock::time_point t0) {
  return static_cast<std::uint64_t>(
      std::chrono::duration_cast<std::chrono::microseconds>(Clock::now() - t0).count());
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct WorkerLog {
  std::vector<TraceEvent> events;
  CommStats comm;
  std::uint64_t epochs = 0;
  std::uint64_t last_round = 0;
  std::exception_ptr error;
  std::string error_what;
};

}  // namespace

RunResult run_threaded(WorkerSet& workers, const ParamVector& initial,
                       const ProtocolOptions& options, const Evaluator& evaluate) {
  const std::size_t m = workers.size();
  require(m >= 1, "run_threaded: no machines");
  const auto t0 = Clock::now();

  std::vector<std::unique_ptr<Mailbox<WorkerMessage>>> to_master;
  std::vector<std::unique_ptr<Mailbox<MasterBroadcast>>> to_worker;
  for (std::size_t j = 0; j < m; ++j) {
    to_master.push_back(std::make_unique<Mailbox<WorkerMessage>>(kMailboxCapacity));
    to_worker.push_back(std::make_unique<Mailbox<MasterBroadcast>>(kMailboxCapacity));
  }
  std::vector<WorkerLog> logs(m);
  std::atomic<bool> stop{false};
  std::atomic<bool> failed{false};

  RunResult res;
  res.comm = options.start_comm;
  std::vector<ParamVector> locals;
  for (const auto& w : workers) locals.push_back(w->local_state());

  auto worker_loop = [&](std::size_t j) {
    WorkerLog& log = logs[j];
    ParamVector last_local = initial;
    try {
      while (!stop.load(std::memory_order_acquire)) {
        const auto c0 = Clock::now();
        auto inbox = to_worker[j]->drain();
        log.comm.time_in_calls += seconds_since(c0);
        std::optional<MasterBroadcast> fresh;
        for (auto& b : inbox) {
          log.comm.receives++;
          if (b.master_round > log.last_round && (!fresh || b.master_round > fresh->master_round)) {
            fresh = std::move(b);
          }
        }
        if (fresh) log.last_round = fresh->master_round;
        ParamVector basis = worker_select_basis(fresh, last_local);
        ParamVector payload = workers[j]->local_epoch(basis);
        last_local = payload;
        const std::uint64_t epoch = ++log.epochs;
        const std::uint64_t tick = micros_since(t0);
        log.events.push_back({EventKind::send, tick, static_cast<std::int64_t>(j), epoch,
                              log.last_round, std::nullopt, digest(payload)});
        ++log.comm.sends;
        const auto c1 = Clock::now();
        if (to_master[j]->push({j, std::move(payload), epoch, tick, workers[j]->local_state()})) {
          ++log.comm.dropped;
        }
        log.comm.time_in_calls += seconds_since(c1);
      }
    } catch (const std::exception& e) {
      log.error = std::current_exception();
      log.error_what = e.what();
      failed.store(true, std::memory_order_release);
    }
    for (auto& b : to_worker[j]->drain()) {
      log.comm.receives++;
      log.last_round = std::max(log.last_round, b.master_round);
    }
  };

  std::vector<std::thread> threads;
  for (std::size_t j = 1; j < m; ++j) threads.emplace_back(worker_loop, j);

  MasterTable table(m, initial);
  StopTracker tracker(options);
  ParamVector w_bar = initial;
  ParamVector basis = initial;
  std::uint64_t round = 0;
  std::uint64_t master_epochs = 0;
  std::exception_ptr master_error;
  std::string master_what;

  auto ingest = [&](WorkerMessage msg) {
    const auto worker = static_cast<std::int64_t>(msg.worker_id);
    const std::uint64_t epoch = msg.local_epoch;
    const std::uint64_t dig = digest(msg.payload);
    ++res.comm.receives;
    const bool applied = master_ingest(table, std::move(msg), &res.comm);
    res.trace.events.push_back({applied ? EventKind::ingest : EventKind::drop, micros_since(t0),
                                worker, epoch, round, std::nullopt, dig});
  };
  auto aggregate_and_broadcast = [&] {
    w_bar = master_aggregate(table);
    ++round;
    const std::uint64_t tick = micros_since(t0);
    res.trace.events.push_back(
        {EventKind::aggregate, tick, -1, master_epochs, round, std::nullopt, digest(w_bar)});
    res.trace.events.push_back(
        {EventKind::broadcast, tick, -1, master_epochs, round, std::nullopt, digest(w_bar)});
    ++res.comm.broadcasts;
    if (options.record_payloads) res.trace.broadcasts.push_back({w_bar, round});
    const auto c0 = Clock::now();
    for (std::size_t j = 1; j < m; ++j) to_worker[j]->push({w_bar, round});
    res.comm.time_in_calls += seconds_since(c0);
  };

  try {
    for (;;) {
      if (failed.load(std::memory_order_acquire)) break;
      ParamVector payload;
      try {
        payload = workers[0]->local_epoch(basis);
      } catch (const DivergedError& e) {
        master_error = std::current_exception();
        master_what = e.what();
        break;
      }
      ++master_epochs;
      ++res.comm.sends;
      res.trace.events.push_back({EventKind::send, micros_since(t0), 0, master_epochs, round,
                                  std::nullopt, digest(payload)});
      ingest({0, std::move(payload), master_epochs, micros_since(t0), {}});
      const auto c0 = Clock::now();
      std::vector<std::vector<WorkerMessage>> inboxes;
      for (std::size_t j = 1; j < m; ++j) inboxes.push_back(to_master[j]->drain());
      res.comm.time_in_calls += seconds_since(c0);
      for (auto& inbox : inboxes) {
        for (auto& msg : inbox) {
          const std::size_t j = msg.worker_id;
          if (msg.local_epoch > table.rounds_seen(j)) locals[j] = msg.local_snapshot;
          ingest(std::move(msg));
          if (options.broadcast_on_ingest) aggregate_and_broadcast();
        }
      }
      aggregate_and_broadcast();
      basis = w_bar;
      ++res.master_rounds;
      locals[0] = workers[0]->local_state();
      Evaluation eval;
      if (evaluate) {
        eval = evaluate(w_bar, locals);
        res.trace.events[res.trace.events.size() - 2].objective = eval.train_objective;
      }
      res.rows.push_back({seconds_since(t0), micros_since(t0), master_epochs, eval.train_objective,
                          eval.validation_objective, eval.test_metric, res.comm.sends,
                          res.comm.time_in_calls});
      std::optional<StopReason> why;
      if (evaluate) {
        why = tracker.record(master_epochs, eval);
      } else if (master_epochs >= options.max_epochs) {
        why = StopReason::max_epochs;
      }
      if (why) {
        res.stop = *why;
        break;
      }
    }
  } catch (...) {
    stop.store(true, std::memory_order_release);
    for (auto& t : threads) t.join();
    throw;
  }
  stop.store(true, std::memory_order_release);
  for (auto& t : threads) t.join();

  res.worker_epochs.assign(m, 0);
  res.rounds_received.assign(m, round);
  res.worker_epochs[0] = master_epochs;
  for (std::size_t j = 1; j < m; ++j) {
    const auto& log = logs[j];
    res.worker_epochs[j] = log.epochs;
    res.rounds_received[j] = log.last_round;
    res.comm.sends += log.comm.sends;
    res.comm.receives += log.comm.receives;
    res.comm.dropped += log.comm.dropped;
    res.comm.time_in_calls += log.comm.time_in_calls;
    res.trace.events.insert(res.trace.events.end(), log.events.begin(), log.events.end());
  }
  std::stable_sort(res.trace.events.begin(), res.trace.events.end(),
                   [](const TraceEvent& a, const TraceEvent& b) { return a.tick < b.tick; });

  if (master_error) throw RunDiverged("machine 0 diverged: " + master_what, res.comm, res.trace, 0);
  for (std::size_t j = 1; j < m; ++j) {
    if (logs[j].error) {
      throw RunDiverged("machine " + std::to_string(j) + " failed: " + logs[j].error_what,
                        res.comm, res.trace, j);
    }
  }
  res.shared = w_bar;
  res.locals = std::move(locals);
  res.logical_ticks = micros_since(t0);
  res.wall_seconds = seconds_since(t0);
  return res;
}

}  // namespace adg
