#pragma once

// Master/worker parameter exchange: workers send their parameters after full
// local epochs, the master keeps the latest copy per worker, averages and
// broadcasts. Machine 0 hosts the master and also runs local epochs.

#include <chrono>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "adg/metrics.hpp"
#include "adg/sim_scheduler.hpp"
#include "adg/types.hpp"
#include "adg/workers.hpp"

namespace adg {

struct WorkerMessage {
  std::size_t worker_id = 0;
  ParamVector payload;
  std::uint64_t local_epoch = 0;
  std::uint64_t wall_tick = 0;
  ParamVector local_snapshot;  // evaluation side channel, not part of the protocol payload
};

struct MasterBroadcast {
  ParamVector payload;
  std::uint64_t master_round = 0;
};

struct CommStats {
  std::uint64_t sends = 0;
  std::uint64_t receives = 0;
  std::uint64_t broadcasts = 0;
  std::uint64_t gathers = 0;
  std::uint64_t barriers = 0;
  std::uint64_t dropped = 0;  // stale messages ignored by latest-wins ingestion
  double time_in_calls = 0.0;  // logical ticks (simulated) or seconds (threaded)

  std::uint64_t total_calls() const { return sends + receives + broadcasts + gathers; }
  bool operator==(const CommStats&) const = default;
};

// Latest payload per worker; every slot starts at the shared initial parameter.
class MasterTable {
 public:
  MasterTable(std::size_t machines, const ParamVector& initial);

  std::size_t size() const { return slots_.size(); }
  const ParamVector& slot(std::size_t j) const { return slots_.at(j); }
  std::span<const ParamVector> slots() const { return slots_; }
  std::uint64_t rounds_seen(std::size_t j) const { return rounds_seen_.at(j); }

  friend bool master_ingest(MasterTable& table, WorkerMessage msg, CommStats* stats);

 private:
  std::vector<ParamVector> slots_;
  std::vector<std::uint64_t> rounds_seen_;
};

// Overwrites slot msg.worker_id iff msg.local_epoch is newer; stale messages
// are counted in stats->dropped and otherwise ignored. Returns whether applied.
bool master_ingest(MasterTable& table, WorkerMessage msg, CommStats* stats = nullptr);

// Elementwise mean of the slots.
ParamVector master_aggregate(const MasterTable& table);

// `fresh_broadcast` is the newest broadcast received since the worker's
// previous epoch start, if any.
const ParamVector& worker_select_basis(const std::optional<MasterBroadcast>& fresh_broadcast,
                                       const ParamVector& last_local);

enum class EventKind { send, ingest, drop, aggregate, broadcast };

const char* to_string(EventKind k);
EventKind parse_event_kind(const std::string& s);

struct TraceEvent {
  EventKind kind = EventKind::send;
  std::uint64_t tick = 0;
  std::int64_t worker = -1;  // -1 for master-wide events
  std::uint64_t epoch = 0;
  std::uint64_t master_round = 0;
  std::optional<double> objective;
  std::uint64_t payload_digest = 0;

  bool operator==(const TraceEvent&) const = default;
};

struct RunTrace {
  std::vector<TraceEvent> events;
  std::vector<MasterBroadcast> broadcasts;  // filled when payload recording is on

  void write_jsonl(std::ostream& out) const;
  static RunTrace read_jsonl(std::istream& in);
};

enum class StopReason { plateau, max_epochs, target, observer };

const char* to_string(StopReason r);

struct Evaluation {
  double train_objective = 0.0;
  double validation_objective = 0.0;
  double test_metric = 0.0;
};

// Evaluates the current model from the shared parameter and the workers'
// private states (one entry per machine, possibly empty).
using Evaluator =
    std::function<Evaluation(std::span<const double> shared, std::span<const ParamVector> locals)>;

struct RunResult {
  RunTrace trace;
  CommStats comm;
  ParamVector shared;
  std::vector<ParamVector> locals;
  std::vector<MetricsRow> rows;
  std::uint64_t logical_ticks = 0;
  std::uint64_t master_rounds = 0;
  std::vector<std::uint64_t> worker_epochs;
  std::vector<std::uint64_t> rounds_received;  // newest broadcast seen per machine (threaded)
  StopReason stop = StopReason::max_epochs;
  double wall_seconds = 0.0;
};

// A worker diverged; carries everything recorded up to the failure.
class RunDiverged : public Error {
 public:
  RunDiverged(const std::string& what, CommStats comm, RunTrace trace, std::size_t worker)
      : Error(what), comm_(comm), trace_(std::move(trace)), worker_(worker) {}
  const CommStats& comm() const { return comm_; }
  const RunTrace& trace() const { return trace_; }
  std::size_t worker() const { return worker_; }

 private:
  CommStats comm_;
  RunTrace trace_;
  std::size_t worker_;
};

struct ProtocolOptions {
  std::size_t max_epochs = 100;  // master epochs (rounds in the delay-schedule simulator)
  double epsilon = 1e-4;
  std::optional<double> target_validation;  // stop once validation objective <= target
  bool lower_is_better_target = true;
  bool broadcast_on_ingest = false;
  bool record_payloads = false;
  std::uint64_t start_tick = 0;   // offset, e.g. after a synchronous warm start
  CommStats start_comm;           // counts carried over from a warm start
  // Called after every aggregation in the delay-schedule simulator; returning
  // true stops the run.
  std::function<bool(const AggregationEvent&, std::span<const double> w_bar)> observer;
};

// Delay-schedule simulator: one aggregation per tick. At round k every machine
// completes a local epoch from w_bar^{k - d(i,k)}; the master then averages.
RunResult simulate_rounds(WorkerSet& workers, const ParamVector& initial,
                          const DelaySchedule& schedule, const ProtocolOptions& options,
                          const Evaluator& evaluate);

// Event-driven simulator with per-machine compute and communication times.
// Within one tick: worker completions, then deliveries, then the master's
// completion, then epoch starts (so arrivals at tick t are visible to epochs
// starting at tick t).
RunResult simulate_timed(WorkerSet& workers, const ParamVector& initial,
                         std::span<const MachineModel> machines, const ProtocolOptions& options,
                         const Evaluator& evaluate);

// One thread per machine; message passing through bounded latest-wins mailboxes.
RunResult run_threaded(WorkerSet& workers, const ParamVector& initial,
                       const ProtocolOptions& options, const Evaluator& evaluate);

// Shared stopping logic for every driver.
class StopTracker {
 public:
  explicit StopTracker(const ProtocolOptions& options) : options_(options) {}
  std::optional<StopReason> record(std::size_t epochs_done, const Evaluation& e);

 private:
  const ProtocolOptions& options_;
  std::vector<double> history_;
};

}  // namespace adg
