#include "adg/async_core.hpp"

#include <chrono>
#include <deque>
#include <istream>
#include <ostream>
#include <queue>

#include "json.hpp"

namespace adg {

MasterTable::MasterTable(std::size_t machines, const ParamVector& initial)
    : slots_(machines, initial), rounds_seen_(machines, 0) {
  require(machines >= 1, "MasterTable: at least one machine");
}

bool master_ingest(MasterTable& table, WorkerMessage msg, CommStats* stats) {
  if (msg.worker_id >= table.size()) {
    throw ProtocolViolation("master_ingest: worker id " + std::to_string(msg.worker_id) +
                            " out of range");
  }
  if (msg.local_epoch <= table.rounds_seen_[msg.worker_id]) {
    if (stats) ++stats->dropped;
    return false;
  }
  table.slots_[msg.worker_id] = std::move(msg.payload);
  table.rounds_seen_[msg.worker_id] = msg.local_epoch;
  return true;
}

ParamVector master_aggregate(const MasterTable& table) {
  const std::size_t dim = table.slot(0).size();
  ParamVector sum(dim, 0.0);
  for (const auto& s : table.slots()) {
    if (s.size() != dim) throw ProtocolViolation("master_aggregate: slot dimension mismatch");
    for (std::size_t j = 0; j < dim; ++j) sum[j] += s[j];
  }
  const double m = static_cast<double>(table.size());
  for (double& x : sum) x /= m;
  return sum;
}

const ParamVector& worker_select_basis(const std::optional<MasterBroadcast>& fresh_broadcast,
                                       const ParamVector& last_local) {
  return fresh_broadcast ? fresh_broadcast->payload : last_local;
}

const char* to_string(EventKind k) {
  switch (k) {
    case EventKind::send: return "send";
    case EventKind::ingest: return "ingest";
    case EventKind::drop: return "drop";
    case EventKind::aggregate: return "aggregate";
    case EventKind::broadcast: return "broadcast";
  }
  return "?";
}

EventKind parse_event_kind(const std::string& s) {
  for (auto k : {EventKind::send, EventKind::ingest, EventKind::drop, EventKind::aggregate,
                 EventKind::broadcast}) {
    if (s == to_string(k)) return k;
  }
  throw DataError("unknown trace event kind '" + s + "'");
}

const char* to_string(StopReason r) {
  switch (r) {
    case StopReason::plateau: return "plateau";
    case StopReason::max_epochs: return "max_epochs";
    case StopReason::target: return "target";
    case StopReason::observer: return "observer";
  }
  return "?";
}

void RunTrace::write_jsonl(std::ostream& out) const {
  for (const auto& e : events) {
    nlohmann::json j{{"kind", to_string(e.kind)},
                     {"tick", e.tick},
                     {"worker", e.worker},
                     {"epoch", e.epoch},
                     {"round", e.master_round},
                     {"digest", e.payload_digest}};
    if (e.objective) j["objective"] = *e.objective;
    out << j.dump() << '\n';
  }
}

RunTrace RunTrace::read_jsonl(std::istream& in) {
  RunTrace t;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    TraceEvent e;
    e.kind = parse_event_kind(j.at("kind").get<std::string>());
    e.tick = j.at("tick").get<std::uint64_t>();
    e.worker = j.at("worker").get<std::int64_t>();
    e.epoch = j.at("epoch").get<std::uint64_t>();
    e.master_round = j.at("round").get<std::uint64_t>();
    e.payload_digest = j.at("digest").get<std::uint64_t>();
    if (j.contains("objective")) e.objective = j.at("objective").get<double>();
    t.events.push_back(e);
  }
  return t;
}

std::optional<StopReason> StopTracker::record(std::size_t epochs_done, const Evaluation& e) {
  history_.push_back(e.validation_objective);
  if (options_.target_validation && e.validation_objective <= *options_.target_validation) {
    return StopReason::target;
  }
  if (should_stop(history_, options_.epsilon)) return StopReason::plateau;
  if (epochs_done >= options_.max_epochs) return StopReason::max_epochs;
  return std::nullopt;
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void push_event(RunTrace& trace, EventKind kind, std::uint64_t tick, std::int64_t worker,
                std::uint64_t epoch, std::uint64_t round, std::span<const double> payload,
                std::optional<double> objective = std::nullopt) {
  trace.events.push_back({kind, tick, worker, epoch, round, objective, digest(payload)});
}

std::vector<ParamVector> collect_locals(const WorkerSet& workers) {
  std::vector<ParamVector> out;
  out.reserve(workers.size());
  for (const auto& w : workers) out.push_back(w->local_state());
  return out;
}

ParamVector run_local(LocalWorker& worker, std::span<const double> basis, std::size_t machine,
                      const CommStats& comm, const RunTrace& trace) {
  try {
    return worker.local_epoch(basis);
  } catch (const DivergedError& e) {
    throw RunDiverged("machine " + std::to_string(machine) + " diverged: " + e.what(), comm,
                      trace, machine);
  }
}

MetricsRow make_row(double wall, std::uint64_t tick, std::uint64_t epoch, const Evaluation& e,
                    const CommStats& comm) {
  return {wall, tick, epoch, e.train_objective, e.validation_objective, e.test_metric,
          comm.sends, comm.time_in_calls};
}

}  // namespace

RunResult simulate_rounds(WorkerSet& workers, const ParamVector& initial,
                          const DelaySchedule& schedule, const ProtocolOptions& options,
                          const Evaluator& evaluate) {
  const std::size_t m = workers.size();
  require(m >= 1, "simulate_rounds: no machines");
  require(schedule.machines() == m, "simulate_rounds: schedule machine count mismatch");
  const auto t0 = Clock::now();

  RunResult res;
  res.comm = options.start_comm;
  res.worker_epochs.assign(m, 0);
  MasterTable table(m, initial);
  // history[d] = w_bar^{k-d}
  std::deque<ParamVector> history{initial};
  StopTracker stop(options);
  AggregationEvent event;

  for (std::uint64_t k = 0;; ++k) {
    const std::uint64_t tick = options.start_tick + k + 1;
    event.round = k;
    event.updated.clear();
    event.delays.clear();
    for (std::size_t i = 0; i < m; ++i) {
      const std::size_t d = schedule.delay(i, k);
      require(d < history.size(), "simulate_rounds: delay exceeds the retained history");
      ParamVector payload = run_local(*workers[i], history[d], i, res.comm, res.trace);
      const std::uint64_t epoch = ++res.worker_epochs[i];
      ++res.comm.sends;
      push_event(res.trace, EventKind::send, tick, static_cast<std::int64_t>(i), epoch, k, payload);
      const std::uint64_t dig = digest(payload);
      ++res.comm.receives;
      const bool applied = master_ingest(table, {i, std::move(payload), epoch, tick, {}}, &res.comm);
      res.trace.events.push_back({applied ? EventKind::ingest : EventKind::drop, tick,
                                  static_cast<std::int64_t>(i), epoch, k, std::nullopt, dig});
      event.updated.push_back(i);
      event.delays.push_back(d);
    }
    ParamVector w_bar = master_aggregate(table);
    ++res.master_rounds;
    Evaluation eval;
    std::optional<double> objective;
    if (evaluate) {
      eval = evaluate(w_bar, collect_locals(workers));
      objective = eval.train_objective;
    }
    push_event(res.trace, EventKind::aggregate, tick, -1, k + 1, k + 1, w_bar, objective);
    ++res.comm.broadcasts;
    push_event(res.trace, EventKind::broadcast, tick, -1, k + 1, k + 1, w_bar);
    if (options.record_payloads) res.trace.broadcasts.push_back({w_bar, k + 1});

    history.push_front(w_bar);
    if (history.size() > schedule.d_max() + 1) history.pop_back();
    event.slots = table.slots();

    res.rows.push_back(make_row(seconds_since(t0), tick, k + 1, eval, res.comm));
    res.logical_ticks = tick;
    res.shared = std::move(w_bar);

    if (options.observer && options.observer(event, res.shared)) {
      res.stop = StopReason::observer;
      break;
    }
    std::optional<StopReason> why;
    if (evaluate) {
      why = stop.record(k + 1, eval);
    } else if (k + 1 >= options.max_epochs) {
      why = StopReason::max_epochs;
    }
    if (why) {
      res.stop = *why;
      break;
    }
  }
  res.locals = collect_locals(workers);
  res.wall_seconds = seconds_since(t0);
  return res;
}

namespace {

enum class Phase : int { worker_done = 0, deliver = 1, master_done = 2, epoch_start = 3 };

enum class SimEventType { done, to_master, to_worker, start };

struct SimEvent {
  std::uint64_t tick;
  Phase phase;
  std::uint64_t seq;
  SimEventType type;
  std::size_t machine;
  WorkerMessage message;      // to_master
  MasterBroadcast broadcast;  // to_worker

  bool operator>(const SimEvent& o) const {
    if (tick != o.tick) return tick > o.tick;
    if (phase != o.phase) return static_cast<int>(phase) > static_cast<int>(o.phase);
    return seq > o.seq;
  }
};

struct MachineState {
  ParamVector basis;
  ParamVector last_local;
  std::optional<MasterBroadcast> fresh;
  std::uint64_t last_round_used = 0;
};

}  // namespace

RunResult simulate_timed(WorkerSet& workers, const ParamVector& initial,
                         std::span<const MachineModel> machines, const ProtocolOptions& options,
                         const Evaluator& evaluate) {
  const std::size_t m = workers.size();
  require(m >= 1, "simulate_timed: no machines");
  require(machines.size() == m, "simulate_timed: one machine model per worker required");
  for (const auto& mm : machines) validate(mm);
  const auto t0 = Clock::now();

  RunResult res;
  res.comm = options.start_comm;
  res.worker_epochs.assign(m, 0);
  MasterTable table(m, initial);
  StopTracker stop(options);
  std::vector<MachineState> state(m, MachineState{initial, initial, std::nullopt, 0});
  std::priority_queue<SimEvent, std::vector<SimEvent>, std::greater<>> queue;
  std::uint64_t seq = 0;
  std::uint64_t round = 0;
  ParamVector w_bar = initial;

  auto schedule = [&](std::uint64_t tick, Phase phase, SimEventType type, std::size_t machine,
                      WorkerMessage msg = {}, MasterBroadcast b = {}) {
    queue.push({tick, phase, seq++, type, machine, std::move(msg), std::move(b)});
  };
  auto aggregate_and_broadcast = [&](std::uint64_t tick, std::optional<double> objective) {
    w_bar = master_aggregate(table);
    ++round;
    push_event(res.trace, EventKind::aggregate, tick, -1, res.worker_epochs[0], round, w_bar,
               objective);
    ++res.comm.broadcasts;
    push_event(res.trace, EventKind::broadcast, tick, -1, res.worker_epochs[0], round, w_bar);
    if (options.record_payloads) res.trace.broadcasts.push_back({w_bar, round});
    MasterBroadcast b{w_bar, round};
    for (std::size_t j = 1; j < m; ++j) {
      res.comm.time_in_calls += static_cast<double>(machines[j].comm_ticks);
      schedule(tick + machines[j].comm_ticks, Phase::deliver, SimEventType::to_worker, j, {}, b);
    }
    state[0].fresh = std::move(b);
  };
  auto ingest = [&](std::uint64_t tick, WorkerMessage msg) {
    const auto worker = static_cast<std::int64_t>(msg.worker_id);
    const std::uint64_t epoch = msg.local_epoch;
    const std::uint64_t dig = digest(msg.payload);
    ++res.comm.receives;
    const bool applied = master_ingest(table, std::move(msg), &res.comm);
    res.trace.events.push_back({applied ? EventKind::ingest : EventKind::drop, tick, worker, epoch,
                                round, std::nullopt, dig});
  };

  for (std::size_t i = 0; i < m; ++i) {
    schedule(options.start_tick, Phase::epoch_start, SimEventType::start, i);
  }

  bool stopped = false;
  while (!stopped && !queue.empty()) {
    SimEvent ev = queue.top();
    queue.pop();
    const std::uint64_t tick = ev.tick;
    res.logical_ticks = tick;
    switch (ev.type) {
      case SimEventType::start: {
        auto& s = state[ev.machine];
        const bool use_fresh = s.fresh && s.fresh->master_round > s.last_round_used;
        const std::optional<MasterBroadcast> none;
        s.basis = worker_select_basis(use_fresh ? s.fresh : none, s.last_local);
        if (use_fresh) s.last_round_used = s.fresh->master_round;
        s.fresh.reset();
        const Phase done_phase = ev.machine == 0 ? Phase::master_done : Phase::worker_done;
        schedule(tick + machines[ev.machine].compute_ticks_per_epoch, done_phase,
                 SimEventType::done, ev.machine);
        break;
      }
      case SimEventType::done: {
        const std::size_t i = ev.machine;
        auto& s = state[i];
        ParamVector payload = run_local(*workers[i], s.basis, i, res.comm, res.trace);
        const std::uint64_t epoch = ++res.worker_epochs[i];
        s.last_local = payload;
        ++res.comm.sends;
        push_event(res.trace, EventKind::send, tick, static_cast<std::int64_t>(i), epoch, round,
                   payload);
        WorkerMessage msg{i, std::move(payload), epoch, tick, {}};
        if (i == 0) {
          ingest(tick, std::move(msg));
          aggregate_and_broadcast(tick, std::nullopt);
          ++res.master_rounds;
          Evaluation eval;
          if (evaluate) {
            eval = evaluate(w_bar, collect_locals(workers));
            // the aggregate event precedes its broadcast
            res.trace.events[res.trace.events.size() - 2].objective = eval.train_objective;
          }
          res.rows.push_back(make_row(seconds_since(t0), tick, epoch, eval, res.comm));
          std::optional<StopReason> why;
          if (evaluate) {
            why = stop.record(epoch, eval);
          } else if (epoch >= options.max_epochs) {
            why = StopReason::max_epochs;
          }
          if (why) {
            res.stop = *why;
            stopped = true;
            break;
          }
        } else {
          res.comm.time_in_calls += static_cast<double>(machines[i].comm_ticks);
          schedule(tick + machines[i].comm_ticks, Phase::deliver, SimEventType::to_master, i,
                   std::move(msg));
        }
        schedule(tick, Phase::epoch_start, SimEventType::start, i);
        break;
      }
      case SimEventType::to_master: {
        ingest(tick, std::move(ev.message));
        if (options.broadcast_on_ingest) aggregate_and_broadcast(tick, std::nullopt);
        break;
      }
      case SimEventType::to_worker: {
        auto& s = state[ev.machine];
        if (!s.fresh || ev.broadcast.master_round > s.fresh->master_round) {
          s.fresh = std::move(ev.broadcast);
        }
        break;
      }
    }
  }
  res.shared = w_bar;
  res.locals = collect_locals(workers);
  res.wall_seconds = seconds_since(t0);
  return res;
}

}  // namespace adg
