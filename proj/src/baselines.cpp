#include "adg/baselines.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <deque>
#include <numeric>
#include <set>

namespace adg {

StratumSchedule make_strata(std::size_t m) {
  require(m >= 1, "make_strata: m must be positive");
  StratumSchedule s;
  s.strata.resize(m);
  for (std::size_t k = 0; k < m; ++k) {
    for (std::size_t r = 0; r < m; ++r) s.strata[k].blocks.emplace_back(r, (r + k) % m);
  }
  return s;
}

bool is_valid_schedule(const StratumSchedule& schedule, std::size_t m) {
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (const auto& stratum : schedule.strata) {
    std::set<std::size_t> rows, cols;
    for (const auto& [r, c] : stratum.blocks) {
      if (r >= m || c >= m) return false;
      if (!rows.insert(r).second || !cols.insert(c).second) return false;
      if (!seen.insert({r, c}).second) return false;
    }
  }
  return seen.size() == m * m;
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Ticks of one barriered exchange: slowest compute plus send, then the broadcast.
std::uint64_t barrier_round_ticks(std::span<const MachineModel> machines,
                                  const std::vector<std::uint64_t>& compute) {
  if (machines.empty()) return 1;
  std::uint64_t gather = 0, bcast = 0;
  for (std::size_t j = 0; j < machines.size(); ++j) {
    gather = std::max(gather, compute[j] + machines[j].comm_ticks);
    bcast = std::max(bcast, machines[j].comm_ticks);
  }
  return gather + bcast;
}

std::vector<std::uint64_t> epoch_compute(std::span<const MachineModel> machines) {
  std::vector<std::uint64_t> out;
  for (const auto& mm : machines) out.push_back(mm.compute_ticks_per_epoch);
  return out;
}

void check_machines(std::span<const MachineModel> machines, std::size_t m) {
  require(machines.empty() || machines.size() == m,
          "baseline: one machine model per machine required");
  for (const auto& mm : machines) validate(mm);
}

// Sums from zero, in machine order, like the master's aggregation.
ParamVector mean_of(const std::vector<ParamVector>& xs) {
  ParamVector sum(xs.front().size(), 0.0);
  for (std::size_t j = 0; j < xs.size(); ++j) {
    require(xs[j].size() == sum.size(), "baseline: payload dimension mismatch");
    for (std::size_t c = 0; c < sum.size(); ++c) sum[c] += xs[j][c];
  }
  const double m = static_cast<double>(xs.size());
  for (double& x : sum) x /= m;
  return sum;
}

void trace_send_ingest(RunTrace& trace, std::uint64_t tick, std::size_t j, std::uint64_t epoch,
                       std::uint64_t round, std::uint64_t dig) {
  const auto w = static_cast<std::int64_t>(j);
  trace.events.push_back({EventKind::send, tick, w, epoch, round, std::nullopt, dig});
  trace.events.push_back({EventKind::ingest, tick, w, epoch, round, std::nullopt, dig});
}

void trace_aggregate(RunTrace& trace, std::uint64_t tick, std::uint64_t epoch, std::uint64_t round,
                     std::span<const double> w_bar, std::optional<double> objective,
                     bool record_payloads) {
  const std::uint64_t dig = digest(w_bar);
  trace.events.push_back({EventKind::aggregate, tick, -1, epoch, round, objective, dig});
  trace.events.push_back({EventKind::broadcast, tick, -1, epoch, round, std::nullopt, dig});
  if (record_payloads) trace.broadcasts.push_back({ParamVector(w_bar.begin(), w_bar.end()), round});
}

// Evaluates, appends a metrics row and applies the stopping rule.
struct EpochBookkeeping {
  const ProtocolOptions& options;
  const Evaluator& evaluate;
  Clock::time_point t0 = Clock::now();
  StopTracker tracker{options};

  std::optional<StopReason> finish_epoch(RunResult& res, std::uint64_t tick, std::uint64_t epoch,
                                         std::span<const double> shared,
                                         std::span<const ParamVector> locals,
                                         TraceEvent* aggregate_event) {
    Evaluation eval;
    if (evaluate) {
      eval = evaluate(shared, locals);
      if (aggregate_event) aggregate_event->objective = eval.train_objective;
    }
    res.rows.push_back({seconds_since(t0), tick, epoch, eval.train_objective,
                        eval.validation_objective, eval.test_metric, res.comm.sends,
                        res.comm.time_in_calls});
    if (evaluate) return tracker.record(epoch, eval);
    if (epoch >= options.max_epochs) return StopReason::max_epochs;
    return std::nullopt;
  }
};

TraceEvent* last_aggregate(RunTrace& trace) {
  for (auto it = trace.events.rbegin(); it != trace.events.rend(); ++it) {
    if (it->kind == EventKind::aggregate) return &*it;
  }
  return nullptr;
}

}  // namespace

RunResult run_sync_gradient(std::span<const std::shared_ptr<const SmoothShard>> shards,
                            double gamma, const ParamVector& initial,
                            const BaselineOptions& options, const Evaluator& evaluate) {
  const std::size_t m = shards.size();
  require(m >= 1, "run_sync_gradient: no machines");
  check_machines(options.machines, m);
  const ProtocolOptions& proto = options.protocol;
  EpochBookkeeping book{proto, evaluate};

  RunResult res;
  res.comm = proto.start_comm;
  res.worker_epochs.assign(m, 0);
  ParamVector w_bar = initial;
  std::vector<ParamVector> payloads(m);
  const auto compute = epoch_compute(options.machines);
  std::uint64_t tick = proto.start_tick;

  for (std::uint64_t k = 0;; ++k) {
    for_each_machine(options.pool, m, [&](std::size_t j) {
      payloads[j] = gradient_local_step(w_bar, *shards[j], gamma);
    });
    tick += options.machines.empty() ? 1 : barrier_round_ticks(options.machines, compute);
    for (std::size_t j = 0; j < m; ++j) {
      const std::uint64_t epoch = ++res.worker_epochs[j];
      ++res.comm.sends;
      ++res.comm.receives;
      trace_send_ingest(res.trace, tick, j, epoch, k, digest(payloads[j]));
    }
    ++res.comm.gathers;
    ++res.comm.barriers;
    w_bar = mean_of(payloads);
    ++res.comm.broadcasts;
    ++res.master_rounds;
    trace_aggregate(res.trace, tick, k + 1, k + 1, w_bar, std::nullopt, proto.record_payloads);
    res.logical_ticks = tick;
    const std::vector<ParamVector> locals(m);
    const auto why =
        book.finish_epoch(res, tick, k + 1, w_bar, locals, &res.trace.events[res.trace.events.size() - 2]);
    if (why) {
      res.stop = *why;
      break;
    }
  }
  res.shared = std::move(w_bar);
  res.locals.assign(m, {});
  res.wall_seconds = seconds_since(book.t0);
  return res;
}

RngState svrg_machine_rng(const SvrgSetup& setup, std::size_t machine) {
  return RngState(setup.seed, machine);
}

namespace {

void validate_setup(const SvrgSetup& setup) {
  require(!setup.shards.empty(), "svrg baseline: no machines");
  validate(setup.cfg);
  validate(setup.loss);
  for (const auto& s : setup.shards) {
    require(s.size() >= setup.cfg.batch_size, "svrg baseline: shard smaller than batch");
  }
}

// g(w) - g(anchor) + mu on one mini-batch.
ParamVector variance_reduced_gradient(std::span<const double> w, std::span<const double> anchor,
                                      std::span<const double> mu,
                                      std::span<const LabeledExample> shard,
                                      const SvrgEpochConfig& cfg, const LogisticLossParams& loss,
                                      RngState& rng) {
  std::vector<std::size_t> batch(cfg.batch_size);
  for (auto& i : batch) i = rng.index(shard.size());
  const ParamVector g_now = logistic_grad(w, shard, batch, loss);
  const ParamVector g_anchor = logistic_grad(anchor, shard, batch, loss);
  ParamVector v(w.size());
  for (std::size_t c = 0; c < v.size(); ++c) v[c] = g_now[c] - g_anchor[c] + mu[c];
  return v;
}

std::vector<ParamVector> empty_locals(std::size_t m) { return std::vector<ParamVector>(m); }

}  // namespace

ParamVector synchronized_gradient_pass(const SvrgSetup& setup, const ParamVector& initial,
                                       CommStats& comm, MachinePool* pool) {
  validate_setup(setup);
  const std::size_t m = setup.shards.size();
  std::size_t steps = std::numeric_limits<std::size_t>::max();
  for (const auto& s : setup.shards) steps = std::min(steps, s.size() / setup.cfg.batch_size);
  const std::size_t b = setup.cfg.batch_size;
  ParamVector w = initial;
  std::vector<ParamVector> grads(m);
  for (std::size_t t = 0; t < steps; ++t) {
    for_each_machine(pool, m, [&](std::size_t j) {
      const auto& shard = setup.shards[j];
      grads[j] = logistic_grad(w, std::span(shard).subspan(t * b, b), setup.loss);
    });
    comm.sends += m;
    comm.receives += m;
    ++comm.gathers;
    ++comm.barriers;
    ++comm.broadcasts;
    const ParamVector avg = mean_of(grads);
    for (std::size_t c = 0; c < w.size(); ++c) w[c] -= setup.cfg.gamma * avg[c];
    if (!all_finite(w)) throw DivergedError("synchronized_gradient_pass: non-finite iterate", w, t);
  }
  return w;
}

RunResult run_sync_svrg(const SvrgSetup& setup, const ParamVector& initial,
                        const BaselineOptions& options, const Evaluator& evaluate) {
  validate_setup(setup);
  const std::size_t m = setup.shards.size();
  check_machines(options.machines, m);
  const ProtocolOptions& proto = options.protocol;
  EpochBookkeeping book{proto, evaluate};
  const SvrgEpochConfig& cfg = setup.cfg;

  RunResult res;
  res.comm = proto.start_comm;
  res.worker_epochs.assign(m, 0);
  std::vector<RngState> rngs;
  for (std::size_t j = 0; j < m; ++j) rngs.push_back(svrg_machine_rng(setup, j));
  // every machine holds its own copy of the parameter
  std::vector<ParamVector> copies(m, initial);
  std::vector<ParamVector> mu(m), v(m);
  std::vector<std::uint64_t> step_compute;
  for (const auto& mm : options.machines) {
    step_compute.push_back((mm.compute_ticks_per_epoch + cfg.t_max - 1) / cfg.t_max);
  }
  std::uint64_t tick = proto.start_tick;
  std::uint64_t round = 0;

  for (std::uint64_t epoch = 1;; ++epoch) {
    const std::vector<ParamVector> anchors = copies;
    for_each_machine(options.pool, m, [&](std::size_t j) {
      mu[j] = shard_mean_gradient(anchors[j], setup.shards[j], setup.loss);
    });
    for (std::size_t t = 0; t < cfg.t_max; ++t) {
      for_each_machine(options.pool, m, [&](std::size_t j) {
        v[j] = variance_reduced_gradient(copies[j], anchors[j], mu[j], setup.shards[j], cfg,
                                         setup.loss, rngs[j]);
      });
      tick += options.machines.empty() ? 1 : barrier_round_ticks(options.machines, step_compute);
      for (std::size_t j = 0; j < m; ++j) {
        ++res.comm.sends;
        ++res.comm.receives;
        trace_send_ingest(res.trace, tick, j, epoch, round, digest(v[j]));
      }
      ++res.comm.gathers;
      ++res.comm.barriers;
      // starts from the first machine's gradient so that m = 1 is exactly serial
      ParamVector avg = v[0];
      for (std::size_t j = 1; j < m; ++j) {
        for (std::size_t c = 0; c < avg.size(); ++c) avg[c] += v[j][c];
      }
      for (double& x : avg) x /= static_cast<double>(m);
      for (std::size_t j = 0; j < m; ++j) {
        auto& w = copies[j];
        for (std::size_t c = 0; c < w.size(); ++c) w[c] = w[c] - cfg.gamma * avg[c];
      }
      if (!all_finite(copies[0])) {
        throw RunDiverged("run_sync_svrg: non-finite iterate", res.comm, res.trace, 0);
      }
      for (std::size_t j = 1; j < m; ++j) {
        if (copies[j] != copies[0]) {
          throw ProtocolViolation("run_sync_svrg: machine parameters out of lockstep");
        }
      }
      ++res.comm.broadcasts;
      ++round;
      trace_aggregate(res.trace, tick, epoch, round, copies[0], std::nullopt,
                      proto.record_payloads);
    }
    for (auto& e : res.worker_epochs) e = epoch;
    res.master_rounds = round;
    res.logical_ticks = tick;
    const auto why = book.finish_epoch(res, tick, epoch, copies[0], empty_locals(m),
                                       last_aggregate(res.trace));
    if (why) {
      res.stop = *why;
      break;
    }
  }
  res.shared = copies[0];
  res.locals = empty_locals(m);
  res.wall_seconds = seconds_since(book.t0);
  return res;
}

RunResult run_async_svrg(const SvrgSetup& setup, const ParamVector& initial,
                         const DelaySchedule& schedule, const BaselineOptions& options,
                         const Evaluator& evaluate) {
  validate_setup(setup);
  const std::size_t m = setup.shards.size();
  require(schedule.machines() == m, "run_async_svrg: schedule machine count mismatch");
  const ProtocolOptions& proto = options.protocol;
  EpochBookkeeping book{proto, evaluate};
  const SvrgEpochConfig& cfg = setup.cfg;
  const double scale = cfg.gamma / static_cast<double>(m);

  RunResult res;
  res.comm = proto.start_comm;
  res.worker_epochs.assign(m, 0);
  std::vector<RngState> rngs;
  for (std::size_t j = 0; j < m; ++j) rngs.push_back(svrg_machine_rng(setup, j));
  std::vector<ParamVector> anchors(m), mu(m);
  std::vector<std::uint64_t> gradients(m, 0);
  ParamVector w = initial;
  // history[d] = w after round k - d
  std::deque<ParamVector> history{initial};

  for (std::uint64_t k = 0;; ++k) {
    const std::uint64_t tick = proto.start_tick + k + 1;
    for (std::size_t j = 0; j < m; ++j) {
      const std::size_t d = schedule.delay(j, k);
      require(d < history.size(), "run_async_svrg: delay exceeds the retained history");
      const ParamVector& basis = history[d];
      if (gradients[j] % cfg.t_max == 0) {
        anchors[j] = basis;
        mu[j] = shard_mean_gradient(anchors[j], setup.shards[j], setup.loss);
      }
      const ParamVector g = variance_reduced_gradient(basis, anchors[j], mu[j], setup.shards[j],
                                                      cfg, setup.loss, rngs[j]);
      ++gradients[j];
      ++res.comm.sends;
      ++res.comm.receives;
      trace_send_ingest(res.trace, tick, j, gradients[j], k, digest(g));
      for (std::size_t c = 0; c < w.size(); ++c) w[c] -= scale * g[c];
      if (!all_finite(w)) {
        throw RunDiverged("run_async_svrg: non-finite iterate", res.comm, res.trace, j);
      }
    }
    ++res.comm.broadcasts;
    ++res.master_rounds;
    trace_aggregate(res.trace, tick, (k + 1) / cfg.t_max, k + 1, w, std::nullopt,
                    proto.record_payloads);
    history.push_front(w);
    if (history.size() > schedule.d_max() + 1) history.pop_back();
    res.logical_ticks = tick;
    if ((k + 1) % cfg.t_max != 0) continue;
    const std::uint64_t epoch = (k + 1) / cfg.t_max;
    for (auto& e : res.worker_epochs) e = epoch;
    const auto why =
        book.finish_epoch(res, tick, epoch, w, empty_locals(m), last_aggregate(res.trace));
    if (why) {
      res.stop = *why;
      break;
    }
  }
  res.shared = std::move(w);
  res.locals = empty_locals(m);
  res.wall_seconds = seconds_since(book.t0);
  return res;
}

RunResult run_async_svrg_threaded(const SvrgSetup& setup, const ParamVector& initial,
                                  const BaselineOptions& options, const Evaluator& evaluate) {
  validate_setup(setup);
  const std::size_t m = setup.shards.size();
  const ProtocolOptions& proto = options.protocol;
  EpochBookkeeping book{proto, evaluate};
  const SvrgEpochConfig& cfg = setup.cfg;
  const double scale = cfg.gamma / static_cast<double>(m);
  constexpr std::size_t kGradientMailbox = 256;
  constexpr std::size_t kParamMailbox = 4;

  std::vector<std::unique_ptr<Mailbox<WorkerMessage>>> to_master;
  std::vector<std::unique_ptr<Mailbox<MasterBroadcast>>> to_worker;
  for (std::size_t j = 0; j < m; ++j) {
    to_master.push_back(std::make_unique<Mailbox<WorkerMessage>>(kGradientMailbox));
    to_worker.push_back(std::make_unique<Mailbox<MasterBroadcast>>(kParamMailbox));
  }
  std::atomic<bool> stop{false};
  std::vector<CommStats> worker_comm(m);
  std::vector<std::uint64_t> worker_grads(m, 0);
  std::vector<std::exception_ptr> errors(m);

  auto worker_loop = [&](std::size_t j) {
    RngState rng = svrg_machine_rng(setup, j);
    ParamVector w = initial, anchor, mu;
    try {
      while (!stop.load(std::memory_order_acquire)) {
        for (auto& b : to_worker[j]->drain()) {
          ++worker_comm[j].receives;
          w = std::move(b.payload);
        }
        if (worker_grads[j] % cfg.t_max == 0) {
          anchor = w;
          mu = shard_mean_gradient(anchor, setup.shards[j], setup.loss);
        }
        ParamVector g =
            variance_reduced_gradient(w, anchor, mu, setup.shards[j], cfg, setup.loss, rng);
        const std::uint64_t n = ++worker_grads[j];
        ++worker_comm[j].sends;
        if (to_master[j]->push({j, std::move(g), n, 0, {}})) ++worker_comm[j].dropped;
      }
    } catch (...) {
      errors[j] = std::current_exception();
      stop.store(true, std::memory_order_release);
    }
  };
  std::vector<std::thread> threads;
  for (std::size_t j = 1; j < m; ++j) threads.emplace_back(worker_loop, j);

  RunResult res;
  res.comm = proto.start_comm;
  RngState rng = svrg_machine_rng(setup, 0);
  ParamVector w = initial, anchor, mu;
  std::uint64_t own = 0, round = 0;
  auto apply = [&](const ParamVector& g) {
    for (std::size_t c = 0; c < w.size(); ++c) w[c] -= scale * g[c];
  };
  try {
    while (!stop.load(std::memory_order_acquire)) {
      if (own % cfg.t_max == 0) {
        anchor = w;
        mu = shard_mean_gradient(anchor, setup.shards[0], setup.loss);
      }
      apply(variance_reduced_gradient(w, anchor, mu, setup.shards[0], cfg, setup.loss, rng));
      ++own;
      ++res.comm.sends;
      ++res.comm.receives;
      for (std::size_t j = 1; j < m; ++j) {
        for (auto& msg : to_master[j]->drain()) {
          ++res.comm.receives;
          apply(msg.payload);
        }
      }
      if (!all_finite(w)) throw DivergedError("run_async_svrg_threaded: non-finite iterate", w, own);
      ++round;
      ++res.comm.broadcasts;
      for (std::size_t j = 1; j < m; ++j) to_worker[j]->push({w, round});
      if (own % cfg.t_max != 0) continue;
      const std::uint64_t epoch = own / cfg.t_max;
      const auto why = book.finish_epoch(res, round, epoch, w, empty_locals(m), nullptr);
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
  for (std::size_t j = 1; j < m; ++j) {
    if (errors[j]) std::rethrow_exception(errors[j]);
    res.comm.sends += worker_comm[j].sends;
    res.comm.receives += worker_comm[j].receives;
    res.comm.dropped += worker_comm[j].dropped;
  }
  res.worker_epochs.assign(m, 0);
  res.worker_epochs[0] = own / cfg.t_max;
  for (std::size_t j = 1; j < m; ++j) res.worker_epochs[j] = worker_grads[j] / cfg.t_max;
  res.master_rounds = round;
  res.logical_ticks = round;
  res.shared = std::move(w);
  res.locals = empty_locals(m);
  res.wall_seconds = seconds_since(book.t0);
  return res;
}

WorkerSet make_mf_workers(const MfSetup& setup) {
  const std::size_t m = setup.block_ratings.size();
  require(m >= 1 && setup.p_blocks.size() == m, "make_mf_workers: inconsistent blocks");
  WorkerSet workers;
  for (std::size_t b = 0; b < m; ++b) {
    workers.push_back(std::make_unique<MfWorker>(setup.block_ratings[b], setup.p_blocks[b],
                                                 setup.n_items, setup.gamma, setup.loss,
                                                 RngState(setup.seed, b),
                                                 setup.block_ratings[b].size()));
  }
  return workers;
}

namespace {

std::vector<ParamVector> p_states(const WorkerSet& workers) {
  std::vector<ParamVector> out;
  for (const auto& w : workers) out.push_back(w->local_state());
  return out;
}

}  // namespace

RunResult run_asgd(const MfSetup& setup, const BaselineOptions& options,
                   const Evaluator& evaluate) {
  WorkerSet workers = make_mf_workers(setup);
  const std::size_t m = workers.size();
  check_machines(options.machines, m);
  const ProtocolOptions& proto = options.protocol;
  EpochBookkeeping book{proto, evaluate};
  const auto compute = epoch_compute(options.machines);

  RunResult res;
  res.comm = proto.start_comm;
  res.worker_epochs.assign(m, 0);
  ParamVector q = setup.q.data();
  std::vector<ParamVector> payloads(m);
  std::vector<std::exception_ptr> errors(m);
  std::uint64_t tick = proto.start_tick;

  for (std::uint64_t epoch = 1;; ++epoch) {
    for_each_machine(options.pool, m, [&](std::size_t j) {
      try {
        payloads[j] = workers[j]->local_epoch(q);
      } catch (const DivergedError&) {
        errors[j] = std::current_exception();
      }
    });
    for (std::size_t j = 0; j < m; ++j) {
      if (errors[j]) {
        throw RunDiverged("run_asgd: machine " + std::to_string(j) + " diverged", res.comm,
                          res.trace, j);
      }
    }
    tick += options.machines.empty() ? 1 : barrier_round_ticks(options.machines, compute);
    for (std::size_t j = 0; j < m; ++j) {
      res.worker_epochs[j] = epoch;
      ++res.comm.sends;
      ++res.comm.receives;
      trace_send_ingest(res.trace, tick, j, epoch, epoch - 1, digest(payloads[j]));
    }
    ++res.comm.gathers;
    ++res.comm.barriers;
    q = mean_of(payloads);
    ++res.comm.broadcasts;
    ++res.master_rounds;
    trace_aggregate(res.trace, tick, epoch, epoch, q, std::nullopt, proto.record_payloads);
    res.logical_ticks = tick;
    const auto why =
        book.finish_epoch(res, tick, epoch, q, p_states(workers), last_aggregate(res.trace));
    if (why) {
      res.stop = *why;
      break;
    }
  }
  res.shared = std::move(q);
  res.locals = p_states(workers);
  res.wall_seconds = seconds_since(book.t0);
  return res;
}

DsgdState::DsgdState(const MfSetup& setup, std::span<const IndexRange> item_blocks)
    : item_blocks_(item_blocks.begin(), item_blocks.end()),
      p_blocks_(setup.p_blocks),
      q_(setup.q),
      gamma_(setup.gamma),
      loss_(setup.loss) {
  const std::size_t m = setup.block_ratings.size();
  require(m >= 1 && p_blocks_.size() == m, "DsgdState: inconsistent user blocks");
  require(item_blocks_.size() == m, "DsgdState: one item block per machine required");
  require(q_.rows() == setup.n_items, "DsgdState: Q row count mismatch");
  blocks_.resize(m * m);
  for (std::size_t r = 0; r < m; ++r) {
    for (const Rating& rt : setup.block_ratings[r]) {
      const auto it = std::find_if(item_blocks_.begin(), item_blocks_.end(),
                                   [&](const IndexRange& b) { return b.contains(rt.item); });
      require(it != item_blocks_.end(), "DsgdState: item outside every item block");
      const auto c = static_cast<std::size_t>(it - item_blocks_.begin());
      blocks_[r * m + c].push_back({rt.user, rt.item - it->begin, rt.value});
    }
    rngs_.emplace_back(setup.seed, r);
  }
}

void DsgdState::process_stratum(const Stratum& stratum, std::span<const std::size_t> order,
                                MachinePool* pool) {
  const std::size_t m = machines();
  require(stratum.blocks.size() == m && order.size() == m, "process_stratum: size mismatch");
  const std::size_t k = loss_.k_latent;
  auto run_block = [&](std::size_t idx) {
    const auto [r, c] = stratum.blocks.at(idx);
    const auto ratings = block(r, c);
    if (ratings.empty()) return;
    const IndexRange items = item_blocks_[c];
    FactorState fs{std::move(p_blocks_[r]), DenseMatrix(items.size(), k)};
    for (std::uint32_t i = 0; i < items.size(); ++i) {
      std::copy_n(q_.row(items.begin + i).begin(), k, fs.q_shared.row(i).begin());
    }
    try {
      mf_local_epoch(fs, ratings, gamma_, loss_, rngs_[r], ratings.size());
    } catch (...) {
      p_blocks_[r] = std::move(fs.p_block);
      throw;
    }
    for (std::uint32_t i = 0; i < items.size(); ++i) {
      std::copy_n(fs.q_shared.row(i).begin(), k, q_.row(items.begin + i).begin());
    }
    p_blocks_[r] = std::move(fs.p_block);
  };
  if (pool) {
    for_each_machine(pool, m, [&](std::size_t i) { run_block(order[i]); });
  } else {
    for (std::size_t idx : order) run_block(idx);
  }
}

RunResult run_dsgd(const MfSetup& setup, const BaselineOptions& options, DsgdOptions dsgd,
                   const Evaluator& evaluate) {
  const std::size_t m = setup.block_ratings.size();
  check_machines(options.machines, m);
  const auto item_blocks = equal_ranges(setup.n_items, m);
  DsgdState state(setup, item_blocks);
  const StratumSchedule schedule = make_strata(m);
  const ProtocolOptions& proto = options.protocol;
  EpochBookkeeping book{proto, evaluate};
  RngState order_rng(setup.seed, 0x2000);

  RunResult res;
  res.comm = proto.start_comm;
  res.worker_epochs.assign(m, 0);
  std::vector<std::size_t> strata_order(m), identity(m);
  std::iota(identity.begin(), identity.end(), 0);
  std::uint64_t tick = proto.start_tick;
  std::uint64_t round = 0;
  auto locals = [&] {
    std::vector<ParamVector> out;
    for (const auto& p : state.p_blocks()) out.push_back(p.data());
    return out;
  };

  for (std::uint64_t epoch = 1;; ++epoch) {
    std::iota(strata_order.begin(), strata_order.end(), 0);
    if (dsgd.shuffle_strata) {
      for (std::size_t i = m; i > 1; --i) std::swap(strata_order[i - 1], strata_order[order_rng.index(i)]);
    }
    for (std::size_t s : strata_order) {
      const Stratum& stratum = schedule.strata[s];
      try {
        state.process_stratum(stratum, identity, options.pool);
      } catch (const DivergedError& e) {
        throw RunDiverged(std::string("run_dsgd: ") + e.what(), res.comm, res.trace, 0);
      }
      std::vector<std::uint64_t> compute(m, 0);
      for (std::size_t i = 0; (i < m) && !options.machines.empty(); ++i) {
        const auto [r, c] = stratum.blocks[i];
        const std::size_t row_total = std::max<std::size_t>(1, setup.block_ratings[r].size());
        const std::uint64_t full = options.machines[r].compute_ticks_per_epoch;
        compute[r] = (full * state.block(r, c).size() + row_total - 1) / row_total;
      }
      tick += options.machines.empty() ? 1 : barrier_round_ticks(options.machines, compute);
      for (std::size_t r = 0; r < m; ++r) {
        ++res.comm.sends;
        ++res.comm.receives;
        trace_send_ingest(res.trace, tick, r, epoch, round, digest(state.p_blocks()[r].data()));
      }
      ++res.comm.barriers;
      ++res.comm.gathers;
      ++res.comm.broadcasts;
      ++round;
      trace_aggregate(res.trace, tick, epoch, round, state.q().data(), std::nullopt,
                      proto.record_payloads);
    }
    for (auto& e : res.worker_epochs) e = epoch;
    res.master_rounds = round;
    res.logical_ticks = tick;
    const auto why = book.finish_epoch(res, tick, epoch, state.q().data(), locals(),
                                       last_aggregate(res.trace));
    if (why) {
      res.stop = *why;
      break;
    }
  }
  res.shared = state.q().data();
  res.locals = locals();
  res.wall_seconds = seconds_since(book.t0);
  return res;
}

}  // namespace adg
