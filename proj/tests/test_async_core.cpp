#include <gtest/gtest.h>

#include <map>
#include <random>
#include <sstream>

#include "adg/async_core.hpp"
#include "test_support.hpp"

using namespace adg;
using adg::test::bitwise_equal;
using adg::test::random_vector;

namespace {

// Records every basis it is handed; the payload is basis + (machine + 1).
class RecordingWorker final : public LocalWorker {
 public:
  explicit RecordingWorker(std::size_t machine) : machine_(machine) {}
  ParamVector local_epoch(std::span<const double> basis) override {
    bases.emplace_back(basis.begin(), basis.end());
    ParamVector out(basis.begin(), basis.end());
    for (double& x : out) x += static_cast<double>(machine_ + 1);
    return out;
  }
  std::size_t work_units() const override { return 1; }
  std::vector<ParamVector> bases;

 private:
  std::size_t machine_;
};

class ExplodingWorker final : public LocalWorker {
 public:
  explicit ExplodingWorker(std::size_t after) : after_(after) {}
  ParamVector local_epoch(std::span<const double> basis) override {
    if (calls_++ >= after_) throw DivergedError("boom", ParamVector(basis.begin(), basis.end()), 0);
    return ParamVector(basis.begin(), basis.end());
  }
  std::size_t work_units() const override { return 1; }

 private:
  std::size_t after_;
  std::size_t calls_ = 0;
};

QuadraticProblem small_problem(std::size_t m, std::uint64_t seed) {
  return make_random_quadratic(m, 4, 8, seed);
}

WorkerSet gradient_workers(const QuadraticProblem& p, double gamma) {
  WorkerSet ws;
  for (const auto& s : p.shards) ws.push_back(std::make_unique<GradientWorker>(s, gamma, 1));
  return ws;
}

std::vector<RecordingWorker*> recording_workers(WorkerSet& ws, std::size_t m) {
  std::vector<RecordingWorker*> raw;
  for (std::size_t i = 0; i < m; ++i) {
    auto w = std::make_unique<RecordingWorker>(i);
    raw.push_back(w.get());
    ws.push_back(std::move(w));
  }
  return raw;
}

ProtocolOptions epochs(std::size_t n) {
  ProtocolOptions o;
  o.max_epochs = n;
  return o;
}

}  // namespace

TEST(MasterAggregate, Examples) {
  MasterTable t(2, ParamVector{0, 0});
  master_ingest(t, {0, {1, 3}, 1, 0, {}});
  master_ingest(t, {1, {3, 1}, 1, 0, {}});
  EXPECT_EQ(master_aggregate(t), (ParamVector{2, 2}));

  const ParamVector v{0.1, -7.5, 3.25};
  EXPECT_EQ(master_aggregate(MasterTable(4, v)), v);
}

TEST(MasterAggregate, MatchesBruteForceMean) {
  std::mt19937_64 gen(1);
  MasterTable t(5, ParamVector(6, 0.0));
  std::vector<ParamVector> vs;
  for (std::size_t j = 0; j < 5; ++j) {
    vs.push_back(random_vector(gen, 6));
    master_ingest(t, {j, vs.back(), 1, 0, {}});
  }
  const ParamVector mean = master_aggregate(t);
  for (std::size_t c = 0; c < 6; ++c) {
    double s = 0.0;
    for (const auto& v : vs) s += v[c];
    EXPECT_NEAR(mean[c], s / 5.0, 1e-12);
  }
}

TEST(MasterAggregate, DimensionMismatchIsProtocolViolation) {
  MasterTable t(2, ParamVector{0, 0});
  master_ingest(t, {1, {1, 2, 3}, 1, 0, {}});
  EXPECT_THROW(master_aggregate(t), ProtocolViolation);
}

TEST(MasterIngest, FreshReplayAndOutOfOrder) {
  MasterTable t(4, ParamVector{0});
  CommStats stats;
  EXPECT_TRUE(master_ingest(t, {3, {5}, 5, 0, {}}, &stats));
  EXPECT_EQ(t.slot(3), ParamVector{5});
  EXPECT_EQ(t.rounds_seen(3), 5u);

  EXPECT_FALSE(master_ingest(t, {3, {99}, 5, 0, {}}, &stats));
  EXPECT_EQ(t.slot(3), ParamVector{5});
  EXPECT_EQ(stats.dropped, 1u);

  EXPECT_TRUE(master_ingest(t, {3, {7}, 7, 0, {}}, &stats));
  EXPECT_FALSE(master_ingest(t, {3, {6}, 6, 0, {}}, &stats));
  EXPECT_EQ(t.slot(3), ParamVector{7});
  EXPECT_EQ(stats.dropped, 2u);
  EXPECT_EQ(t.slot(0), ParamVector{0});
}

TEST(MasterIngest, OutOfRangeWorkerIsProtocolViolation) {
  MasterTable t(2, ParamVector{0});
  EXPECT_THROW(master_ingest(t, {2, {1}, 1, 0, {}}), ProtocolViolation);
}

TEST(MasterIngest, RandomDeliveryOrderKeepsNewestPerWorker) {
  std::mt19937_64 gen(2);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<WorkerMessage> msgs;
    for (std::size_t j = 0; j < 3; ++j)
      for (std::uint64_t e = 1; e <= 6; ++e) msgs.push_back({j, {double(10 * j + e)}, e, 0, {}});
    std::shuffle(msgs.begin(), msgs.end(), gen);
    MasterTable t(3, ParamVector{0});
    std::vector<std::uint64_t> seen(3, 0);
    for (auto& m : msgs) {
      master_ingest(t, m);
      for (std::size_t j = 0; j < 3; ++j) {
        EXPECT_GE(t.rounds_seen(j), seen[j]);
        seen[j] = t.rounds_seen(j);
      }
    }
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(t.slot(j), ParamVector{double(10 * j + 6)});
  }
}

TEST(WorkerSelectBasis, BroadcastOrLastLocal) {
  const ParamVector local{1, 2};
  const std::optional<MasterBroadcast> b = MasterBroadcast{{3, 4}, 2};
  EXPECT_EQ(worker_select_basis(b, local), (ParamVector{3, 4}));
  EXPECT_EQ(worker_select_basis(std::nullopt, local), local);
}

TEST(SimulateTimed, ArrivalAtEpochStartIsVisible) {
  // Both machines finish at tick 2; the broadcast of round 1 reaches
  // machine 1 at tick 2 and is used by the epoch starting at tick 2.
  WorkerSet ws;
  auto raw = recording_workers(ws, 2);
  const std::vector<MachineModel> mm{{2, 0}, {2, 0}};
  const ParamVector init{0.0};
  const RunResult r = simulate_timed(ws, init, mm, epochs(3), {});
  ASSERT_GE(raw[1]->bases.size(), 2u);
  const double round1 = (1.0 + 2.0) / 2.0;
  EXPECT_EQ(raw[1]->bases[0], ParamVector{0.0});
  EXPECT_EQ(raw[1]->bases[1], ParamVector{round1});
  EXPECT_EQ(raw[0]->bases[1], ParamVector{round1});
  EXPECT_EQ(r.master_rounds, 3u);
}

TEST(SimulateTimed, LateArrivalFallsBackToLastLocal) {
  // Machine 1 needs comm 1 tick, so the round-1 broadcast arrives at tick 3
  // while its second epoch starts at tick 2 from its own last iterate.
  WorkerSet ws;
  auto raw = recording_workers(ws, 2);
  const std::vector<MachineModel> mm{{2, 0}, {2, 1}};
  simulate_timed(ws, ParamVector{0.0}, mm, epochs(4), {});
  ASSERT_GE(raw[1]->bases.size(), 3u);
  EXPECT_EQ(raw[1]->bases[1], ParamVector{2.0});
  // Master ingested nothing from machine 1 by tick 2: round 1 = (1 + 0) / 2.
  EXPECT_EQ(raw[1]->bases[2], ParamVector{0.5});
}

TEST(SimulateRounds, SingleMachineIsSerialGradientDescent) {
  const auto p = small_problem(1, 3);
  const double gamma = 1.0 / p.smoothness();
  auto ws = gradient_workers(p, gamma);
  const ParamVector init(4, 0.5);
  const RunResult r = simulate_rounds(ws, init, make_delay_schedule(DelayKind::constant, 0, 0, 1),
                                      epochs(25), {});
  ParamVector w = init;
  for (int k = 0; k < 25; ++k) {
    const ParamVector g = p.shards[0]->gradient(w);
    for (std::size_t j = 0; j < w.size(); ++j) w[j] -= gamma * g[j];
  }
  EXPECT_TRUE(bitwise_equal(r.shared, w));
  EXPECT_EQ(r.master_rounds, 25u);
}

TEST(SimulateRounds, FixedSeedTraceIsReproducible) {
  const auto p = small_problem(3, 4);
  const double gamma = 1.0 / p.smoothness();
  const auto sched = make_delay_schedule(DelayKind::uniform_random, 3, 9, 3);
  auto a = gradient_workers(p, gamma);
  auto b = gradient_workers(p, gamma);
  const ParamVector init(4, 0.0);
  const RunResult ra = simulate_rounds(a, init, sched, epochs(40), {});
  const RunResult rb = simulate_rounds(b, init, sched, epochs(40), {});
  EXPECT_EQ(ra.trace.events, rb.trace.events);
  EXPECT_EQ(ra.comm, rb.comm);
}

TEST(SimulateRounds, BasesAreDelayedBroadcasts) {
  WorkerSet ws;
  auto raw = recording_workers(ws, 3);
  const auto sched = make_delay_schedule(DelayKind::uniform_random, 4, 21, 3);
  ProtocolOptions o = epochs(30);
  o.record_payloads = true;
  const ParamVector init{0.25};
  const RunResult r = simulate_rounds(ws, init, sched, o, {});
  ASSERT_EQ(r.trace.broadcasts.size(), 30u);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::uint64_t k = 0; k < 30; ++k) {
      const std::size_t d = sched.delay(i, k);
      const ParamVector& expected = k == d ? init : r.trace.broadcasts[k - d - 1].payload;
      EXPECT_EQ(raw[i]->bases[k], expected) << i << " " << k;
    }
  }
}

TEST(SimulateRounds, BroadcastIsMeanOfSlots) {
  const auto p = small_problem(4, 5);
  auto ws = gradient_workers(p, 0.5 / p.smoothness());
  ProtocolOptions o = epochs(60);
  std::size_t checked = 0;
  o.observer = [&](const AggregationEvent& ev, std::span<const double> w_bar) {
    for (std::size_t c = 0; c < w_bar.size(); ++c) {
      double s = 0.0;
      for (const auto& slot : ev.slots) s += slot[c];
      EXPECT_NEAR(w_bar[c], s / 4.0, 1e-14);
    }
    ++checked;
    return false;
  };
  simulate_rounds(ws, ParamVector(4, 0.0), make_delay_schedule(DelayKind::adversarial_cycle, 2, 0, 4),
                  o, {});
  EXPECT_EQ(checked, 60u);
}

TEST(SimulateRounds, SendCountIsMachinesTimesEpochs) {
  const auto p = small_problem(3, 6);
  auto ws = gradient_workers(p, 0.5 / p.smoothness());
  const RunResult r = simulate_rounds(ws, ParamVector(4, 0.0),
                                      make_delay_schedule(DelayKind::constant, 0, 0, 3), epochs(17), {});
  EXPECT_EQ(r.comm.sends, 3u * 17u);
  EXPECT_EQ(r.comm.broadcasts, 17u);
  EXPECT_EQ(r.comm.receives, 3u * 17u);
  EXPECT_EQ(r.rows.size(), 17u);
}

TEST(SimulateRounds, SlotEpochsNonDecreasingInTrace) {
  const auto p = small_problem(3, 7);
  auto ws = gradient_workers(p, 0.5 / p.smoothness());
  const RunResult r = simulate_rounds(ws, ParamVector(4, 0.0),
                                      make_delay_schedule(DelayKind::uniform_random, 3, 1, 3),
                                      epochs(50), {});
  std::map<std::int64_t, std::uint64_t> last;
  for (const auto& e : r.trace.events) {
    if (e.kind != EventKind::ingest) continue;
    EXPECT_GT(e.epoch, last[e.worker]);
    last[e.worker] = e.epoch;
  }
}

TEST(SimulateRounds, DivergenceCarriesCommStats) {
  WorkerSet ws;
  ws.push_back(std::make_unique<ExplodingWorker>(100));
  ws.push_back(std::make_unique<ExplodingWorker>(3));
  try {
    simulate_rounds(ws, ParamVector{1.0}, make_delay_schedule(DelayKind::constant, 0, 0, 2),
                    epochs(10), {});
    FAIL() << "expected divergence";
  } catch (const RunDiverged& e) {
    EXPECT_EQ(e.worker(), 1u);
    EXPECT_EQ(e.comm().sends, 7u);
    EXPECT_FALSE(e.trace().events.empty());
  }
}

TEST(SimulateTimed, SendCountAndMasterEpochs) {
  const auto p = small_problem(3, 8);
  auto ws = gradient_workers(p, 0.5 / p.smoothness());
  const std::vector<MachineModel> mm{{1, 0}, {1, 0}, {1, 0}};
  const RunResult r = simulate_timed(ws, ParamVector(4, 0.0), mm, epochs(12), {});
  EXPECT_EQ(r.worker_epochs[0], 12u);
  std::uint64_t total = 0;
  for (auto e : r.worker_epochs) total += e;
  EXPECT_EQ(r.comm.sends, total);
  EXPECT_EQ(r.master_rounds, 12u);
}

TEST(SimulateTimed, BroadcastOnIngestAddsRounds) {
  const auto p = small_problem(3, 9);
  const std::vector<MachineModel> mm{{2, 1}, {1, 1}, {3, 1}};
  auto a = gradient_workers(p, 0.5 / p.smoothness());
  auto b = gradient_workers(p, 0.5 / p.smoothness());
  ProtocolOptions o = epochs(10);
  const RunResult plain = simulate_timed(a, ParamVector(4, 0.0), mm, o, {});
  o.broadcast_on_ingest = true;
  const RunResult eager = simulate_timed(b, ParamVector(4, 0.0), mm, o, {});
  EXPECT_EQ(plain.comm.broadcasts, 10u);
  EXPECT_GT(eager.comm.broadcasts, plain.comm.broadcasts);
}

TEST(SimulateTimed, SlowMachineSendsProportionallyLess) {
  const auto p = small_problem(2, 10);
  auto ws = gradient_workers(p, 0.5 / p.smoothness());
  const std::vector<MachineModel> mm{{1, 0}, {4, 0}};
  const RunResult r = simulate_timed(ws, ParamVector(4, 0.0), mm, epochs(40), {});
  EXPECT_EQ(r.worker_epochs[0], 40u);
  EXPECT_EQ(r.worker_epochs[1], 10u);
}

TEST(RunTrace, JsonlRoundTrip) {
  RunTrace t;
  t.events.push_back({EventKind::send, 3, 1, 2, 1, std::nullopt, 0xdeadbeefcafef00dull});
  t.events.push_back({EventKind::aggregate, 3, -1, 2, 2, 0.125, 42});
  t.events.push_back({EventKind::drop, 4, 0, 1, 2, std::nullopt, 7});
  std::stringstream ss;
  t.write_jsonl(ss);
  EXPECT_EQ(RunTrace::read_jsonl(ss).events, t.events);
  std::stringstream bad("{\"kind\":\"teleport\",\"tick\":0,\"worker\":0,\"epoch\":0,\"round\":0,\"digest\":0}\n");
  EXPECT_THROW(RunTrace::read_jsonl(bad), DataError);
}

TEST(StopTracker, TargetPlateauAndCap) {
  ProtocolOptions o;
  o.max_epochs = 5;
  o.epsilon = 0.01;
  o.target_validation = 0.5;
  StopTracker s(o);
  EXPECT_FALSE(s.record(1, {0, 2.0, 0}));
  EXPECT_FALSE(s.record(2, {0, 1.0, 0}));
  EXPECT_EQ(s.record(3, {0, 0.4, 0}), StopReason::target);

  ProtocolOptions p;
  p.max_epochs = 5;
  p.epsilon = 0.01;
  StopTracker q(p);
  EXPECT_FALSE(q.record(1, {0, 2.0, 0}));
  EXPECT_EQ(q.record(2, {0, 1.995, 0}), StopReason::plateau);

  StopTracker c(p);
  for (std::size_t e = 1; e < 5; ++e) EXPECT_FALSE(c.record(e, {0, double(10 * e), 0}));
  EXPECT_EQ(c.record(5, {0, 100.0, 0}), StopReason::max_epochs);
}

TEST(RunThreaded, EveryMachineSeesTheFinalRound) {
  const auto p = small_problem(3, 11);
  auto ws = gradient_workers(p, 0.5 / p.smoothness());
  const RunResult r = run_threaded(ws, ParamVector(4, 0.0), epochs(50), {});
  EXPECT_EQ(r.master_rounds, 50u);
  ASSERT_EQ(r.rounds_received.size(), 3u);
  for (auto got : r.rounds_received) EXPECT_EQ(got, r.comm.broadcasts);
  std::uint64_t total = 0;
  for (auto e : r.worker_epochs) total += e;
  EXPECT_EQ(r.comm.sends, total);
  for (std::size_t i = 1; i < r.trace.events.size(); ++i) {
    EXPECT_LE(r.trace.events[i - 1].tick, r.trace.events[i].tick);
  }
}

TEST(RunThreaded, SingleMachineIsSerialGradientDescent) {
  const auto p = small_problem(1, 12);
  const double gamma = 1.0 / p.smoothness();
  auto ws = gradient_workers(p, gamma);
  const RunResult r = run_threaded(ws, ParamVector(4, 0.5), epochs(20), {});
  ParamVector w(4, 0.5);
  for (int k = 0; k < 20; ++k) {
    const ParamVector g = p.shards[0]->gradient(w);
    for (std::size_t j = 0; j < w.size(); ++j) w[j] -= gamma * g[j];
  }
  EXPECT_TRUE(bitwise_equal(r.shared, w));
}

TEST(RunThreaded, WorkerFailureSurfacesAsRunDiverged) {
  WorkerSet ws;
  ws.push_back(std::make_unique<ExplodingWorker>(1000000));
  ws.push_back(std::make_unique<ExplodingWorker>(2));
  ProtocolOptions o = epochs(1000000);
  EXPECT_THROW(run_threaded(ws, ParamVector{1.0}, o, {}), RunDiverged);
}
