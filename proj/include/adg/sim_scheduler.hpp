#pragma once

// Deterministic simulation machinery: bounded delay schedules, machine
// timing models, quadratic test problems with known minimizers and the
// squared-error envelope diagnostic of the bounded-delay convergence argument.

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "adg/local_solvers.hpp"
#include "adg/types.hpp"
#include "adg/workers.hpp"

namespace adg {

enum class DelayKind { constant, uniform_random, adversarial_cycle };

DelayKind parse_delay_kind(const std::string& s);
const char* to_string(DelayKind k);

// d(i, k): number of master rounds by which machine i's basis lags at round k.
// Always d(i, k) <= d_max and d(i, k) <= k.
class DelaySchedule {
 public:
  DelaySchedule(DelayKind kind, std::size_t d_max, std::uint64_t seed, std::size_t machines);

  std::size_t delay(std::size_t machine, std::uint64_t round) const;
  std::size_t d_max() const { return d_max_; }
  std::size_t machines() const { return machines_; }
  DelayKind kind() const { return kind_; }

 private:
  DelayKind kind_;
  std::size_t d_max_;
  std::uint64_t seed_;
  std::size_t machines_;
};

DelaySchedule make_delay_schedule(DelayKind kind, std::size_t d_max, std::uint64_t seed,
                                  std::size_t machines);

struct MachineModel {
  std::uint64_t compute_ticks_per_epoch = 1;
  std::uint64_t comm_ticks = 0;
};

void validate(const MachineModel& m);

// Family L_i(w) = 1/2 ||A_i w - b_i||^2 with the minimizer of sum_i L_i known.
struct QuadraticProblem {
  std::vector<std::shared_ptr<const QuadraticShard>> shards;

  std::size_t machines() const { return shards.size(); }
  std::size_t dim() const;
  // max_i lambda_max(A_i^T A_i)
  double smoothness() const;
};

// Random instance: A_i has `rows` standard normal rows, b_i standard normal.
QuadraticProblem make_random_quadratic(std::size_t machines, std::size_t dim, std::size_t rows,
                                       std::uint64_t seed);

// Scalar centers: L_i(w) = 1/2 (w - c_i)^2.
QuadraticProblem make_center_quadratic(std::span<const double> centers);

struct ReferenceMinimizer {
  ParamVector w_star;
  std::vector<ParamVector> w_i_star;  // w* - gamma grad L_i(w*)
};

ReferenceMinimizer solve_reference_minimizer(const QuadraticProblem& problem, double gamma);

// What the simulator reports after each aggregation event.
struct AggregationEvent {
  std::uint64_t round = 0;                // k; the event produces w_bar^{k+1}
  std::vector<std::size_t> updated;       // machines that completed at this round
  std::vector<std::size_t> delays;        // d_i^k, parallel to `updated`
  std::span<const ParamVector> slots;     // w_j^{k+1}, all machines
};

// (D+1) x M matrix of ||w_i^{k-d} - w_i*||^2.
class ErrorEnvelope {
 public:
  ErrorEnvelope(ReferenceMinimizer reference, std::size_t d_max,
                std::span<const ParamVector> initial_slots);

  std::size_t d_max() const { return rows_ - 1; }
  std::size_t machines() const { return machines_; }
  double at(std::size_t delay_slot, std::size_t machine) const {
    return y_[delay_slot * machines_ + machine];
  }
  double linf_norm() const;
  const ReferenceMinimizer& reference() const { return ref_; }
  std::uint64_t events() const { return events_; }

  // Right-hand side of the per-update bound: (1/M) sum_j y_d(j).
  double delayed_mean(std::size_t delay_slot) const;

  // Shift rows down and recompute row 0 from the event's slots.
  void step(const AggregationEvent& event);

 private:
  ReferenceMinimizer ref_;
  std::size_t rows_;
  std::size_t machines_;
  std::vector<double> y_;
  std::uint64_t events_ = 0;
};

ErrorEnvelope error_envelope_step(ErrorEnvelope env, const AggregationEvent& event);

// Builds the envelope for a run over plain-gradient workers on quadratic
// shards; any other worker type has no known minimizer and is rejected.
ErrorEnvelope envelope_for_workers(const WorkerSet& workers, double gamma, std::size_t d_max,
                                   std::span<const ParamVector> initial_slots);

// Tracks the envelope along a run and checks both the per-update bound and
// the monotonicity of the l-infinity norm at every event.
class EnvelopeMonitor {
 public:
  EnvelopeMonitor(ErrorEnvelope initial, bool record_csv = false);

  void observe(const AggregationEvent& event);

  const ErrorEnvelope& envelope() const { return env_; }
  std::uint64_t events() const { return env_.events(); }
  std::uint64_t norm_violations() const { return norm_violations_; }
  std::uint64_t bound_violations() const { return bound_violations_; }
  const std::vector<double>& linf_history() const { return linf_; }

  // event,machine,delay_slot,squared_error,linf_norm
  void write_csv(std::ostream& out) const;

 private:
  ErrorEnvelope env_;
  bool record_;
  std::uint64_t norm_violations_ = 0;
  std::uint64_t bound_violations_ = 0;
  std::vector<double> linf_;
  std::vector<ErrorEnvelope> snapshots_;
};

// Debug helper: the row-stochastic matrix A^{k+1} with y^{k+1} <= A y^k, laid
// out as (D+1) x (D+1) blocks of size M. Several machines may update in the
// same event; each updated row i averages block column d_i.
Eigen::MatrixXd contraction_matrix(std::size_t machines, std::size_t d_max,
                                   std::span<const std::size_t> updated,
                                   std::span<const std::size_t> delays);

}  // namespace adg
