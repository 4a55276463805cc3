#include "adg/sim_scheduler.hpp"

#include <algorithm>
#include <ostream>

namespace adg {

DelayKind parse_delay_kind(const std::string& s) {
  if (s == "constant") return DelayKind::constant;
  if (s == "uniform_random") return DelayKind::uniform_random;
  if (s == "adversarial_cycle") return DelayKind::adversarial_cycle;
  throw ConfigError("unknown delay kind '" + s + "'");
}

const char* to_string(DelayKind k) {
  switch (k) {
    case DelayKind::constant: return "constant";
    case DelayKind::uniform_random: return "uniform_random";
    case DelayKind::adversarial_cycle: return "adversarial_cycle";
  }
  return "?";
}

DelaySchedule::DelaySchedule(DelayKind kind, std::size_t d_max, std::uint64_t seed,
                             std::size_t machines)
    : kind_(kind), d_max_(d_max), seed_(seed), machines_(machines) {
  require(machines_ >= 1, "DelaySchedule: at least one machine");
}

std::size_t DelaySchedule::delay(std::size_t machine, std::uint64_t round) const {
  std::size_t d = 0;
  switch (kind_) {
    case DelayKind::constant:
      d = d_max_;
      break;
    case DelayKind::uniform_random: {
      const std::uint64_t h =
          splitmix64(seed_ ^ splitmix64(machine + 1) ^ splitmix64(round * 0x9e3779b97f4a7c15ULL));
      d = static_cast<std::size_t>(h % (d_max_ + 1));
      break;
    }
    case DelayKind::adversarial_cycle:
      d = (round % machines_ == machine) ? d_max_ : 0;
      break;
  }
  return std::min<std::uint64_t>(d, round);
}

DelaySchedule make_delay_schedule(DelayKind kind, std::size_t d_max, std::uint64_t seed,
                                  std::size_t machines) {
  return DelaySchedule(kind, d_max, seed, machines);
}

void validate(const MachineModel& m) {
  require(m.compute_ticks_per_epoch >= 1, "MachineModel: compute_ticks_per_epoch must be >= 1");
}

std::size_t QuadraticProblem::dim() const {
  require(!shards.empty(), "QuadraticProblem: no shards");
  return shards.front()->dim();
}

double QuadraticProblem::smoothness() const {
  double l = 0.0;
  for (const auto& s : shards) l = std::max(l, s->smoothness());
  return l;
}

QuadraticProblem make_random_quadratic(std::size_t machines, std::size_t dim, std::size_t rows,
                                       std::uint64_t seed) {
  require(machines >= 1 && dim >= 1 && rows >= 1, "make_random_quadratic: positive sizes");
  QuadraticProblem p;
  for (std::size_t i = 0; i < machines; ++i) {
    RngState rng(seed, i);
    Eigen::MatrixXd a(rows, dim);
    Eigen::VectorXd b(rows);
    for (Eigen::Index r = 0; r < a.rows(); ++r)
      for (Eigen::Index c = 0; c < a.cols(); ++c) a(r, c) = rng.normal(0.0, 1.0);
    for (Eigen::Index r = 0; r < b.size(); ++r) b(r) = rng.normal(0.0, 1.0);
    p.shards.push_back(std::make_shared<QuadraticShard>(std::move(a), std::move(b)));
  }
  return p;
}

QuadraticProblem make_center_quadratic(std::span<const double> centers) {
  QuadraticProblem p;
  for (double c : centers) {
    p.shards.push_back(std::make_shared<QuadraticShard>(Eigen::MatrixXd::Identity(1, 1),
                                                        Eigen::VectorXd::Constant(1, c)));
  }
  return p;
}

ReferenceMinimizer solve_reference_minimizer(const QuadraticProblem& problem, double gamma) {
  const auto d = static_cast<Eigen::Index>(problem.dim());
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(d, d);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(d);
  for (const auto& s : problem.shards) {
    require(s->a().cols() == d, "solve_reference_minimizer: inconsistent dimensions");
    h += s->a().transpose() * s->a();
    rhs += s->a().transpose() * s->b();
  }
  Eigen::FullPivLU<Eigen::MatrixXd> lu(h);
  if (!lu.isInvertible()) {
    throw ContractViolation("solve_reference_minimizer: singular normal equations");
  }
  Eigen::VectorXd w = lu.solve(rhs);
  ReferenceMinimizer ref;
  ref.w_star.assign(w.data(), w.data() + w.size());
  for (const auto& s : problem.shards) {
    ref.w_i_star.push_back(gradient_local_step(ref.w_star, *s, gamma));
  }
  return ref;
}

namespace {

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double e = a[j] - b[j];
    s += e * e;
  }
  return s;
}

}  // namespace

ErrorEnvelope::ErrorEnvelope(ReferenceMinimizer reference, std::size_t d_max,
                             std::span<const ParamVector> initial_slots)
    : ref_(std::move(reference)), rows_(d_max + 1), machines_(initial_slots.size()) {
  if (ref_.w_star.empty() || ref_.w_i_star.size() != machines_) {
    throw UnsupportedDiagnostic("error envelope requires a known minimizer for every machine");
  }
  y_.assign(rows_ * machines_, 0.0);
  for (std::size_t i = 0; i < machines_; ++i) {
    const double e = squared_distance(initial_slots[i], ref_.w_i_star[i]);
    for (std::size_t d = 0; d < rows_; ++d) y_[d * machines_ + i] = e;
  }
}

double ErrorEnvelope::linf_norm() const { return *std::max_element(y_.begin(), y_.end()); }

double ErrorEnvelope::delayed_mean(std::size_t delay_slot) const {
  require(delay_slot < rows_, "ErrorEnvelope: delay exceeds the envelope depth");
  double s = 0.0;
  for (std::size_t j = 0; j < machines_; ++j) s += at(delay_slot, j);
  return s / static_cast<double>(machines_);
}

void ErrorEnvelope::step(const AggregationEvent& event) {
  require(event.slots.size() == machines_, "ErrorEnvelope: machine count mismatch");
  for (std::size_t d = rows_ - 1; d > 0; --d) {
    std::copy_n(y_.begin() + static_cast<std::ptrdiff_t>((d - 1) * machines_), machines_,
                y_.begin() + static_cast<std::ptrdiff_t>(d * machines_));
  }
  for (std::size_t i = 0; i < machines_; ++i) {
    y_[i] = squared_distance(event.slots[i], ref_.w_i_star[i]);
  }
  ++events_;
}

ErrorEnvelope error_envelope_step(ErrorEnvelope env, const AggregationEvent& event) {
  env.step(event);
  return env;
}

ErrorEnvelope envelope_for_workers(const WorkerSet& workers, double gamma, std::size_t d_max,
                                   std::span<const ParamVector> initial_slots) {
  QuadraticProblem problem;
  for (const auto& w : workers) {
    const auto* gw = dynamic_cast<const GradientWorker*>(w.get());
    const auto* q = gw ? dynamic_cast<const QuadraticShard*>(&gw->shard()) : nullptr;
    if (q == nullptr) {
      throw UnsupportedDiagnostic("error envelope needs plain gradient steps on quadratic shards");
    }
    problem.shards.push_back(std::make_shared<QuadraticShard>(q->a(), q->b()));
  }
  return ErrorEnvelope(solve_reference_minimizer(problem, gamma), d_max, initial_slots);
}

EnvelopeMonitor::EnvelopeMonitor(ErrorEnvelope initial, bool record_csv)
    : env_(std::move(initial)), record_(record_csv) {
  linf_.push_back(env_.linf_norm());
  if (record_) snapshots_.push_back(env_);
}

void EnvelopeMonitor::observe(const AggregationEvent& event) {
  std::vector<double> bounds;
  bounds.reserve(event.updated.size());
  for (std::size_t d : event.delays) bounds.push_back(env_.delayed_mean(d));
  const double before = env_.linf_norm();
  env_.step(event);
  for (std::size_t n = 0; n < event.updated.size(); ++n) {
    if (env_.at(0, event.updated[n]) > bounds[n]) ++bound_violations_;
  }
  const double after = env_.linf_norm();
  if (after > before) ++norm_violations_;
  linf_.push_back(after);
  if (record_) snapshots_.push_back(env_);
}

void EnvelopeMonitor::write_csv(std::ostream& out) const {
  out << "event,machine,delay_slot,squared_error,linf_norm\n";
  out.precision(17);
  for (std::size_t e = 0; e < snapshots_.size(); ++e) {
    const auto& s = snapshots_[e];
    const double norm = s.linf_norm();
    for (std::size_t d = 0; d <= s.d_max(); ++d)
      for (std::size_t i = 0; i < s.machines(); ++i)
        out << e << ',' << i << ',' << d << ',' << s.at(d, i) << ',' << norm << '\n';
  }
}

Eigen::MatrixXd contraction_matrix(std::size_t machines, std::size_t d_max,
                                   std::span<const std::size_t> updated,
                                   std::span<const std::size_t> delays) {
  require(updated.size() == delays.size(), "contraction_matrix: updated/delays length mismatch");
  const auto m = static_cast<Eigen::Index>(machines);
  const auto n = static_cast<Eigen::Index>(machines * (d_max + 1));
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
  a.topLeftCorner(m, m).setIdentity();
  for (std::size_t d = 1; d <= d_max; ++d) {
    a.block(static_cast<Eigen::Index>(d) * m, static_cast<Eigen::Index>(d - 1) * m, m, m)
        .setIdentity();
  }
  for (std::size_t n_up = 0; n_up < updated.size(); ++n_up) {
    const auto i = static_cast<Eigen::Index>(updated[n_up]);
    require(delays[n_up] <= d_max, "contraction_matrix: delay exceeds bound");
    a.row(i).setZero();
    a.block(i, static_cast<Eigen::Index>(delays[n_up]) * m, 1, m).setConstant(1.0 / machines);
  }
  return a;
}

}  // namespace adg
