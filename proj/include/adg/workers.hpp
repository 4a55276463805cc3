#pragma once

// Machine-local state wrappers around the local solvers. A LocalWorker runs
// one local epoch from a basis parameter and returns the shared payload it
// would send to the master; anything machine-private (MF user factors, RNG
// position) stays inside the worker.

#include <memory>
#include <span>
#include <vector>

#include "adg/local_solvers.hpp"

namespace adg {

class LocalWorker {
 public:
  virtual ~LocalWorker() = default;

  virtual ParamVector local_epoch(std::span<const double> basis) = 0;

  // Number of examples/ratings touched per epoch; drives simulated compute time.
  virtual std::size_t work_units() const = 0;

  // Private state exposed for evaluation only (P_b for MF); empty otherwise.
  virtual ParamVector local_state() const { return {}; }
};

using WorkerSet = std::vector<std::unique_ptr<LocalWorker>>;

class GradientWorker final : public LocalWorker {
 public:
  GradientWorker(std::shared_ptr<const SmoothShard> shard, double gamma, std::size_t work_units);

  ParamVector local_epoch(std::span<const double> basis) override;
  std::size_t work_units() const override { return work_units_; }
  const SmoothShard& shard() const { return *shard_; }

 private:
  std::shared_ptr<const SmoothShard> shard_;
  double gamma_;
  std::size_t work_units_;
};

class SvrgWorker final : public LocalWorker {
 public:
  SvrgWorker(std::vector<LabeledExample> shard, SvrgEpochConfig cfg, LogisticLossParams loss,
             RngState rng);

  ParamVector local_epoch(std::span<const double> basis) override;
  std::size_t work_units() const override { return shard_.size(); }

 private:
  std::vector<LabeledExample> shard_;
  SvrgEpochConfig cfg_;
  LogisticLossParams loss_;
  RngState rng_;
};

// Row-block MF worker: ratings are re-indexed to local user rows.
class MfWorker final : public LocalWorker {
 public:
  MfWorker(std::vector<Rating> local_ratings, DenseMatrix p_block, std::size_t n_items,
           double gamma, MfLossParams loss, RngState rng, std::size_t steps_per_epoch);

  ParamVector local_epoch(std::span<const double> basis) override;
  std::size_t work_units() const override { return ratings_.size(); }
  ParamVector local_state() const override { return state_.p_block.data(); }

  const DenseMatrix& p_block() const { return state_.p_block; }

 private:
  std::vector<Rating> ratings_;
  FactorState state_;
  double gamma_;
  MfLossParams loss_;
  RngState rng_;
  std::size_t steps_per_epoch_;
};

}  // namespace adg
