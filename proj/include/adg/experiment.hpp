#pragma once

// Experiment runner: turns an ExperimentConfig into prepared data, workers
// and evaluators, runs the chosen algorithm on the chosen backend and writes
// metrics, summary, trace and model files.

#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "adg/async_core.hpp"
#include "adg/baselines.hpp"
#include "adg/config.hpp"
#include "adg/data_io.hpp"
#include "adg/metrics.hpp"

namespace adg {

struct PreparedClassification {
  Split<ClassificationDataset> split;
  std::vector<std::vector<LabeledExample>> shards;
  LogisticLossParams loss;
  SvrgEpochConfig cfg;  // gamma resolved, t_max = steps per epoch
};

std::shared_ptr<const PreparedClassification> prepare_classification(const ExperimentConfig& cfg);

// train_objective and validation_objective are mean losses; test_metric is accuracy.
Evaluator classification_evaluator(std::shared_ptr<const PreparedClassification> data);

struct PreparedRatings {
  Split<RatingMatrix> split;
  MfSetup setup;
  TrainingCoverage coverage;
};

// Factors start from RngState(seed, kMfInitStream): P for all users, then Q;
// machine b takes the rows of its user block.
inline constexpr std::uint64_t kMfInitStream = 0x1000;

std::shared_ptr<const PreparedRatings> prepare_ratings(const ExperimentConfig& cfg);

// Concatenates the per-machine user blocks into the full P.
DenseMatrix assemble_p(const PreparedRatings& data, std::span<const ParamVector> p_blocks);

// train_objective: summed loss over training ratings; validation_objective:
// mean loss per validation rating; test_metric: test RMSE (unseen skipped).
Evaluator mf_evaluator(std::shared_ptr<const PreparedRatings> data);

struct PreparedQuadratic {
  QuadraticProblem problem;
  double gamma = 0.0;
  ReferenceMinimizer reference;
};

std::shared_ptr<const PreparedQuadratic> prepare_quadratic(const ExperimentConfig& cfg);

// train/validation objective: sum_i L_i(w); test_metric: ||w - w*||.
Evaluator quadratic_evaluator(std::shared_ptr<const PreparedQuadratic> data);

// compute = ticks_per_example * work_units * (slow_factor for the last
// slow_count machines), comm = comm_ticks.
std::vector<MachineModel> machine_models(const MachinesConfig& machines,
                                         std::span<const std::size_t> work_units);

ProtocolOptions protocol_options(const ExperimentConfig& cfg);

// ADG with the variance-reduced local epoch (adg_bc) or plain gradient steps.
RunResult run_async(const ExperimentConfig& cfg);
// ADG with row-block MF local epochs; payloads are Q.
RunResult run_async_mf(const ExperimentConfig& cfg);
// Dispatches on cfg.run.algorithm.
RunResult run_algorithm(const ExperimentConfig& cfg);

struct ExperimentOutput {
  RunResult result;
  std::string summary_csv;
  std::string model_text;
};

// Runs and, when output_dir is given, writes metrics.csv, summary.csv,
// trace.jsonl, model.txt and config.txt there.
ExperimentOutput run_experiment(const ExperimentConfig& cfg,
                                const std::optional<std::string>& output_dir);

// ADG_OUTPUT_DIR, or "adg_output" when unset.
std::string output_directory_from_env();

struct SpeedupRow {
  std::size_t m = 1;
  std::size_t epochs = 0;
  double wall_seconds = 0.0;
  std::uint64_t logical_ticks = 0;
  double time_per_epoch = 0.0;  // logical ticks (simulated) or seconds (threaded)
  bool reached_target = false;
  bool censored = false;        // a target was set and not reached
  double speedup_per_epoch = 1.0;
  std::optional<double> speedup_to_target;
};

// Runs the config at every worker count; speedups are relative to the first
// count. Simulated runs use the timed mode and logical ticks.
std::vector<SpeedupRow> measure_speedup(const ExperimentConfig& cfg,
                                        std::span<const std::size_t> worker_counts);

void write_speedup_csv(std::ostream& out, std::span<const SpeedupRow> rows);

}  // namespace adg
