#pragma once

// Per-epoch metrics rows, the stopping rule and RMSE evaluation.

#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "adg/data_io.hpp"

namespace adg {

inline constexpr int kMetricsSchemaVersion = 1;

struct MetricsRow {
  double wall_seconds = 0.0;
  std::uint64_t logical_tick = 0;
  std::uint64_t epoch = 0;
  double train_objective = 0.0;
  double validation_objective = 0.0;
  double test_rmse_or_accuracy = 0.0;
  std::uint64_t comm_sends = 0;
  double comm_time = 0.0;

  bool operator==(const MetricsRow&) const = default;
};

std::string metrics_csv_header();
std::string to_csv_line(const MetricsRow& row);
MetricsRow parse_metrics_row(std::string_view line);
void write_metrics_csv(std::ostream& out, std::span<const MetricsRow> rows);
std::vector<MetricsRow> read_metrics_csv(std::istream& in);

// True iff the last two validation objectives differ by less than epsilon.
bool should_stop(std::span<const double> history, double epsilon);
// Same, or `history` already holds max_epochs entries.
bool should_stop(std::span<const double> history, double epsilon, std::size_t max_epochs);

enum class UnseenPolicy { skip, global_mean };

struct RmseResult {
  double rmse = 0.0;
  std::size_t evaluated = 0;
  std::size_t skipped = 0;
};

// Which users/items have training ratings, and the training mean rating.
struct TrainingCoverage {
  std::vector<bool> users;
  std::vector<bool> items;
  double global_mean = 0.0;

  static TrainingCoverage from(const RatingMatrix& train);
};

// sqrt(mean (r - <q_i, p_u>)^2) over the test ratings.
RmseResult evaluate_rmse(const DenseMatrix& p, const DenseMatrix& q, const RatingMatrix& test);
RmseResult evaluate_rmse(const DenseMatrix& p, const DenseMatrix& q, const RatingMatrix& test,
                         const TrainingCoverage& coverage, UnseenPolicy policy);

// Fraction of examples with sign(<w, x>) == y (ties count as +1).
double classification_accuracy(std::span<const double> w,
                               std::span<const LabeledExample> examples);

}  // namespace adg
