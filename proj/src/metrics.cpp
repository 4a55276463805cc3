#include "adg/metrics.hpp"

#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <istream>
#include <ostream>
#include <sstream>

namespace adg {

namespace {

constexpr std::size_t kMetricsColumns = 8;

std::string format_real(double v) {
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

// whole cell must be consumed; underflow to a subnormal or zero is accepted
bool parse_real_cell(const std::string& cell, double& out) {
  if (cell.empty()) return false;
  char* end = nullptr;
  errno = 0;
  out = std::strtod(cell.c_str(), &end);
  if (end != cell.c_str() + cell.size()) return false;
  return errno != ERANGE || std::isfinite(out);
}

bool parse_count_cell(const std::string& cell, std::uint64_t& out) {
  if (cell.empty() || cell[0] == '-' || cell[0] == '+') return false;
  char* end = nullptr;
  errno = 0;
  out = std::strtoull(cell.c_str(), &end, 10);
  return end == cell.c_str() + cell.size() && errno != ERANGE;
}

}  // namespace

std::string metrics_csv_header() {
  return "wall_seconds,logical_tick,epoch,train_objective,validation_objective,"
         "test_rmse_or_accuracy,comm_sends,comm_time";
}

std::string to_csv_line(const MetricsRow& row) {
  std::ostringstream ss;
  ss << format_real(row.wall_seconds) << ',' << row.logical_tick << ',' << row.epoch << ','
     << format_real(row.train_objective) << ',' << format_real(row.validation_objective) << ','
     << format_real(row.test_rmse_or_accuracy) << ',' << row.comm_sends << ','
     << format_real(row.comm_time);
  return ss.str();
}

MetricsRow parse_metrics_row(std::string_view line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  cells.push_back(cur);
  if (cells.size() != kMetricsColumns) {
    throw DataError("metrics row: expected " + std::to_string(kMetricsColumns) + " columns, got " +
                    std::to_string(cells.size()));
  }
  MetricsRow row;
  const bool ok = parse_real_cell(cells[0], row.wall_seconds) &&
                  parse_count_cell(cells[1], row.logical_tick) &&
                  parse_count_cell(cells[2], row.epoch) &&
                  parse_real_cell(cells[3], row.train_objective) &&
                  parse_real_cell(cells[4], row.validation_objective) &&
                  parse_real_cell(cells[5], row.test_rmse_or_accuracy) &&
                  parse_count_cell(cells[6], row.comm_sends) &&
                  parse_real_cell(cells[7], row.comm_time);
  if (!ok) throw DataError("metrics row: malformed cell in '" + std::string(line) + "'");
  return row;
}

void write_metrics_csv(std::ostream& out, std::span<const MetricsRow> rows) {
  out << metrics_csv_header() << '\n';
  for (const auto& r : rows) out << to_csv_line(r) << '\n';
}

std::vector<MetricsRow> read_metrics_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("metrics csv: missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != metrics_csv_header()) throw DataError("metrics csv: unexpected header");
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    rows.push_back(parse_metrics_row(line));
  }
  return rows;
}

bool should_stop(std::span<const double> history, double epsilon) {
  require(epsilon > 0.0, "should_stop: epsilon must be positive");
  if (history.size() < 2) return false;
  return std::abs(history[history.size() - 1] - history[history.size() - 2]) < epsilon;
}

bool should_stop(std::span<const double> history, double epsilon, std::size_t max_epochs) {
  return should_stop(history, epsilon) || history.size() >= max_epochs;
}

TrainingCoverage TrainingCoverage::from(const RatingMatrix& train) {
  TrainingCoverage c;
  c.users.assign(train.n_users, false);
  c.items.assign(train.n_items, false);
  double sum = 0.0;
  for (const auto& r : train.ratings) {
    c.users.at(r.user) = true;
    c.items.at(r.item) = true;
    sum += r.value;
  }
  c.global_mean = train.ratings.empty() ? 0.0 : sum / static_cast<double>(train.ratings.size());
  return c;
}

namespace {

double predict(const DenseMatrix& p, const DenseMatrix& q, const Rating& r) {
  double dot = 0.0;
  for (std::size_t c = 0; c < p.cols(); ++c) dot += q(r.item, c) * p(r.user, c);
  return dot;
}

}  // namespace

RmseResult evaluate_rmse(const DenseMatrix& p, const DenseMatrix& q, const RatingMatrix& test) {
  require(!test.ratings.empty(), "evaluate_rmse: empty test set");
  require(p.cols() == q.cols(), "evaluate_rmse: latent dimension mismatch");
  RmseResult out;
  double sq = 0.0;
  for (const auto& r : test.ratings) {
    require(r.user < p.rows() && r.item < q.rows(), "evaluate_rmse: index out of range");
    const double e = r.value - predict(p, q, r);
    sq += e * e;
  }
  out.evaluated = test.ratings.size();
  out.rmse = std::sqrt(sq / static_cast<double>(out.evaluated));
  return out;
}

RmseResult evaluate_rmse(const DenseMatrix& p, const DenseMatrix& q, const RatingMatrix& test,
                         const TrainingCoverage& coverage, UnseenPolicy policy) {
  require(!test.ratings.empty(), "evaluate_rmse: empty test set");
  require(p.cols() == q.cols(), "evaluate_rmse: latent dimension mismatch");
  RmseResult out;
  double sq = 0.0;
  for (const auto& r : test.ratings) {
    require(r.user < p.rows() && r.item < q.rows(), "evaluate_rmse: index out of range");
    const bool seen = r.user < coverage.users.size() && coverage.users[r.user] &&
                      r.item < coverage.items.size() && coverage.items[r.item];
    double pred = 0.0;
    if (seen) {
      pred = predict(p, q, r);
    } else if (policy == UnseenPolicy::skip) {
      ++out.skipped;
      continue;
    } else {
      pred = coverage.global_mean;
    }
    const double e = r.value - pred;
    sq += e * e;
    ++out.evaluated;
  }
  out.rmse = out.evaluated == 0 ? 0.0 : std::sqrt(sq / static_cast<double>(out.evaluated));
  return out;
}

double classification_accuracy(std::span<const double> w,
                               std::span<const LabeledExample> examples) {
  if (examples.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto& ex : examples) {
    const int pred = sparse_dot(w, ex.features) >= 0.0 ? 1 : -1;
    if (pred == ex.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(examples.size());
}

}  // namespace adg
