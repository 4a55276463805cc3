#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace adg {

// Dense shared parameter (w for classification, row-major Q for MF).
using ParamVector = std::vector<double>;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ContractViolation : public Error {
 public:
  using Error::Error;
};

class ProtocolViolation : public Error {
 public:
  using Error::Error;
};

class UnsupportedDiagnostic : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Anything wrong with input data: malformed files, duplicates, infeasible splits.
class DataError : public Error {
 public:
  using Error::Error;
};

class ParseError : public DataError {
 public:
  ParseError(const std::string& what, std::size_t line)
      : DataError("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class DuplicateRating : public DataError {
 public:
  using DataError::DataError;
};

class InfeasiblePartition : public DataError {
 public:
  using DataError::DataError;
};

// A local computation produced a non-finite value. Carries the last finite
// iterate and the step at which the failure was detected.
class DivergedError : public Error {
 public:
  DivergedError(const std::string& what, ParamVector last_finite, std::size_t step)
      : Error(what), last_finite_(std::move(last_finite)), step_(step) {}
  const ParamVector& last_finite() const { return last_finite_; }
  std::size_t step() const { return step_; }

 private:
  ParamVector last_finite_;
  std::size_t step_;
};

inline void require(bool cond, const char* what) {
  if (!cond) throw ContractViolation(what);
}

bool all_finite(std::span<const double> v);

// Row-major dense matrix.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

  bool operator==(const DenseMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

std::uint64_t splitmix64(std::uint64_t x);

// Reproducible random stream: identical (seed, stream) pairs yield identical draws.
class RngState {
 public:
  RngState(std::uint64_t seed, std::uint64_t stream);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

  std::size_t index(std::size_t n);
  double uniform(double lo, double hi);
  double normal(double mean, double stddev);
  bool bernoulli(double p);

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::mt19937_64 engine_;
};

// Order-sensitive digest of the bit patterns of a vector, used to compare
// traces without storing payloads.
std::uint64_t digest(std::span<const double> v);

}  // namespace adg
