#include "adg/types.hpp"

#include <bit>
#include <cmath>

namespace adg {

bool all_finite(std::span<const double> v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  require(data_.size() == rows_ * cols_, "DenseMatrix: data size does not match shape");
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

RngState::RngState(std::uint64_t seed, std::uint64_t stream)
    : seed_(seed), stream_(stream), engine_(splitmix64(splitmix64(seed) ^ splitmix64(~stream))) {}

std::size_t RngState::index(std::size_t n) {
  require(n > 0, "RngState::index: empty range");
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
}

double RngState::uniform(double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(engine_);
}

double RngState::normal(double mean, double stddev) {
  return std::normal_distribution<double>(mean, stddev)(engine_);
}

bool RngState::bernoulli(double p) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(engine_) < p;
}

std::uint64_t digest(std::span<const double> v) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (double x : v) {
    h ^= std::bit_cast<std::uint64_t>(x);
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace adg
