#pragma once

// Shared helpers for the unit and acceptance tests: example builders,
// central finite differences and comparison utilities.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "adg/losses.hpp"
#include "adg/types.hpp"

namespace adg::test {

inline LabeledExample dense_example(std::vector<double> x, int label) {
  LabeledExample ex;
  ex.label = label;
  for (std::size_t j = 0; j < x.size(); ++j) {
    if (x[j] != 0.0) {
      ex.features.indices.push_back(static_cast<std::uint32_t>(j));
      ex.features.values.push_back(x[j]);
    }
  }
  return ex;
}

// Features with roughly `density` non-zeros, N(0, 1) values.
inline LabeledExample random_example(std::mt19937_64& gen, std::size_t d, double density = 0.6) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::bernoulli_distribution keep(density);
  LabeledExample ex;
  ex.label = std::bernoulli_distribution(0.5)(gen) ? 1 : -1;
  for (std::size_t j = 0; j < d; ++j) {
    if (keep(gen)) {
      ex.features.indices.push_back(static_cast<std::uint32_t>(j));
      ex.features.values.push_back(normal(gen));
    }
  }
  return ex;
}

inline std::vector<LabeledExample> random_examples(std::mt19937_64& gen, std::size_t n,
                                                   std::size_t d) {
  std::vector<LabeledExample> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(random_example(gen, d));
  return out;
}

inline ParamVector random_vector(std::mt19937_64& gen, std::size_t d, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  ParamVector v(d);
  for (double& x : v) x = normal(gen);
  return v;
}

// Central differences with step h.
inline ParamVector finite_difference(const std::function<double(std::span<const double>)>& f,
                                     std::span<const double> x, double h = 1e-6) {
  ParamVector g(x.size());
  ParamVector xp(x.begin(), x.end());
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double orig = xp[j];
    xp[j] = orig + h;
    const double fp = f(xp);
    xp[j] = orig - h;
    const double fm = f(xp);
    xp[j] = orig;
    g[j] = (fp - fm) / (2.0 * h);
  }
  return g;
}

inline double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline double distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
  return std::sqrt(s);
}

// ||a - b|| / max(||a||, ||b||, floor)
inline double relative_error(std::span<const double> a, std::span<const double> b,
                             double floor = 1e-3) {
  return distance(a, b) / std::max({norm2(a), norm2(b), floor});
}

inline bool bitwise_equal(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() && digest(a) == digest(b) &&
         std::equal(a.begin(), a.end(), b.begin(), [](double x, double y) {
           return std::memcmp(&x, &y, sizeof(double)) == 0;
         });
}

}  // namespace adg::test
