#pragma once

// Objectives, instantaneous losses and their exact gradients for the two
// instantiations: l2-regularized logistic classification and regularized
// matrix factorization. Everything here is a pure function.

#include <cstdint>
#include <span>
#include <vector>

#include "adg/types.hpp"

namespace adg {

struct SparseVector {
  std::vector<std::uint32_t> indices;  // strictly increasing
  std::vector<double> values;

  bool operator==(const SparseVector&) const = default;
};

struct LabeledExample {
  SparseVector features;
  int label = 1;  // -1 or +1

  bool operator==(const LabeledExample&) const = default;
};

struct LogisticLossParams {
  double lambda = 0.0;
  std::size_t n_total = 1;  // global training size n in the lambda/(2n) scaling
};

struct Rating {
  std::uint32_t user = 0;
  std::uint32_t item = 0;
  double value = 0.0;

  bool operator==(const Rating&) const = default;
};

struct MfLossParams {
  double lambda = 0.0;
  std::size_t k_latent = 1;
};

struct SmoothnessEstimate {
  double l_bound = 0.0;
};

void validate(const LabeledExample& ex);
void validate(const LogisticLossParams& loss);
void validate(const MfLossParams& loss);

double sparse_dot(std::span<const double> w, const SparseVector& x);

// log(1 + exp(-m)) without overflow for any finite m.
double log1p_exp_neg(double margin);

// log(1 + exp(-y <w,x>)) + lambda/(2n) ||w||^2
double logistic_loss(std::span<const double> w, const LabeledExample& ex,
                     const LogisticLossParams& loss);

// Batch-averaged gradient (1/|B|) sum_B [-y x / (1 + exp(y<w,x>))] + (lambda/n) w.
ParamVector logistic_grad(std::span<const double> w, std::span<const LabeledExample> batch,
                          const LogisticLossParams& loss);

// Same, with the batch given as indices into `examples` (repeats allowed).
ParamVector logistic_grad(std::span<const double> w, std::span<const LabeledExample> examples,
                          std::span<const std::size_t> batch, const LogisticLossParams& loss);

// Full-shard average gradient (the anchor gradient of the variance-reduced epoch).
ParamVector shard_mean_gradient(std::span<const double> w, std::span<const LabeledExample> shard,
                                const LogisticLossParams& loss);

// (1/n) sum_i loss_i over the given examples.
double logistic_objective(std::span<const double> w, std::span<const LabeledExample> examples,
                          const LogisticLossParams& loss);

// Upper bound on the smoothness constant of the shard objective
// (1/n_total) sum_{shard} loss_i; gamma = 1/l_bound is always below 2/L.
SmoothnessEstimate estimate_smoothness(std::span<const LabeledExample> shard,
                                       const LogisticLossParams& loss);

// (r - <q,p>)^2 + lambda (||p||^2 + ||q||^2)
double mf_loss(std::span<const double> p, std::span<const double> q, double r,
               const MfLossParams& loss);

struct MfGradient {
  ParamVector grad_p;
  ParamVector grad_q;
};

MfGradient mf_grad(std::span<const double> p, std::span<const double> q, double r,
                   const MfLossParams& loss);

// Sum of mf_loss over the observed ratings (users index rows of p).
double mf_objective(const DenseMatrix& p, const DenseMatrix& q, std::span<const Rating> ratings,
                    const MfLossParams& loss);

}  // namespace adg
