#include "adg/losses.hpp"

#include <algorithm>
#include <cmath>

namespace adg {

void validate(const LabeledExample& ex) {
  require(ex.label == 1 || ex.label == -1, "LabeledExample: label must be -1 or +1");
  require(ex.features.indices.size() == ex.features.values.size(),
          "LabeledExample: index/value length mismatch");
  for (std::size_t j = 1; j < ex.features.indices.size(); ++j) {
    require(ex.features.indices[j - 1] < ex.features.indices[j],
            "LabeledExample: feature indices must be strictly increasing");
  }
}

void validate(const LogisticLossParams& loss) {
  require(loss.lambda >= 0.0, "LogisticLossParams: lambda must be non-negative");
  require(loss.n_total >= 1, "LogisticLossParams: n_total must be positive");
}

void validate(const MfLossParams& loss) {
  require(loss.lambda >= 0.0, "MfLossParams: lambda must be non-negative");
  require(loss.k_latent >= 1, "MfLossParams: k_latent must be positive");
}

namespace {

void check_dim(std::span<const double> w, const SparseVector& x) {
  if (!x.indices.empty() && x.indices.back() >= w.size()) {
    throw ContractViolation("feature index exceeds parameter dimension");
  }
}

double squared_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s;
}

// 1 / (1 + exp(m)); exp overflow to +inf yields exactly 0.
double inv_one_plus_exp(double m) { return 1.0 / (1.0 + std::exp(m)); }

void add_data_term(std::span<const double> w, const LabeledExample& ex, std::span<double> acc) {
  check_dim(w, ex.features);
  const double y = static_cast<double>(ex.label);
  const double coeff = -y * inv_one_plus_exp(y * sparse_dot(w, ex.features));
  const auto& idx = ex.features.indices;
  const auto& val = ex.features.values;
  for (std::size_t j = 0; j < idx.size(); ++j) acc[idx[j]] += coeff * val[j];
}

ParamVector finish_batch_grad(std::span<const double> w, ParamVector acc, std::size_t count,
                              const LogisticLossParams& loss) {
  const double inv = 1.0 / static_cast<double>(count);
  const double reg = loss.lambda / static_cast<double>(loss.n_total);
  for (std::size_t j = 0; j < acc.size(); ++j) acc[j] = acc[j] * inv + reg * w[j];
  return acc;
}

}  // namespace

double sparse_dot(std::span<const double> w, const SparseVector& x) {
  double s = 0.0;
  for (std::size_t j = 0; j < x.indices.size(); ++j) s += w[x.indices[j]] * x.values[j];
  return s;
}

double log1p_exp_neg(double margin) {
  return std::max(0.0, -margin) + std::log1p(std::exp(-std::abs(margin)));
}

double logistic_loss(std::span<const double> w, const LabeledExample& ex,
                     const LogisticLossParams& loss) {
  check_dim(w, ex.features);
  const double margin = static_cast<double>(ex.label) * sparse_dot(w, ex.features);
  return log1p_exp_neg(margin) +
         loss.lambda / (2.0 * static_cast<double>(loss.n_total)) * squared_norm(w);
}

ParamVector logistic_grad(std::span<const double> w, std::span<const LabeledExample> batch,
                          const LogisticLossParams& loss) {
  require(!batch.empty(), "logistic_grad: empty batch");
  ParamVector acc(w.size(), 0.0);
  for (const auto& ex : batch) add_data_term(w, ex, acc);
  return finish_batch_grad(w, std::move(acc), batch.size(), loss);
}

ParamVector logistic_grad(std::span<const double> w, std::span<const LabeledExample> examples,
                          std::span<const std::size_t> batch, const LogisticLossParams& loss) {
  require(!batch.empty(), "logistic_grad: empty batch");
  ParamVector acc(w.size(), 0.0);
  for (std::size_t i : batch) {
    require(i < examples.size(), "logistic_grad: batch index out of range");
    add_data_term(w, examples[i], acc);
  }
  return finish_batch_grad(w, std::move(acc), batch.size(), loss);
}

ParamVector shard_mean_gradient(std::span<const double> w, std::span<const LabeledExample> shard,
                                const LogisticLossParams& loss) {
  require(!shard.empty(), "shard_mean_gradient: empty shard");
  return logistic_grad(w, shard, loss);
}

double logistic_objective(std::span<const double> w, std::span<const LabeledExample> examples,
                          const LogisticLossParams& loss) {
  require(!examples.empty(), "logistic_objective: empty dataset");
  double data = 0.0;
  for (const auto& ex : examples) {
    check_dim(w, ex.features);
    data += log1p_exp_neg(static_cast<double>(ex.label) * sparse_dot(w, ex.features));
  }
  return data / static_cast<double>(examples.size()) +
         loss.lambda / (2.0 * static_cast<double>(loss.n_total)) * squared_norm(w);
}

SmoothnessEstimate estimate_smoothness(std::span<const LabeledExample> shard,
                                       const LogisticLossParams& loss) {
  require(!shard.empty(), "estimate_smoothness: empty dataset");
  double max_sq = 0.0;
  for (const auto& ex : shard) max_sq = std::max(max_sq, squared_norm(ex.features.values));
  const double n = static_cast<double>(loss.n_total);
  const double weight = static_cast<double>(shard.size()) / n;
  // Sigmoid curvature is at most 1/4; the regularizer contributes lambda/n.
  double bound = weight * (0.25 * max_sq + loss.lambda / n);
  if (bound <= 0.0) bound = 1e-12;  // flat objective: any positive bound is valid
  return {bound};
}

double mf_loss(std::span<const double> p, std::span<const double> q, double r,
               const MfLossParams& loss) {
  require(p.size() == q.size(), "mf_loss: factor length mismatch");
  double dot = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) dot += q[k] * p[k];
  const double e = r - dot;
  return e * e + loss.lambda * (squared_norm(p) + squared_norm(q));
}

MfGradient mf_grad(std::span<const double> p, std::span<const double> q, double r,
                   const MfLossParams& loss) {
  require(p.size() == q.size(), "mf_grad: factor length mismatch");
  double dot = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) dot += q[k] * p[k];
  const double e = r - dot;
  MfGradient g{ParamVector(p.size()), ParamVector(q.size())};
  for (std::size_t k = 0; k < p.size(); ++k) {
    g.grad_p[k] = -2.0 * e * q[k] + 2.0 * loss.lambda * p[k];
    g.grad_q[k] = -2.0 * e * p[k] + 2.0 * loss.lambda * q[k];
  }
  return g;
}

double mf_objective(const DenseMatrix& p, const DenseMatrix& q, std::span<const Rating> ratings,
                    const MfLossParams& loss) {
  require(!ratings.empty(), "mf_objective: empty rating set");
  require(p.cols() == q.cols(), "mf_objective: latent dimension mismatch");
  double total = 0.0;
  for (const auto& r : ratings) {
    require(r.user < p.rows() && r.item < q.rows(), "mf_objective: rating index out of range");
    total += mf_loss(p.row(r.user), q.row(r.item), r.value, loss);
  }
  return total;
}

}  // namespace adg
