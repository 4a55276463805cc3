#pragma once

// Per-machine local-step computations.

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "adg/losses.hpp"
#include "adg/types.hpp"

namespace adg {

// A differentiable per-machine objective L_i.
class SmoothShard {
 public:
  virtual ~SmoothShard() = default;
  virtual std::size_t dim() const = 0;
  virtual double value(std::span<const double> w) const = 0;
  virtual ParamVector gradient(std::span<const double> w) const = 0;
};

// L_i(w) = 1/2 ||A w - b||^2
class QuadraticShard final : public SmoothShard {
 public:
  QuadraticShard(Eigen::MatrixXd a, Eigen::VectorXd b);

  std::size_t dim() const override { return static_cast<std::size_t>(a_.cols()); }
  double value(std::span<const double> w) const override;
  ParamVector gradient(std::span<const double> w) const override;

  const Eigen::MatrixXd& a() const { return a_; }
  const Eigen::VectorXd& b() const { return b_; }
  // Largest eigenvalue of A^T A; the gradient is 1/L-cocoercive with this L.
  double smoothness() const;

 private:
  Eigen::MatrixXd a_;
  Eigen::VectorXd b_;
};

// L_i(w) = (1/n_total) sum_{shard} loss, so that sum_i L_i is the global mean objective.
class LogisticShard final : public SmoothShard {
 public:
  LogisticShard(std::vector<LabeledExample> examples, std::size_t dim, LogisticLossParams loss);

  std::size_t dim() const override { return dim_; }
  double value(std::span<const double> w) const override;
  ParamVector gradient(std::span<const double> w) const override;

  std::span<const LabeledExample> examples() const { return examples_; }
  const LogisticLossParams& loss() const { return loss_; }

 private:
  std::vector<LabeledExample> examples_;
  std::size_t dim_;
  LogisticLossParams loss_;
};

// w_bar - gamma * grad L_i(w_bar)
ParamVector gradient_local_step(std::span<const double> w_bar_delayed, const SmoothShard& shard,
                                double gamma);

struct SvrgEpochConfig {
  std::size_t t_max = 1;
  std::size_t batch_size = 1;
  double gamma = 0.0;
};

void validate(const SvrgEpochConfig& cfg);

// Variance-reduced epoch anchored at w_tilde with the shard-local anchor gradient.
// Each step draws `batch_size` indices uniformly with replacement and applies
//   w <- w - gamma * ((1/B) sum_I grad(w) - (1/B) sum_I grad(w_tilde) + mu_tilde).
ParamVector svrg_local_epoch(std::span<const double> w_tilde,
                             std::span<const LabeledExample> shard, const SvrgEpochConfig& cfg,
                             const LogisticLossParams& loss, RngState& rng);

// Local user rows P_b and the exchanged item matrix Q.
struct FactorState {
  DenseMatrix p_block;
  DenseMatrix q_shared;

  bool operator==(const FactorState&) const = default;
};

// n_steps SGD steps, each on one rating drawn uniformly with replacement.
// Both gradients are taken at the pre-step (p_u, q_i) and applied together.
// Rating users are local row indices of p_block.
void mf_local_epoch(FactorState& state, std::span<const Rating> block_ratings, double gamma,
                    const MfLossParams& loss, RngState& rng, std::size_t n_steps);

// Entries i.i.d. uniform in [0, 1/sqrt(K)]; P is drawn before Q.
FactorState init_factors(std::size_t n_users_block, std::size_t n_items, const MfLossParams& loss,
                         RngState& rng);

}  // namespace adg
