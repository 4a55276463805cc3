#include "adg/local_solvers.hpp"

#include <cmath>

namespace adg {

QuadraticShard::QuadraticShard(Eigen::MatrixXd a, Eigen::VectorXd b)
    : a_(std::move(a)), b_(std::move(b)) {
  require(a_.rows() == b_.size(), "QuadraticShard: A rows must match b length");
  require(a_.cols() > 0, "QuadraticShard: empty parameter dimension");
}

double QuadraticShard::value(std::span<const double> w) const {
  require(w.size() == dim(), "QuadraticShard: dimension mismatch");
  Eigen::Map<const Eigen::VectorXd> x(w.data(), static_cast<Eigen::Index>(w.size()));
  return 0.5 * (a_ * x - b_).squaredNorm();
}

ParamVector QuadraticShard::gradient(std::span<const double> w) const {
  require(w.size() == dim(), "QuadraticShard: dimension mismatch");
  Eigen::Map<const Eigen::VectorXd> x(w.data(), static_cast<Eigen::Index>(w.size()));
  Eigen::VectorXd g = a_.transpose() * (a_ * x - b_);
  return ParamVector(g.data(), g.data() + g.size());
}

double QuadraticShard::smoothness() const {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a_.transpose() * a_, Eigen::EigenvaluesOnly);
  return es.eigenvalues().maxCoeff();
}

LogisticShard::LogisticShard(std::vector<LabeledExample> examples, std::size_t dim,
                             LogisticLossParams loss)
    : examples_(std::move(examples)), dim_(dim), loss_(loss) {
  require(!examples_.empty(), "LogisticShard: empty shard");
  validate(loss_);
}

double LogisticShard::value(std::span<const double> w) const {
  const double weight =
      static_cast<double>(examples_.size()) / static_cast<double>(loss_.n_total);
  return weight * logistic_objective(w, examples_, loss_);
}

ParamVector LogisticShard::gradient(std::span<const double> w) const {
  require(w.size() == dim_, "LogisticShard: dimension mismatch");
  const double weight =
      static_cast<double>(examples_.size()) / static_cast<double>(loss_.n_total);
  ParamVector g = shard_mean_gradient(w, examples_, loss_);
  for (double& x : g) x *= weight;
  return g;
}

ParamVector gradient_local_step(std::span<const double> w_bar_delayed, const SmoothShard& shard,
                                double gamma) {
  require(gamma >= 0.0, "gradient_local_step: gamma must be non-negative");
  ParamVector out(w_bar_delayed.begin(), w_bar_delayed.end());
  if (gamma == 0.0) return out;
  const ParamVector g = shard.gradient(w_bar_delayed);
  for (std::size_t j = 0; j < out.size(); ++j) out[j] -= gamma * g[j];
  if (!all_finite(out)) {
    throw DivergedError("gradient_local_step: non-finite iterate",
                        ParamVector(w_bar_delayed.begin(), w_bar_delayed.end()), 0);
  }
  return out;
}

void validate(const SvrgEpochConfig& cfg) {
  require(cfg.t_max >= 1, "SvrgEpochConfig: t_max must be positive");
  require(cfg.batch_size >= 1, "SvrgEpochConfig: batch_size must be positive");
  require(cfg.gamma >= 0.0, "SvrgEpochConfig: gamma must be non-negative");
}

ParamVector svrg_local_epoch(std::span<const double> w_tilde,
                             std::span<const LabeledExample> shard, const SvrgEpochConfig& cfg,
                             const LogisticLossParams& loss, RngState& rng) {
  validate(cfg);
  require(shard.size() >= cfg.batch_size, "svrg_local_epoch: shard smaller than batch");
  const ParamVector mu = shard_mean_gradient(w_tilde, shard, loss);
  ParamVector w(w_tilde.begin(), w_tilde.end());
  std::vector<std::size_t> batch(cfg.batch_size);
  for (std::size_t t = 0; t < cfg.t_max; ++t) {
    for (auto& i : batch) i = rng.index(shard.size());
    const ParamVector g_now = logistic_grad(w, shard, batch, loss);
    const ParamVector g_anchor = logistic_grad(w_tilde, shard, batch, loss);
    ParamVector next(w.size());
    for (std::size_t j = 0; j < w.size(); ++j) {
      next[j] = w[j] - cfg.gamma * (g_now[j] - g_anchor[j] + mu[j]);
    }
    if (!all_finite(next)) throw DivergedError("svrg_local_epoch: non-finite iterate", w, t);
    w = std::move(next);
  }
  return w;
}

void mf_local_epoch(FactorState& state, std::span<const Rating> block_ratings, double gamma,
                    const MfLossParams& loss, RngState& rng, std::size_t n_steps) {
  require(!block_ratings.empty(), "mf_local_epoch: empty block");
  require(state.p_block.cols() == loss.k_latent && state.q_shared.cols() == loss.k_latent,
          "mf_local_epoch: latent dimension mismatch");
  const std::size_t k = loss.k_latent;
  for (std::size_t step = 0; step < n_steps; ++step) {
    const Rating& r = block_ratings[rng.index(block_ratings.size())];
    require(r.user < state.p_block.rows() && r.item < state.q_shared.rows(),
            "mf_local_epoch: rating outside the local block");
    auto p = state.p_block.row(r.user);
    auto q = state.q_shared.row(r.item);
    const MfGradient g = mf_grad(p, q, r.value, loss);
    for (std::size_t c = 0; c < k; ++c) {
      p[c] -= gamma * g.grad_p[c];
      q[c] -= gamma * g.grad_q[c];
    }
    if (!all_finite(p) || !all_finite(q)) {
      throw DivergedError("mf_local_epoch: non-finite factor", ParamVector(q.begin(), q.end()),
                          step);
    }
  }
}

FactorState init_factors(std::size_t n_users_block, std::size_t n_items, const MfLossParams& loss,
                         RngState& rng) {
  require(n_users_block > 0 && n_items > 0, "init_factors: dimensions must be positive");
  validate(loss);
  const double hi = 1.0 / std::sqrt(static_cast<double>(loss.k_latent));
  FactorState s{DenseMatrix(n_users_block, loss.k_latent),
                DenseMatrix(n_items, loss.k_latent)};
  for (double& x : s.p_block.data()) x = rng.uniform(0.0, hi);
  for (double& x : s.q_shared.data()) x = rng.uniform(0.0, hi);
  return s;
}

}  // namespace adg
