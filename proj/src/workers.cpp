#include "adg/workers.hpp"

namespace adg {

GradientWorker::GradientWorker(std::shared_ptr<const SmoothShard> shard, double gamma,
                               std::size_t work_units)
    : shard_(std::move(shard)), gamma_(gamma), work_units_(work_units) {
  require(shard_ != nullptr, "GradientWorker: null shard");
}

ParamVector GradientWorker::local_epoch(std::span<const double> basis) {
  return gradient_local_step(basis, *shard_, gamma_);
}

SvrgWorker::SvrgWorker(std::vector<LabeledExample> shard, SvrgEpochConfig cfg,
                       LogisticLossParams loss, RngState rng)
    : shard_(std::move(shard)), cfg_(cfg), loss_(loss), rng_(rng) {
  validate(cfg_);
  require(shard_.size() >= cfg_.batch_size, "SvrgWorker: shard smaller than batch");
}

ParamVector SvrgWorker::local_epoch(std::span<const double> basis) {
  return svrg_local_epoch(basis, shard_, cfg_, loss_, rng_);
}

MfWorker::MfWorker(std::vector<Rating> local_ratings, DenseMatrix p_block, std::size_t n_items,
                   double gamma, MfLossParams loss, RngState rng, std::size_t steps_per_epoch)
    : ratings_(std::move(local_ratings)),
      state_{std::move(p_block), DenseMatrix(n_items, loss.k_latent)},
      gamma_(gamma),
      loss_(loss),
      rng_(rng),
      steps_per_epoch_(steps_per_epoch) {
  require(!ratings_.empty(), "MfWorker: empty rating block");
  require(steps_per_epoch_ >= 1, "MfWorker: steps_per_epoch must be positive");
}

ParamVector MfWorker::local_epoch(std::span<const double> basis) {
  require(basis.size() == state_.q_shared.data().size(), "MfWorker: Q size mismatch");
  std::copy(basis.begin(), basis.end(), state_.q_shared.data().begin());
  mf_local_epoch(state_, ratings_, gamma_, loss_, rng_, steps_per_epoch_);
  return state_.q_shared.data();
}

}  // namespace adg
