#pragma once

// Comparison strategies: synchronous gradient descent, Sync-SVRG and
// Async-SVRG for classification; ASGD (epoch-averaged Q) and DSGD
// (stratum-scheduled blocks) for matrix factorization.

#include <cstdint>
#include <memory>
#include <span>
#include <utility>
#include <vector>

#include "adg/async_core.hpp"
#include "adg/data_io.hpp"
#include "adg/transport.hpp"

namespace adg {

// Blocks (row_block, col_block) with pairwise-distinct rows and columns.
struct Stratum {
  std::vector<std::pair<std::size_t, std::size_t>> blocks;

  bool operator==(const Stratum&) const = default;
};

struct StratumSchedule {
  std::vector<Stratum> strata;
};

// Stratum s = {(r, (r + s) mod m) : r < m}.
StratumSchedule make_strata(std::size_t m);

// Every block of the m x m grid appears exactly once and no stratum repeats
// a row or a column.
bool is_valid_schedule(const StratumSchedule& schedule, std::size_t m);

// Everything a baseline needs besides the algorithm itself.
struct BaselineOptions {
  ProtocolOptions protocol;              // stopping rule and comm offsets
  MachinePool* pool = nullptr;           // threads for the per-machine work; null = sequential
  std::span<const MachineModel> machines;  // logical timing; empty = one tick per epoch
};

// Synchronous distributed gradient descent: every machine steps from the
// same w_bar, the master gathers and averages. Emits the same trace events
// as the asynchronous protocol.
RunResult run_sync_gradient(std::span<const std::shared_ptr<const SmoothShard>> shards,
                            double gamma, const ParamVector& initial,
                            const BaselineOptions& options, const Evaluator& evaluate);

struct SvrgSetup {
  std::vector<std::vector<LabeledExample>> shards;
  std::size_t dim = 0;
  LogisticLossParams loss;
  SvrgEpochConfig cfg;  // t_max = mini-batch steps per epoch
  std::uint64_t seed = 0;
};

// Machine j samples its mini-batches from RngState(seed, j).
RngState svrg_machine_rng(const SvrgSetup& setup, std::size_t machine);

// One synchronized pass of mini-batch gradient steps over contiguous batches:
// at step t every machine takes the gradient of its t-th batch at the shared
// w, the master averages and applies it. Adds M sends, one gather, one
// barrier and one broadcast per step to `comm`.
ParamVector synchronized_gradient_pass(const SvrgSetup& setup, const ParamVector& initial,
                                       CommStats& comm, MachinePool* pool = nullptr);

// Sync-SVRG: per epoch each machine fixes the anchor w_tilde = w and its
// shard anchor gradient; each of the t_max steps averages the machines'
// variance-reduced batch gradients and applies the mean.
RunResult run_sync_svrg(const SvrgSetup& setup, const ParamVector& initial,
                        const BaselineOptions& options, const Evaluator& evaluate);

// Async-SVRG on the delay-schedule simulator: at round k machine j computes
// its variance-reduced batch gradient at w^{k - d(j,k)} and sends it; the
// master applies each gradient in arrival order scaled by gamma / M, then
// broadcasts. A machine refreshes its anchor every t_max gradients.
RunResult run_async_svrg(const SvrgSetup& setup, const ParamVector& initial,
                         const DelaySchedule& schedule, const BaselineOptions& options,
                         const Evaluator& evaluate);

// Async-SVRG with one thread per machine exchanging gradients and parameters
// through mailboxes.
RunResult run_async_svrg_threaded(const SvrgSetup& setup, const ParamVector& initial,
                                  const BaselineOptions& options, const Evaluator& evaluate);

// Row-block MF problem: machine b owns user rows [user_blocks[b]) and their
// ratings (users local to the block, items global).
struct MfSetup {
  std::vector<IndexRange> user_blocks;
  std::vector<std::vector<Rating>> block_ratings;
  std::vector<DenseMatrix> p_blocks;
  DenseMatrix q;
  std::size_t n_items = 0;
  double gamma = 0.0;
  MfLossParams loss;
  std::uint64_t seed = 0;
};

// Row-block workers running one pass over their block per epoch; machine b
// samples from RngState(seed, b).
WorkerSet make_mf_workers(const MfSetup& setup);

// ASGD: every machine runs one local epoch from the common Q, barrier, Q
// copies averaged and broadcast; one barrier per epoch.
RunResult run_asgd(const MfSetup& setup, const BaselineOptions& options,
                   const Evaluator& evaluate);

// DSGD state: user blocks from the row partition, item blocks of equal size.
class DsgdState {
 public:
  DsgdState(const MfSetup& setup, std::span<const IndexRange> item_blocks);

  std::size_t machines() const { return p_blocks_.size(); }
  const std::vector<DenseMatrix>& p_blocks() const { return p_blocks_; }
  const DenseMatrix& q() const { return q_; }

  // Ratings of block (r, c) with user and item indices local to the block.
  std::span<const Rating> block(std::size_t r, std::size_t c) const {
    return blocks_[r * machines() + c];
  }

  // Processes every block of `stratum` in the given order (indices into
  // stratum.blocks): block (r, c) runs one pass over its ratings on machine
  // r's RNG with P_r and the rows of item block c.
  void process_stratum(const Stratum& stratum, std::span<const std::size_t> order,
                       MachinePool* pool = nullptr);

 private:
  std::vector<IndexRange> item_blocks_;
  std::vector<std::vector<Rating>> blocks_;
  std::vector<DenseMatrix> p_blocks_;
  DenseMatrix q_;
  double gamma_;
  MfLossParams loss_;
  std::vector<RngState> rngs_;
};

struct DsgdOptions {
  bool shuffle_strata = false;  // permute stratum order every epoch
};

// DSGD: per epoch every stratum is processed in parallel, then a barrier
// synchronizes the touched P and Q rows; m barriers per epoch.
RunResult run_dsgd(const MfSetup& setup, const BaselineOptions& options, DsgdOptions dsgd,
                   const Evaluator& evaluate);

}  // namespace adg
