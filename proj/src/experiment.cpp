#include "adg/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

namespace adg {

namespace {

std::uint64_t data_seed(const ExperimentConfig& cfg) {
  return cfg.data.seed.value_or(cfg.run.seed);
}

ClassificationDataset load_classification(const ExperimentConfig& cfg) {
  const auto& d = cfg.data;
  if (d.kind == DataKind::libsvm) return load_sparse_classification(d.path);
  return synth_classification(d.n, d.d, d.separation, d.noise, data_seed(cfg)).data;
}

RatingMatrix load_rating_matrix(const ExperimentConfig& cfg) {
  const auto& d = cfg.data;
  if (d.kind == DataKind::ratings_file) return load_ratings(d.path, d.format).matrix;
  return synth_ratings(d.n_users, d.n_items, d.k_true, d.noise, d.density, data_seed(cfg)).matrix;
}

std::string format_real(double v) {
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

}  // namespace

std::shared_ptr<const PreparedClassification> prepare_classification(const ExperimentConfig& cfg) {
  auto out = std::make_shared<PreparedClassification>();
  const ClassificationDataset all = load_classification(cfg);
  if (all.examples.empty()) throw DataError("classification dataset is empty");
  out->split = split_dataset(all, data_seed(cfg), cfg.data.validation_fraction,
                             cfg.data.test_fraction);
  const auto& train = out->split.train;
  if (train.examples.size() < cfg.run.m) {
    throw InfeasiblePartition("fewer training examples than machines");
  }
  const double n = static_cast<double>(train.examples.size());
  out->loss = {cfg.optim.lambda.value_or(1.0 / n), train.examples.size()};
  out->shards = shard_examples(train, partition(train, cfg.run.m));
  std::size_t smallest = out->shards.front().size();
  for (const auto& s : out->shards) smallest = std::min(smallest, s.size());
  if (smallest < cfg.optim.batch_size) {
    throw ConfigError("config: optim.batch_size exceeds the smallest shard");
  }
  SvrgEpochConfig& sc = out->cfg;
  sc.batch_size = cfg.optim.batch_size;
  sc.t_max = cfg.optim.t_max > 0 ? cfg.optim.t_max : smallest / sc.batch_size;
  if (cfg.optim.gamma) {
    sc.gamma = *cfg.optim.gamma;
  } else {
    // per-example curvature bound of the full training objective
    const LogisticLossParams whole{out->loss.lambda, train.examples.size()};
    sc.gamma = 1.0 / estimate_smoothness(train.examples, whole).l_bound;
  }
  return out;
}

Evaluator classification_evaluator(std::shared_ptr<const PreparedClassification> data) {
  return [data](std::span<const double> w, std::span<const ParamVector>) {
    const auto& s = data->split;
    Evaluation e;
    e.train_objective = logistic_objective(w, s.train.examples, data->loss);
    e.validation_objective = s.validation.examples.empty()
                                 ? e.train_objective
                                 : logistic_objective(w, s.validation.examples, data->loss);
    const auto& test = s.test.examples.empty() ? s.train.examples : s.test.examples;
    e.test_metric = classification_accuracy(w, test);
    return e;
  };
}

std::shared_ptr<const PreparedRatings> prepare_ratings(const ExperimentConfig& cfg) {
  auto out = std::make_shared<PreparedRatings>();
  const RatingMatrix all = load_rating_matrix(cfg);
  if (all.ratings.empty()) throw DataError("rating matrix is empty");
  out->split =
      split_dataset(all, data_seed(cfg), cfg.data.validation_fraction, cfg.data.test_fraction);
  const RatingMatrix& train = out->split.train;
  out->coverage = TrainingCoverage::from(train);
  MfSetup& s = out->setup;
  s.loss = {cfg.optim.lambda.value_or(0.05), cfg.optim.k_latent};
  validate(s.loss);
  s.gamma = cfg.optim.gamma.value_or(0.005);
  s.seed = cfg.run.seed;
  s.n_items = train.n_items;
  s.user_blocks = block_ranges(partition(train, cfg.run.m));
  s.block_ratings = shard_ratings(train, s.user_blocks);
  for (std::size_t b = 0; b < s.block_ratings.size(); ++b) {
    if (s.block_ratings[b].empty()) {
      throw InfeasiblePartition("machine " + std::to_string(b) + " received no training ratings");
    }
  }
  RngState init_rng(cfg.run.seed, kMfInitStream);
  FactorState init = init_factors(train.n_users, train.n_items, s.loss, init_rng);
  const std::size_t k = s.loss.k_latent;
  for (const auto& block : s.user_blocks) {
    DenseMatrix p(block.size(), k);
    for (std::uint32_t u = 0; u < block.size(); ++u) {
      std::copy_n(init.p_block.row(block.begin + u).begin(), k, p.row(u).begin());
    }
    s.p_blocks.push_back(std::move(p));
  }
  s.q = std::move(init.q_shared);
  return out;
}

DenseMatrix assemble_p(const PreparedRatings& data, std::span<const ParamVector> p_blocks) {
  const auto& s = data.setup;
  require(p_blocks.size() == s.user_blocks.size(), "assemble_p: one block per machine required");
  const std::size_t k = s.loss.k_latent;
  DenseMatrix p(data.split.train.n_users, k);
  for (std::size_t b = 0; b < p_blocks.size(); ++b) {
    const IndexRange range = s.user_blocks[b];
    require(p_blocks[b].size() == static_cast<std::size_t>(range.size()) * k,
            "assemble_p: block size mismatch");
    std::copy(p_blocks[b].begin(), p_blocks[b].end(), p.row(range.begin).begin());
  }
  return p;
}

Evaluator mf_evaluator(std::shared_ptr<const PreparedRatings> data) {
  return [data](std::span<const double> q_flat, std::span<const ParamVector> locals) {
    const auto& s = data->setup;
    const DenseMatrix p = assemble_p(*data, locals);
    const DenseMatrix q(s.n_items, s.loss.k_latent, ParamVector(q_flat.begin(), q_flat.end()));
    const auto& split = data->split;
    Evaluation e;
    e.train_objective = mf_objective(p, q, split.train.ratings, s.loss);
    const auto& val = split.validation.ratings.empty() ? split.train.ratings
                                                       : split.validation.ratings;
    e.validation_objective = mf_objective(p, q, val, s.loss) / static_cast<double>(val.size());
    const RatingMatrix& test = split.test.ratings.empty() ? split.train : split.test;
    e.test_metric = evaluate_rmse(p, q, test, data->coverage, UnseenPolicy::skip).rmse;
    return e;
  };
}

std::shared_ptr<const PreparedQuadratic> prepare_quadratic(const ExperimentConfig& cfg) {
  auto out = std::make_shared<PreparedQuadratic>();
  out->problem =
      make_random_quadratic(cfg.run.m, cfg.data.quad_dim, cfg.data.quad_rows, data_seed(cfg));
  out->gamma = cfg.optim.gamma.value_or(1.0 / out->problem.smoothness());
  out->reference = solve_reference_minimizer(out->problem, out->gamma);
  return out;
}

Evaluator quadratic_evaluator(std::shared_ptr<const PreparedQuadratic> data) {
  return [data](std::span<const double> w, std::span<const ParamVector>) {
    Evaluation e;
    for (const auto& s : data->problem.shards) e.train_objective += s->value(w);
    e.validation_objective = e.train_objective;
    double sq = 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double d = w[j] - data->reference.w_star[j];
      sq += d * d;
    }
    e.test_metric = std::sqrt(sq);
    return e;
  };
}

std::vector<MachineModel> machine_models(const MachinesConfig& machines,
                                         std::span<const std::size_t> work_units) {
  const std::size_t m = work_units.size();
  require(machines.slow_count == 0 || machines.slow_count < m,
          "machine_models: slow machines must leave machine 0 at normal speed");
  std::vector<MachineModel> out;
  for (std::size_t j = 0; j < m; ++j) {
    const bool slow = j >= m - machines.slow_count;
    const std::uint64_t units = std::max<std::size_t>(1, work_units[j]);
    out.push_back({machines.ticks_per_example * units * (slow ? machines.slow_factor : 1),
                   machines.comm_ticks});
  }
  return out;
}

ProtocolOptions protocol_options(const ExperimentConfig& cfg) {
  ProtocolOptions o;
  o.max_epochs = cfg.run.max_epochs;
  o.epsilon = cfg.run.epsilon;
  o.target_validation = cfg.run.target;
  o.broadcast_on_ingest = cfg.run.broadcast_on_ingest;
  return o;
}

namespace {

std::vector<std::size_t> work_units_of(const WorkerSet& workers) {
  std::vector<std::size_t> out;
  for (const auto& w : workers) out.push_back(w->work_units());
  return out;
}

RunResult drive(WorkerSet& workers, const ParamVector& initial, const ExperimentConfig& cfg,
                const ProtocolOptions& options, const Evaluator& evaluate) {
  if (cfg.run.backend == Backend::threaded) {
    return run_threaded(workers, initial, options, evaluate);
  }
  if (cfg.run.mode == SimMode::timed) {
    const auto models = machine_models(cfg.machines, work_units_of(workers));
    return simulate_timed(workers, initial, models, options, evaluate);
  }
  const auto schedule =
      make_delay_schedule(cfg.delay.kind, cfg.delay.max, cfg.run.seed, workers.size());
  return simulate_rounds(workers, initial, schedule, options, evaluate);
}

SvrgSetup svrg_setup(const PreparedClassification& data, const ExperimentConfig& cfg) {
  SvrgSetup s;
  s.shards = data.shards;
  s.dim = data.split.train.dim;
  s.loss = data.loss;
  s.cfg = data.cfg;
  s.seed = cfg.run.seed;
  return s;
}

// Logical duration of the synchronized warm-start pass.
std::uint64_t warm_start_ticks(const ExperimentConfig& cfg, const SvrgSetup& setup) {
  std::size_t steps = std::numeric_limits<std::size_t>::max();
  for (const auto& s : setup.shards) steps = std::min(steps, s.size() / setup.cfg.batch_size);
  if (cfg.run.mode == SimMode::rounds) return steps;
  const std::vector<std::size_t> units(setup.shards.size(), setup.cfg.batch_size);
  std::uint64_t step = 0;
  for (const auto& mm : machine_models(cfg.machines, units)) {
    step = std::max(step, mm.compute_ticks_per_epoch + 2 * mm.comm_ticks);
  }
  return steps * step;
}

std::unique_ptr<MachinePool> pool_for(const ExperimentConfig& cfg) {
  if (cfg.run.backend != Backend::threaded) return nullptr;
  return std::make_unique<MachinePool>(cfg.run.m);
}

}  // namespace

RunResult run_async(const ExperimentConfig& cfg) {
  validate(cfg);
  ProtocolOptions options = protocol_options(cfg);
  const Algorithm a = cfg.run.algorithm;
  if (a == Algorithm::plain_gradient && cfg.data.kind == DataKind::quadratic) {
    const auto data = prepare_quadratic(cfg);
    WorkerSet workers;
    for (const auto& s : data->problem.shards) {
      workers.push_back(std::make_unique<GradientWorker>(s, data->gamma, cfg.data.quad_rows));
    }
    const ParamVector initial(data->problem.dim(), 0.0);
    return drive(workers, initial, cfg, options, quadratic_evaluator(data));
  }
  require(a == Algorithm::adg_bc || a == Algorithm::plain_gradient,
          "run_async: classification algorithm expected");
  const auto data = prepare_classification(cfg);
  const std::size_t dim = data->split.train.dim;
  ParamVector initial(dim, 0.0);
  WorkerSet workers;
  if (a == Algorithm::plain_gradient) {
    double l_max = 0.0;
    for (const auto& shard : data->shards) {
      l_max = std::max(l_max, estimate_smoothness(shard, data->loss).l_bound);
    }
    const double gamma = cfg.optim.gamma.value_or(1.0 / l_max);
    for (const auto& shard : data->shards) {
      workers.push_back(std::make_unique<GradientWorker>(
          std::make_shared<LogisticShard>(shard, dim, data->loss), gamma, shard.size()));
    }
  } else {
    const SvrgSetup setup = svrg_setup(*data, cfg);
    if (cfg.run.warm_start.value_or(true)) {
      const auto pool = pool_for(cfg);
      initial = synchronized_gradient_pass(setup, initial, options.start_comm, pool.get());
      options.start_tick = cfg.run.backend == Backend::threaded ? 0 : warm_start_ticks(cfg, setup);
    }
    for (std::size_t j = 0; j < data->shards.size(); ++j) {
      workers.push_back(std::make_unique<SvrgWorker>(data->shards[j], data->cfg, data->loss,
                                                     svrg_machine_rng(setup, j)));
    }
  }
  return drive(workers, initial, cfg, options, classification_evaluator(data));
}

RunResult run_async_mf(const ExperimentConfig& cfg) {
  validate(cfg);
  require(cfg.run.algorithm == Algorithm::adg_mf, "run_async_mf: adg_mf expected");
  if (cfg.run.warm_start.value_or(false)) {
    throw ConfigError("config: run.warm_start is not available for adg_mf");
  }
  const auto data = prepare_ratings(cfg);
  WorkerSet workers = make_mf_workers(data->setup);
  return drive(workers, data->setup.q.data(), cfg, protocol_options(cfg), mf_evaluator(data));
}

RunResult run_algorithm(const ExperimentConfig& cfg) {
  validate(cfg);
  const Algorithm a = cfg.run.algorithm;
  if (a == Algorithm::adg_bc || a == Algorithm::plain_gradient) return run_async(cfg);
  if (a == Algorithm::adg_mf) return run_async_mf(cfg);

  const auto pool = pool_for(cfg);
  BaselineOptions options;
  options.protocol = protocol_options(cfg);
  options.pool = pool.get();
  std::vector<MachineModel> models;

  if (is_classification(a)) {
    const auto data = prepare_classification(cfg);
    const SvrgSetup setup = svrg_setup(*data, cfg);
    const ParamVector initial(data->split.train.dim, 0.0);
    if (cfg.run.warm_start.value_or(false)) {
      throw ConfigError(std::string("config: run.warm_start is not available for ") +
                        to_string(a));
    }
    if (cfg.run.backend == Backend::simulated && cfg.run.mode == SimMode::timed) {
      std::vector<std::size_t> units;
      for (const auto& s : setup.shards) units.push_back(s.size());
      models = machine_models(cfg.machines, units);
      options.machines = models;
    }
    const Evaluator ev = classification_evaluator(data);
    if (a == Algorithm::sync_svrg) return run_sync_svrg(setup, initial, options, ev);
    if (cfg.run.backend == Backend::threaded) {
      options.pool = nullptr;
      return run_async_svrg_threaded(setup, initial, options, ev);
    }
    if (cfg.run.mode == SimMode::timed) {
      throw ConfigError("config: async_svrg on the simulated backend supports run.mode = rounds");
    }
    const auto schedule =
        make_delay_schedule(cfg.delay.kind, cfg.delay.max, cfg.run.seed, setup.shards.size());
    return run_async_svrg(setup, initial, schedule, options, ev);
  }

  if (cfg.run.warm_start.value_or(false)) {
    throw ConfigError(std::string("config: run.warm_start is not available for ") + to_string(a));
  }
  const auto data = prepare_ratings(cfg);
  if (cfg.run.backend == Backend::simulated && cfg.run.mode == SimMode::timed) {
    std::vector<std::size_t> units;
    for (const auto& b : data->setup.block_ratings) units.push_back(b.size());
    models = machine_models(cfg.machines, units);
    options.machines = models;
  }
  const Evaluator ev = mf_evaluator(data);
  if (a == Algorithm::asgd) return run_asgd(data->setup, options, ev);
  return run_dsgd(data->setup, options, DsgdOptions{cfg.run.shuffle_strata}, ev);
}

namespace {

std::string summary_header() {
  return "schema_version,algorithm,backend,mode,m,epochs,master_rounds,logical_ticks,"
         "wall_seconds,stop_reason,sends,receives,broadcasts,gathers,barriers,dropped,"
         "total_calls,comm_time,train_objective,train_objective_per_record,"
         "validation_objective,test_rmse_or_accuracy";
}

// `ratings` is set for MF runs.
std::string model_text(const RunResult& r, const PreparedRatings* ratings) {
  std::ostringstream out;
  out << "# adg model v1\n";
  if (ratings) {
    const PreparedRatings* data = ratings;
    const DenseMatrix p = assemble_p(*data, r.locals);
    const std::size_t k = data->setup.loss.k_latent;
    auto dump = [&](const char* name, const DenseMatrix& mat) {
      out << name << ' ' << mat.rows() << ' ' << mat.cols() << '\n';
      for (std::size_t i = 0; i < mat.rows(); ++i) {
        for (std::size_t c = 0; c < mat.cols(); ++c) {
          out << (c ? " " : "") << format_real(mat(i, c));
        }
        out << '\n';
      }
    };
    dump("P", p);
    dump("Q", DenseMatrix(data->setup.n_items, k, r.shared));
  } else {
    out << "w " << r.shared.size() << '\n';
    for (double v : r.shared) out << format_real(v) << '\n';
  }
  return out.str();
}

}  // namespace

ExperimentOutput run_experiment(const ExperimentConfig& cfg,
                                const std::optional<std::string>& output_dir) {
  ExperimentOutput out;
  out.result = run_algorithm(cfg);
  const RunResult& r = out.result;
  const MetricsRow last = r.rows.empty() ? MetricsRow{} : r.rows.back();
  std::shared_ptr<const PreparedRatings> ratings;
  if (is_mf(cfg.run.algorithm)) ratings = prepare_ratings(cfg);
  const double records =
      ratings ? static_cast<double>(ratings->split.train.ratings.size()) : 1.0;
  std::ostringstream summary;
  summary << summary_header() << '\n'
          << kMetricsSchemaVersion << ',' << to_string(cfg.run.algorithm) << ','
          << to_string(cfg.run.backend) << ',' << to_string(cfg.run.mode) << ',' << cfg.run.m
          << ',' << last.epoch << ',' << r.master_rounds << ',' << r.logical_ticks << ','
          << format_real(r.wall_seconds) << ',' << to_string(r.stop) << ',' << r.comm.sends << ','
          << r.comm.receives << ',' << r.comm.broadcasts << ',' << r.comm.gathers << ','
          << r.comm.barriers << ',' << r.comm.dropped << ',' << r.comm.total_calls() << ','
          << format_real(r.comm.time_in_calls) << ',' << format_real(last.train_objective) << ','
          << format_real(last.train_objective / records) << ','
          << format_real(last.validation_objective) << ','
          << format_real(last.test_rmse_or_accuracy) << '\n';
  out.summary_csv = summary.str();
  out.model_text = model_text(r, ratings.get());

  if (output_dir) {
    namespace fs = std::filesystem;
    const fs::path dir(*output_dir);
    fs::create_directories(dir);
    auto open = [&](const char* name) {
      std::ofstream f(dir / name);
      if (!f) throw DataError("cannot write " + (dir / name).string());
      return f;
    };
    {
      auto f = open("metrics.csv");
      write_metrics_csv(f, r.rows);
    }
    open("summary.csv") << out.summary_csv;
    {
      auto f = open("trace.jsonl");
      r.trace.write_jsonl(f);
    }
    open("model.txt") << out.model_text;
    open("config.txt") << to_text(cfg);
  }
  return out;
}

std::string output_directory_from_env() {
  const char* env = std::getenv("ADG_OUTPUT_DIR");
  return (env && *env) ? std::string(env) : std::string("adg_output");
}

std::vector<SpeedupRow> measure_speedup(const ExperimentConfig& cfg,
                                        std::span<const std::size_t> worker_counts) {
  require(!worker_counts.empty(), "measure_speedup: no worker counts");
  std::vector<SpeedupRow> rows;
  std::vector<double> to_target;
  for (std::size_t m : worker_counts) {
    ExperimentConfig c = cfg;
    c.run.m = m;
    if (c.run.backend == Backend::simulated) c.run.mode = SimMode::timed;
    const RunResult r = run_algorithm(c);
    SpeedupRow row;
    row.m = m;
    row.epochs = r.rows.size();
    row.wall_seconds = r.wall_seconds;
    row.logical_ticks = r.logical_ticks;
    const bool simulated = c.run.backend == Backend::simulated;
    auto time_at = [&](const MetricsRow& mr) {
      return simulated ? static_cast<double>(mr.logical_tick) : mr.wall_seconds;
    };
    const double elapsed = r.rows.empty() ? 0.0 : time_at(r.rows.back());
    // steady-state epoch time; the first epoch also carries any warm start
    if (row.epochs >= 2) {
      row.time_per_epoch = (elapsed - time_at(r.rows.front())) / static_cast<double>(row.epochs - 1);
    } else {
      row.time_per_epoch = elapsed;
    }
    row.reached_target = r.stop == StopReason::target;
    row.censored = cfg.run.target.has_value() && !row.reached_target;
    to_target.push_back(row.reached_target ? elapsed : NAN);
    rows.push_back(row);
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    rows[i].speedup_per_epoch =
        rows[i].time_per_epoch > 0.0 ? rows[0].time_per_epoch / rows[i].time_per_epoch : 0.0;
    if (rows[0].reached_target && rows[i].reached_target && to_target[i] > 0.0) {
      rows[i].speedup_to_target = to_target[0] / to_target[i];
    }
  }
  return rows;
}

void write_speedup_csv(std::ostream& out, std::span<const SpeedupRow> rows) {
  out << "m,epochs,wall_seconds,logical_ticks,time_per_epoch,reached_target,censored,"
         "speedup_per_epoch,speedup_to_target\n";
  for (const auto& r : rows) {
    out << r.m << ',' << r.epochs << ',' << format_real(r.wall_seconds) << ',' << r.logical_ticks
        << ',' << format_real(r.time_per_epoch) << ',' << (r.reached_target ? 1 : 0) << ','
        << (r.censored ? 1 : 0) << ',' << format_real(r.speedup_per_epoch) << ','
        << (r.speedup_to_target ? format_real(*r.speedup_to_target) : std::string()) << '\n';
  }
}

}  // namespace adg
