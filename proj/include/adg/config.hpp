#pragma once

// Declarative experiment description: flat `key = value` lines grouped in
// [sections]. Unknown sections or keys are errors.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "adg/data_io.hpp"
#include "adg/sim_scheduler.hpp"

namespace adg {

enum class Algorithm { adg_bc, adg_mf, sync_svrg, async_svrg, asgd, dsgd, plain_gradient };
enum class Backend { simulated, threaded };
// How the simulated backend models time.
enum class SimMode { rounds, timed };
enum class DataKind { synthetic_classification, synthetic_ratings, libsvm, ratings_file, quadratic };

const char* to_string(Algorithm a);
const char* to_string(Backend b);
const char* to_string(SimMode s);
const char* to_string(DataKind d);

bool is_mf(Algorithm a);
bool is_classification(Algorithm a);

struct RunConfig {
  Algorithm algorithm = Algorithm::adg_bc;
  Backend backend = Backend::simulated;
  SimMode mode = SimMode::rounds;
  std::size_t m = 1;
  std::uint64_t seed = 1;
  double epsilon = 1e-4;
  std::size_t max_epochs = 100;
  bool broadcast_on_ingest = false;
  std::optional<bool> warm_start;    // unset: on for adg_bc, off otherwise
  std::optional<double> target;      // stop once validation objective <= target
  bool shuffle_strata = false;
};

struct DataConfig {
  DataKind kind = DataKind::synthetic_classification;
  std::string path;
  RatingFormat format = RatingFormat::double_colon;
  // synthetic classification
  std::size_t n = 4000;
  std::size_t d = 50;
  double separation = 1.0;
  // synthetic ratings
  std::size_t n_users = 200;
  std::size_t n_items = 100;
  std::size_t k_true = 5;
  double density = 0.2;
  // label-flip rate (classification) or rating noise stddev (ratings)
  double noise = 0.05;
  // quadratic
  std::size_t quad_dim = 10;
  std::size_t quad_rows = 20;
  std::optional<std::uint64_t> seed;  // unset: run.seed
  double validation_fraction = 0.1;
  double test_fraction = 0.1;
};

struct OptimConfig {
  std::optional<double> gamma;   // unset: 1/L bound (classification, quadratic) or 0.005 (MF)
  std::optional<double> lambda;  // unset: 1/n_train (classification) or 0.05 (MF)
  std::size_t k_latent = 40;
  std::size_t batch_size = 10;
  std::size_t t_max = 0;  // 0: smallest shard size / batch_size
};

struct DelayConfig {
  DelayKind kind = DelayKind::constant;
  std::size_t max = 0;
};

struct MachinesConfig {
  std::uint64_t ticks_per_example = 1;
  std::uint64_t comm_ticks = 0;
  std::size_t slow_count = 0;   // the last slow_count machines
  std::uint64_t slow_factor = 1;
};

struct ExperimentConfig {
  RunConfig run;
  DataConfig data;
  OptimConfig optim;
  DelayConfig delay;
  MachinesConfig machines;
};

ExperimentConfig parse_config(std::istream& in);
ExperimentConfig load_config(const std::string& path);

// "section.key=value"
void apply_override(ExperimentConfig& cfg, const std::string& assignment);

// Sets one key; throws ConfigError on unknown keys or malformed values.
void set_config_value(ExperimentConfig& cfg, const std::string& section, const std::string& key,
                      const std::string& value);

// Cross-field checks (gamma > 0, epsilon > 0, m >= 1, algorithm/data fit).
void validate(const ExperimentConfig& cfg);

// Round-trips through parse_config.
std::string to_text(const ExperimentConfig& cfg);

}  // namespace adg
