#include "adg/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace adg {

const char* to_string(Algorithm a) {
  switch (a) {
    case Algorithm::adg_bc: return "adg_bc";
    case Algorithm::adg_mf: return "adg_mf";
    case Algorithm::sync_svrg: return "sync_svrg";
    case Algorithm::async_svrg: return "async_svrg";
    case Algorithm::asgd: return "asgd";
    case Algorithm::dsgd: return "dsgd";
    case Algorithm::plain_gradient: return "plain_gradient";
  }
  return "?";
}

const char* to_string(Backend b) { return b == Backend::simulated ? "simulated" : "threaded"; }
const char* to_string(SimMode s) { return s == SimMode::rounds ? "rounds" : "timed"; }

const char* to_string(DataKind d) {
  switch (d) {
    case DataKind::synthetic_classification: return "synthetic_classification";
    case DataKind::synthetic_ratings: return "synthetic_ratings";
    case DataKind::libsvm: return "libsvm";
    case DataKind::ratings_file: return "ratings_file";
    case DataKind::quadratic: return "quadratic";
  }
  return "?";
}

bool is_mf(Algorithm a) {
  return a == Algorithm::adg_mf || a == Algorithm::asgd || a == Algorithm::dsgd;
}

bool is_classification(Algorithm a) {
  return a == Algorithm::adg_bc || a == Algorithm::sync_svrg || a == Algorithm::async_svrg;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* want) {
  throw ConfigError("config: " + key + " = '" + value + "' is not " + want);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* first = value.data();
  const char* last = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc() || ptr != last) {
    bad_value(key, value, std::is_floating_point_v<T> ? "a number" : "a non-negative integer");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  bad_value(key, value, "a boolean");
}

std::string fmt(double v) {
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

std::string fmt(bool v) { return v ? "true" : "false"; }

struct Field {
  std::function<void(ExperimentConfig&, const std::string& key, const std::string& value)> set;
  // nullopt when the field is unset
  std::function<std::optional<std::string>(const ExperimentConfig&)> get;
};

using Registry = std::map<std::string, Field>;

template <typename T>
void add_size(Registry& r, const std::string& name, T ExperimentConfig::*section, std::size_t T::*f) {
  r[name] = {[=](ExperimentConfig& c, const std::string& k, const std::string& v) {
               (c.*section).*f = parse_number<std::size_t>(k, v);
             },
             [=](const ExperimentConfig& c) -> std::optional<std::string> {
               return std::to_string((c.*section).*f);
             }};
}

template <typename T>
void add_u64(Registry& r, const std::string& name, T ExperimentConfig::*section,
             std::uint64_t T::*f) {
  r[name] = {[=](ExperimentConfig& c, const std::string& k, const std::string& v) {
               (c.*section).*f = parse_number<std::uint64_t>(k, v);
             },
             [=](const ExperimentConfig& c) -> std::optional<std::string> {
               return std::to_string((c.*section).*f);
             }};
}

template <typename T>
void add_real(Registry& r, const std::string& name, T ExperimentConfig::*section, double T::*f) {
  r[name] = {[=](ExperimentConfig& c, const std::string& k, const std::string& v) {
               (c.*section).*f = parse_number<double>(k, v);
             },
             [=](const ExperimentConfig& c) -> std::optional<std::string> {
               return fmt((c.*section).*f);
             }};
}

template <typename T>
void add_opt_real(Registry& r, const std::string& name, T ExperimentConfig::*section,
                  std::optional<double> T::*f) {
  r[name] = {[=](ExperimentConfig& c, const std::string& k, const std::string& v) {
               (c.*section).*f = parse_number<double>(k, v);
             },
             [=](const ExperimentConfig& c) -> std::optional<std::string> {
               const auto& o = (c.*section).*f;
               if (!o) return std::nullopt;
               return fmt(*o);
             }};
}

template <typename T>
void add_bool(Registry& r, const std::string& name, T ExperimentConfig::*section, bool T::*f) {
  r[name] = {[=](ExperimentConfig& c, const std::string& k, const std::string& v) {
               (c.*section).*f = parse_bool(k, v);
             },
             [=](const ExperimentConfig& c) -> std::optional<std::string> {
               return fmt((c.*section).*f);
             }};
}

template <typename T, typename E, std::size_t N>
void add_enum(Registry& r, const std::string& name, T ExperimentConfig::*section, E T::*f,
              const E (&options)[N]) {
  std::vector<E> opts(std::begin(options), std::end(options));
  r[name] = {[=](ExperimentConfig& c, const std::string& k, const std::string& v) {
               for (E e : opts) {
                 if (v == to_string(e)) {
                   (c.*section).*f = e;
                   return;
                 }
               }
               std::string list;
               for (E e : opts) list += std::string(list.empty() ? "" : "|") + to_string(e);
               throw ConfigError("config: " + k + " = '" + v + "' is not one of " + list);
             },
             [=](const ExperimentConfig& c) -> std::optional<std::string> {
               return std::string(to_string((c.*section).*f));
             }};
}

const char* rating_format_name(RatingFormat f) {
  return f == RatingFormat::double_colon ? "double_colon" : "tab_separated";
}

const Registry& registry() {
  static const Registry r = [] {
    Registry r;
    using E = ExperimentConfig;
    static constexpr Algorithm algorithms[] = {
        Algorithm::adg_bc, Algorithm::adg_mf, Algorithm::sync_svrg, Algorithm::async_svrg,
        Algorithm::asgd,   Algorithm::dsgd,   Algorithm::plain_gradient};
    static constexpr Backend backends[] = {Backend::simulated, Backend::threaded};
    static constexpr SimMode modes[] = {SimMode::rounds, SimMode::timed};
    static constexpr DataKind kinds[] = {DataKind::synthetic_classification,
                                         DataKind::synthetic_ratings, DataKind::libsvm,
                                         DataKind::ratings_file, DataKind::quadratic};
    static constexpr DelayKind delays[] = {DelayKind::constant, DelayKind::uniform_random,
                                           DelayKind::adversarial_cycle};

    add_enum(r, "run.algorithm", &E::run, &RunConfig::algorithm, algorithms);
    add_enum(r, "run.backend", &E::run, &RunConfig::backend, backends);
    add_enum(r, "run.mode", &E::run, &RunConfig::mode, modes);
    add_size(r, "run.m", &E::run, &RunConfig::m);
    add_u64(r, "run.seed", &E::run, &RunConfig::seed);
    add_real(r, "run.epsilon", &E::run, &RunConfig::epsilon);
    add_size(r, "run.max_epochs", &E::run, &RunConfig::max_epochs);
    add_bool(r, "run.broadcast_on_ingest", &E::run, &RunConfig::broadcast_on_ingest);
    r["run.warm_start"] = {[](E& c, const std::string& k, const std::string& v) {
                             c.run.warm_start = parse_bool(k, v);
                           },
                           [](const E& c) -> std::optional<std::string> {
                             if (!c.run.warm_start) return std::nullopt;
                             return fmt(*c.run.warm_start);
                           }};
    add_opt_real(r, "run.target", &E::run, &RunConfig::target);
    add_bool(r, "run.shuffle_strata", &E::run, &RunConfig::shuffle_strata);

    add_enum(r, "data.kind", &E::data, &DataConfig::kind, kinds);
    r["data.path"] = {[](E& c, const std::string&, const std::string& v) { c.data.path = v; },
                      [](const E& c) -> std::optional<std::string> {
                        if (c.data.path.empty()) return std::nullopt;
                        return c.data.path;
                      }};
    r["data.format"] = {[](E& c, const std::string& k, const std::string& v) {
                          try {
                            c.data.format = parse_rating_format(v);
                          } catch (const Error&) {
                            bad_value(k, v, "tab_separated|double_colon");
                          }
                        },
                        [](const E& c) -> std::optional<std::string> {
                          return std::string(rating_format_name(c.data.format));
                        }};
    add_size(r, "data.n", &E::data, &DataConfig::n);
    add_size(r, "data.d", &E::data, &DataConfig::d);
    add_real(r, "data.separation", &E::data, &DataConfig::separation);
    add_size(r, "data.n_users", &E::data, &DataConfig::n_users);
    add_size(r, "data.n_items", &E::data, &DataConfig::n_items);
    add_size(r, "data.k_true", &E::data, &DataConfig::k_true);
    add_real(r, "data.density", &E::data, &DataConfig::density);
    add_real(r, "data.noise", &E::data, &DataConfig::noise);
    add_size(r, "data.quad_dim", &E::data, &DataConfig::quad_dim);
    add_size(r, "data.quad_rows", &E::data, &DataConfig::quad_rows);
    r["data.seed"] = {[](E& c, const std::string& k, const std::string& v) {
                        c.data.seed = parse_number<std::uint64_t>(k, v);
                      },
                      [](const E& c) -> std::optional<std::string> {
                        if (!c.data.seed) return std::nullopt;
                        return std::to_string(*c.data.seed);
                      }};
    add_real(r, "data.validation_fraction", &E::data, &DataConfig::validation_fraction);
    add_real(r, "data.test_fraction", &E::data, &DataConfig::test_fraction);

    add_opt_real(r, "optim.gamma", &E::optim, &OptimConfig::gamma);
    add_opt_real(r, "optim.lambda", &E::optim, &OptimConfig::lambda);
    add_size(r, "optim.k_latent", &E::optim, &OptimConfig::k_latent);
    add_size(r, "optim.batch_size", &E::optim, &OptimConfig::batch_size);
    add_size(r, "optim.t_max", &E::optim, &OptimConfig::t_max);

    add_enum(r, "delay.kind", &E::delay, &DelayConfig::kind, delays);
    add_size(r, "delay.max", &E::delay, &DelayConfig::max);

    add_u64(r, "machines.ticks_per_example", &E::machines, &MachinesConfig::ticks_per_example);
    add_u64(r, "machines.comm_ticks", &E::machines, &MachinesConfig::comm_ticks);
    add_size(r, "machines.slow_count", &E::machines, &MachinesConfig::slow_count);
    add_u64(r, "machines.slow_factor", &E::machines, &MachinesConfig::slow_factor);
    return r;
  }();
  return r;
}

}  // namespace

void set_config_value(ExperimentConfig& cfg, const std::string& section, const std::string& key,
                      const std::string& value) {
  const std::string name = section + "." + key;
  const auto it = registry().find(name);
  if (it == registry().end()) throw ConfigError("config: unknown key '" + name + "'");
  it->second.set(cfg, name, value);
}

ExperimentConfig parse_config(std::istream& in) {
  ExperimentConfig cfg;
  std::string section;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ConfigError("config line " + std::to_string(line_no) + ": malformed section header");
      }
      section = trim(line.substr(1, line.size() - 2));
      if (section != "run" && section != "data" && section != "optim" && section != "delay" &&
          section != "machines") {
        throw ConfigError("config line " + std::to_string(line_no) + ": unknown section '" +
                          section + "'");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    if (section.empty()) {
      throw ConfigError("config line " + std::to_string(line_no) + ": key outside a section");
    }
    set_config_value(cfg, section, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  return parse_config(in);
}

void apply_override(ExperimentConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  const std::string name = trim(assignment.substr(0, eq));
  const auto dot = name.find('.');
  if (eq == std::string::npos || dot == std::string::npos) {
    throw ConfigError("override '" + assignment + "' is not section.key=value");
  }
  set_config_value(cfg, name.substr(0, dot), name.substr(dot + 1),
                   trim(assignment.substr(eq + 1)));
}

void validate(const ExperimentConfig& cfg) {
  auto fail = [](const std::string& msg) { throw ConfigError("config: " + msg); };
  if (cfg.run.m < 1) fail("run.m must be >= 1");
  if (!(cfg.run.epsilon > 0.0)) fail("run.epsilon must be > 0");
  if (cfg.run.max_epochs < 1) fail("run.max_epochs must be >= 1");
  if (cfg.optim.gamma && !(*cfg.optim.gamma > 0.0)) fail("optim.gamma must be > 0");
  if (cfg.optim.lambda && !(*cfg.optim.lambda >= 0.0)) fail("optim.lambda must be >= 0");
  if (cfg.optim.k_latent < 1) fail("optim.k_latent must be >= 1");
  if (cfg.optim.batch_size < 1) fail("optim.batch_size must be >= 1");
  const auto& d = cfg.data;
  if (!(d.validation_fraction >= 0.0 && d.test_fraction >= 0.0 &&
        d.validation_fraction + d.test_fraction < 1.0)) {
    fail("data fractions must be non-negative and sum below 1");
  }
  if (!(d.noise >= 0.0)) fail("data.noise must be >= 0");
  if (!(d.density > 0.0 && d.density <= 1.0)) fail("data.density must be in (0, 1]");
  if (cfg.machines.ticks_per_example < 1) fail("machines.ticks_per_example must be >= 1");
  if (cfg.machines.slow_factor < 1) fail("machines.slow_factor must be >= 1");
  if (cfg.machines.slow_count > 0 && cfg.machines.slow_count >= cfg.run.m) {
    fail("machines.slow_count must leave the master (machine 0) at normal speed");
  }
  const bool ratings = d.kind == DataKind::synthetic_ratings || d.kind == DataKind::ratings_file;
  const bool classes = d.kind == DataKind::synthetic_classification || d.kind == DataKind::libsvm;
  const Algorithm a = cfg.run.algorithm;
  if (is_mf(a) && !ratings) fail(std::string(to_string(a)) + " needs rating data");
  if (is_classification(a) && !classes) fail(std::string(to_string(a)) + " needs classification data");
  if (a == Algorithm::plain_gradient && ratings) fail("plain_gradient needs quadratic or classification data");
  if ((d.kind == DataKind::libsvm || d.kind == DataKind::ratings_file) && d.path.empty()) {
    fail("data.path is required for file datasets");
  }
}

std::string to_text(const ExperimentConfig& cfg) {
  std::ostringstream out;
  std::string current;
  for (const auto& [name, field] : registry()) {
    const auto value = field.get(cfg);
    if (!value) continue;
    const auto dot = name.find('.');
    const std::string section = name.substr(0, dot);
    if (section != current) {
      out << (current.empty() ? "" : "\n") << '[' << section << "]\n";
      current = section;
    }
    out << name.substr(dot + 1) << " = " << *value << '\n';
  }
  return out.str();
}

}  // namespace adg
