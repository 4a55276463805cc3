// Command-line front end for the experiment runner.
//
//   adg_cli run <config> [--override section.key=value]...
//   adg_cli speedup <config> --workers 1,2,4 [--override ...]
//   adg_cli validate-config <config>
//
// Output files go to $ADG_OUTPUT_DIR (default ./adg_output).
// Exit codes: 0 ok, 2 config error, 3 diverged, 4 data error, 1 anything else.

#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "adg/experiment.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitDiverged = 3;
constexpr int kExitData = 4;

adg::ExperimentConfig load_with_overrides(const std::string& path,
                                          const std::vector<std::string>& overrides) {
  adg::ExperimentConfig cfg = adg::load_config(path);
  for (const auto& o : overrides) adg::apply_override(cfg, o);
  adg::validate(cfg);
  return cfg;
}

int run_command(const std::string& path, const std::vector<std::string>& overrides) {
  const auto cfg = load_with_overrides(path, overrides);
  const std::string dir = adg::output_directory_from_env();
  const auto out = adg::run_experiment(cfg, dir);
  std::cout << out.summary_csv;
  std::cerr << "wrote metrics.csv, summary.csv, trace.jsonl, model.txt to " << dir << '\n';
  return 0;
}

int speedup_command(const std::string& path, const std::vector<std::string>& overrides,
                    const std::vector<std::size_t>& workers) {
  const auto cfg = load_with_overrides(path, overrides);
  const auto rows = adg::measure_speedup(cfg, workers);
  adg::write_speedup_csv(std::cout, rows);
  const std::filesystem::path dir(adg::output_directory_from_env());
  std::filesystem::create_directories(dir);
  std::ofstream f(dir / "speedup.csv");
  adg::write_speedup_csv(f, rows);
  return 0;
}

int validate_command(const std::string& path, const std::vector<std::string>& overrides) {
  const auto cfg = load_with_overrides(path, overrides);
  std::cout << adg::to_text(cfg);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Asynchronous distributed gradient experiments"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::vector<std::size_t> workers;

  auto* run = app.add_subcommand("run", "Run one experiment");
  run->add_option("config", config_path, "Config file")->required();
  run->add_option("--override", overrides, "section.key=value");

  auto* speedup = app.add_subcommand("speedup", "Run at several worker counts");
  speedup->add_option("config", config_path, "Config file")->required();
  speedup->add_option("--workers", workers, "Comma-separated worker counts")
      ->required()
      ->delimiter(',');
  speedup->add_option("--override", overrides, "section.key=value");

  auto* check = app.add_subcommand("validate-config", "Parse and validate a config");
  check->add_option("config", config_path, "Config file")->required();
  check->add_option("--override", overrides, "section.key=value");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*run) return run_command(config_path, overrides);
    if (*speedup) return speedup_command(config_path, overrides, workers);
    return validate_command(config_path, overrides);
  } catch (const adg::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const adg::RunDiverged& e) {
    std::cerr << "diverged: " << e.what() << '\n';
    return kExitDiverged;
  } catch (const adg::DivergedError& e) {
    std::cerr << "diverged: " << e.what() << '\n';
    return kExitDiverged;
  } catch (const adg::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
