#include <exception>
#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "cutmixsl/errors.hpp"
#include "cutmixsl/harness.hpp"

namespace {

struct GlobalOpts {
  std::string config_path;
  bool seed_set = false;
  std::uint64_t seed = 0;
  std::string out;
  std::string format;
};

cutmixsl::ExperimentConfig resolve_config(const GlobalOpts& opts) {
  cutmixsl::ExperimentConfig cfg;
  if (!opts.config_path.empty()) {
    cfg = cutmixsl::load_config_file(opts.config_path);
  } else {
    if (!opts.seed_set)
      throw cutmixsl::ConfigError("seed", "required: pass --config or --seed");
    cfg = cutmixsl::default_config();
  }
  if (opts.seed_set) cfg.seed = opts.seed;
  if (!opts.out.empty()) cfg.out_dir = opts.out;
  if (!opts.format.empty()) {
    if (opts.format != "csv" && opts.format != "json")
      throw cutmixsl::ConfigError("format", "expected csv or json");
    cfg.format = opts.format;
  }
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deterministic simulator and privacy-accounting toolkit for "
               "split learning with patch-wise noisy CutMix"};
  app.require_subcommand(1);

  GlobalOpts opts;
  app.add_option("--config", opts.config_path, "JSON experiment config");
  auto* seed_opt = app.add_option("--seed", opts.seed, "Override the config seed");
  app.add_option("--out", opts.out, "Override the output directory");
  app.add_option("--format", opts.format, "Output format: csv or json");

  auto* account = app.add_subcommand("account", "Print privacy budgets for all mechanisms");
  auto* simulate = app.add_subcommand("simulate", "Run protocol rounds; emit metrics + trace");
  auto* attack = app.add_subcommand("attack", "Run a named attack over the sweep axes");
  std::string attack_name;
  attack->add_option("--name", attack_name,
                     "membership | label_leak | reconstruction")->required();
  auto* verify = app.add_subcommand("verify", "Run the oracle suites");
  auto* sweep = app.add_subcommand("sweep", "Evaluate the cartesian sweep axes");
  for (CLI::App* sub : {account, simulate, attack, verify, sweep}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return 0;  // --help
    std::cerr << e.what() << "\n";
    return cutmixsl::kExitUsage;
  }
  opts.seed_set = seed_opt->count() > 0;

  try {
    const cutmixsl::ExperimentConfig cfg = resolve_config(opts);
    if (account->parsed()) return cutmixsl::run_account(cfg, std::cout);
    if (simulate->parsed()) return cutmixsl::run_simulate(cfg, std::cout);
    if (attack->parsed()) return cutmixsl::run_attack(cfg, attack_name, std::cout);
    if (verify->parsed()) return cutmixsl::run_verify(cfg, std::cout);
    if (sweep->parsed()) return cutmixsl::run_sweep(cfg, std::cout);
    std::cerr << "no subcommand\n";
    return cutmixsl::kExitUsage;
  } catch (const cutmixsl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return cutmixsl::kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cutmixsl::kExitRuntime;
  }
}
