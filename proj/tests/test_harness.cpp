#include "cutmixsl/harness.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "cutmixsl/errors.hpp"

namespace cutmixsl {
namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("cutmixsl_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

TEST(Config, MinimalDocumentGetsDefaults) {
  const auto cfg = config_from_json(nlohmann::json{{"seed", 7}, {"mechanism", "dp_sl"}});
  EXPECT_EQ(cfg.seed, 7u);
  EXPECT_EQ(cfg.mechanism, Mechanism::dp_sl);
  EXPECT_EQ(cfg.n, 10u);
  EXPECT_EQ(cfg.k, 2u);
  EXPECT_DOUBLE_EQ(cfg.acc_pixel_bound, 0.15);
  EXPECT_EQ(cfg.acc_d_s, 10u);
  EXPECT_EQ(cfg.acc_d_y, 2u);
  EXPECT_DOUBLE_EQ(cfg.acc_alpha, 2.0);
  EXPECT_DOUBLE_EQ(cfg.acc_delta, 2e-4);
}

TEST(Config, SeedIsMandatory) {
  try {
    config_from_json(nlohmann::json{{"mechanism", "dp_sl"}});
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field, "seed");
  }
}

TEST(Config, NegativeVarianceNamesTheField) {
  try {
    config_from_json(nlohmann::json{
        {"seed", 1}, {"mechanism_config", {{"sigma_s_sq", -1.0}}}});
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field, "mechanism_config.sigma_s_sq");
  }
}

TEST(Config, UnknownKeysFailClosed) {
  try {
    config_from_json(nlohmann::json{{"seed", 1}, {"sigma", 1.0}});
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field, ".sigma");
  }
  try {
    config_from_json(nlohmann::json{{"seed", 1}, {"model", {{"layers", 3}}}});
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field, "model.layers");
  }
}

TEST(Config, RoundTripsThroughJson) {
  nlohmann::json doc{{"seed", 41},
                     {"mechanism", "dp_mixsl"},
                     {"k", 3},
                     {"n", 9},
                     {"mechanism_config", {{"sigma_s_sq", 0.5}, {"noise_mode", "unmasked_noise"}}},
                     {"accountant", {{"lambda_max", 0.4}}},
                     {"sweep", {{"k", {3, 9}}}}};
  const auto cfg = config_from_json(doc);
  const auto serialized = config_to_json(cfg);
  const auto reparsed = config_from_json(serialized);
  EXPECT_EQ(config_to_json(reparsed).dump(), serialized.dump());
  EXPECT_EQ(config_digest(reparsed), config_digest(cfg));
}

TEST(Config, SweepAxesValidated) {
  EXPECT_THROW(
      config_from_json(nlohmann::json{{"seed", 1}, {"sweep", {{"k", nlohmann::json::array()}}}}),
      ConfigError);
  EXPECT_THROW(config_from_json(nlohmann::json{{"seed", 1}, {"n", 4}, {"sweep", {{"k", {5}}}}}),
               ConfigError);
}

TEST(Config, ResolvedAccountantUsesUniformLambdaByDefault) {
  auto cfg = config_from_json(nlohmann::json{{"seed", 3}, {"k", 4}, {"n", 8}});
  EXPECT_DOUBLE_EQ(resolved_accountant(cfg).lambda_max, 0.25);
  cfg = config_from_json(
      nlohmann::json{{"seed", 3}, {"k", 4}, {"n", 8}, {"accountant", {{"lambda_max", 0.5}}}});
  EXPECT_DOUBLE_EQ(resolved_accountant(cfg).lambda_max, 0.5);
}

ExperimentConfig quick_config(const fs::path& dir) {
  auto cfg = default_config();
  cfg.seed = 11;
  cfg.n = 4;
  cfg.k = 2;
  cfg.rounds = 3;
  cfg.per_client = 2;
  cfg.model = ModelSpec{4, 2, 3, 6, 2, 1.0, 0.4};
  cfg.dataset.n_patches = 4;
  cfg.dataset.patch_dim = 2;
  cfg.sweep.k = {2, 4};
  cfg.sweep.alpha_m = {2.0};
  cfg.sweep.sigma_sq = {0.5, 1.0};
  cfg.out_dir = dir.string();
  return cfg;
}

TEST(Runners, AccountWritesBudgetsForAllMechanisms) {
  const fs::path dir = fresh_dir("account");
  const auto cfg = quick_config(dir);
  std::ostringstream console;
  EXPECT_EQ(run_account(cfg, console), kExitOk);
  const auto doc = nlohmann::json::parse(slurp(dir / "account.json"));
  EXPECT_EQ(doc.at("schema_version"), kSchemaVersion);
  EXPECT_EQ(doc.at("config_digest"), config_digest(cfg));
  ASSERT_EQ(doc.at("budgets").size(), 3u);
  // Theorem ordering shows up in the emitted budgets.
  double eps[3];
  for (const auto& b : doc.at("budgets")) {
    const std::string name = b.at("mechanism");
    const double v = b.at("epsilon_rdp").get<double>();
    eps[name == "dp_mixsl" ? 0 : name == "dp_cutmixsl" ? 1 : 2] = v;
  }
  EXPECT_LE(eps[0], eps[1]);
  EXPECT_LE(eps[1], eps[2]);
}

TEST(Runners, SimulateEmitsMetricsAndTrace) {
  const fs::path dir = fresh_dir("simulate");
  const auto cfg = quick_config(dir);
  std::ostringstream console;
  EXPECT_EQ(run_simulate(cfg, console), kExitOk);
  const std::string metrics = slurp(dir / "metrics.csv");
  EXPECT_EQ(metrics.rfind("round,group,loss,acc,grad_norm_mean\n", 0), 0u);
  std::size_t rows = 0;
  for (const char c : metrics) rows += c == '\n' ? 1 : 0;
  EXPECT_EQ(rows, 1u + cfg.rounds * (cfg.n / cfg.k));
  EXPECT_TRUE(fs::exists(dir / "trace.ndjson"));
  EXPECT_TRUE(fs::exists(dir / "manifest.json"));
}

TEST(Runners, SweepRowCountIsTheAxisProduct) {
  const fs::path dir = fresh_dir("sweep");
  auto cfg = quick_config(dir);
  cfg.rounds = 0;  // accounting-only cells
  std::ostringstream console;
  EXPECT_EQ(run_sweep(cfg, console), kExitOk);
  const std::string csv = slurp(dir / "sweep.csv");
  std::size_t rows = 0;
  for (const char c : csv) rows += c == '\n' ? 1 : 0;
  EXPECT_EQ(rows, 2u + cfg.sweep.k.size() * cfg.sweep.alpha_m.size() *
                      cfg.sweep.sigma_sq.size());
}

TEST(Runners, SweepIsByteDeterministic) {
  const fs::path da = fresh_dir("sweep_a");
  const fs::path db = fresh_dir("sweep_b");
  auto ca = quick_config(da);
  auto cb = quick_config(db);
  std::ostringstream console;
  ASSERT_EQ(run_sweep(ca, console), kExitOk);
  ASSERT_EQ(run_sweep(cb, console), kExitOk);
  // The digest covers out_dir, so compare the data rows only.
  const std::string a = slurp(da / "sweep.csv"), b = slurp(db / "sweep.csv");
  EXPECT_EQ(a.substr(a.find('\n')), b.substr(b.find('\n')));
}

TEST(Runners, AttackRejectsUnknownName) {
  const fs::path dir = fresh_dir("attackbad");
  const auto cfg = quick_config(dir);
  std::ostringstream console;
  EXPECT_THROW(run_attack(cfg, "shadow_model", console), ParameterError);
}

TEST(Cli, ExitCodesFollowTheContract) {
  const std::string cli = CUTMIXSL_CLI_PATH;
  const auto run = [&](const std::string& args) {
    const int status = std::system((cli + " " + args + " >/dev/null 2>&1").c_str());
    return WEXITSTATUS(status);
  };
  EXPECT_EQ(run("definitely_not_a_subcommand"), kExitUsage);
  EXPECT_EQ(run("account"), kExitConfig);  // no seed, no config
  const fs::path dir = fresh_dir("cli");
  const fs::path cfg_path = dir / "bad.json";
  std::ofstream(cfg_path) << "{\"seed\": 1, \"bogus\": true}";
  EXPECT_EQ(run("account --config " + cfg_path.string()), kExitConfig);
  EXPECT_EQ(run("account --seed 5 --out " + (dir / "out").string()), kExitOk);
  const fs::path good = dir / "good.json";
  std::ofstream(good) << R"({"seed": 3, "n": 4, "k": 2, "rounds": 2, "per_client": 2,
    "model": {"n_patches": 4, "patch_dim": 2, "feat_dim": 3, "hidden": 6}})";
  EXPECT_EQ(run("simulate --config " + good.string() + " --out " + (dir / "sim").string()),
            kExitOk);
}

}  // namespace
}  // namespace cutmixsl
