#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"

#include "cutmixsl/accountant.hpp"
#include "cutmixsl/attacks.hpp"
#include "cutmixsl/protocol.hpp"

namespace cutmixsl {

// Exit codes shared by the CLI and the command runners.
inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitConfig = 3;
inline constexpr int kExitVerifyFailed = 4;

inline constexpr int kSchemaVersion = 1;

struct ModelSpec {
  std::size_t n_patches = 8;
  std::size_t patch_dim = 4;
  std::size_t feat_dim = 4;
  std::size_t hidden = 16;
  std::size_t classes = 2;
  double delta = 1.0;
  double init_scale = 0.5;
};

struct SweepAxes {
  std::vector<std::size_t> k;
  std::vector<double> alpha_m;
  std::vector<double> sigma_sq;  // applied to both noise variances
};

struct AttackSpec {
  std::size_t n_trials = 10000;
  double ridge = 1e-3;
  std::size_t epochs = 16;
  std::size_t rounds_per_epoch = 32;
  std::size_t recon_train = 64;
  std::size_t recon_test = 32;
};

struct VerifySpec {
  std::size_t mc_samples = 200000;
  std::size_t grid_draws = 50;
};

// One archivable document drives every run; the seed is mandatory (there is
// no wall-clock fallback) and unknown keys are rejected with their path.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  Mechanism mechanism = Mechanism::dp_cutmixsl;
  std::uint32_t n = 10;
  std::uint32_t k = 2;
  double alpha_m = 2.0;
  std::uint32_t rounds = 50;
  double lr = 0.3;
  std::size_t per_client = 8;
  MechanismConfig mech{1.0, 1.0, NoiseMode::masked_noise, true};
  double acc_alpha = 2.0;
  double acc_delta = 2e-4;
  double acc_pixel_bound = 0.15;
  std::size_t acc_d_s = 10;
  std::size_t acc_d_y = 2;
  bool acc_allow_real_alpha = false;
  bool lambda_max_explicit = false;
  double lambda_max = 0.0;  // meaningful only when explicit; else 1/k
  ModelSpec model;
  SyntheticSpec dataset;
  SweepAxes sweep;
  AttackSpec attack;
  VerifySpec verify;
  bool trace_payloads = false;
  std::string out_dir = "out";
  std::string format = "csv";
};

ExperimentConfig default_config();
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig load_config_file(const std::string& path);
std::string config_digest(const ExperimentConfig& cfg);

// Accountant parameters implied by the config (lambda_max defaults to 1/k,
// noise variances come from the mechanism config).
AccountantParams resolved_accountant(const ExperimentConfig& cfg);

int run_account(const ExperimentConfig& cfg, std::ostream& console);
int run_simulate(const ExperimentConfig& cfg, std::ostream& console);
int run_attack(const ExperimentConfig& cfg, const std::string& name, std::ostream& console);
int run_verify(const ExperimentConfig& cfg, std::ostream& console);
int run_sweep(const ExperimentConfig& cfg, std::ostream& console);

}  // namespace cutmixsl
