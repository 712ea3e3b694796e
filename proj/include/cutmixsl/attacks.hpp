#pragma once

#include <cstdint>
#include <vector>

#include "cutmixsl/mechanisms.hpp"
#include "cutmixsl/synthetic.hpp"

namespace cutmixsl {

// One membership-inference decision problem under the worst-case assumption
// that the adversary knows every contributor's record. `records[slot]` is the
// candidate; `alternative` is the adversary's replacement hypothesis; the
// release was built with whichever of the two `truth` says.
struct MembershipTrial {
  std::vector<SmashedData> records;
  SmashedData alternative;
  std::size_t slot = 0;
  MixedBatch released;
  bool truth = false;
};

// Two-hypothesis Gaussian likelihood-ratio attacker; returns the fraction of
// correct decisions. With zero smashed noise the likelihood degenerates and
// the decision falls back to exact matching.
double membership_attack(const std::vector<MembershipTrial>& trials, Mechanism mech,
                         const MechanismConfig& cfg);

struct MembershipExperimentSpec {
  Mechanism mech = Mechanism::dp_cutmixsl;
  MechanismConfig cfg;
  std::size_t k = 2;
  std::size_t n_patches = 48;
  std::size_t feat_dim = 1;
  std::size_t classes = 2;
  double delta = 1.0;
  std::size_t n_trials = 10000;  // truth alternates, so exactly balanced
};

// Seeded trial generator: records drawn uniformly in [0, delta], uniform
// mixing weights (lambda_i = 1/k), masks apportioned per trial.
std::vector<MembershipTrial> make_membership_trials(const MembershipExperimentSpec& spec,
                                                    RngStream& rng);

enum class LeakKind { norm, cosine };

struct LeakScores {
  std::vector<double> positives;
  std::vector<double> negatives;
  LeakKind kind = LeakKind::norm;
};

struct LabeledGradient {
  Matrix grad;
  bool positive = false;
};

// norm: ||g||_2. cosine: cos(g, mean of `reference`); the reference batch
// must produce a nonzero mean direction.
LeakScores label_leak_scores(const std::vector<LabeledGradient>& observed,
                             const std::vector<Matrix>& reference, LeakKind kind);

// Mann-Whitney AUC with ties counted 1/2.
double roc_auc(const LeakScores& scores);

// Hanley-McNeil 95% half-width for an AUC estimate.
double roc_auc_ci95(double auc, std::size_t n_pos, std::size_t n_neg);

struct LabelLeakExperimentSpec {
  bool worst_case = false;  // dp_sl + weight averaging + averaged cut gradient
  std::size_t epochs = 20;
  std::size_t rounds_per_epoch = 32;
  double lr = 0.3;
  double alpha_m = 2.0;
  SyntheticSpec data;
  std::size_t feat_dim = 4;
  std::size_t hidden = 16;
  double delta = 1.0;
  double init_scale = 0.3;
  std::uint64_t seed = 1;
};

struct LabelLeakResult {
  std::vector<double> norm_auc;    // one AUC per epoch
  std::vector<double> cosine_auc;
};

// Two clients, k = 2; client 1 scores the cut gradients it receives against
// client 0's true class each round.
LabelLeakResult run_label_leak_experiment(const LabelLeakExperimentSpec& spec);

struct ReconPair {
  Matrix released;
  Matrix raw;
};

struct ReconstructionReport {
  Matrix decoder;  // [released size + 1 x raw size], last row is the bias
  double mse = 0.0;
};

// Closed-form ridge decoder fitted on train pairs, scored on test pairs.
ReconstructionReport reconstruction_attack(const std::vector<ReconPair>& train,
                                           const std::vector<ReconPair>& test, double ridge);

struct ReconExperimentSpec {
  Mechanism mech = Mechanism::dp_cutmixsl;
  MechanismConfig cfg;
  std::size_t k = 2;
  std::size_t n_train = 64;
  std::size_t n_test = 32;
  double alpha_m = 2.0;
  double ridge = 1e-3;
  SyntheticSpec data;
  std::size_t feat_dim = 4;
  double delta = 1.0;
  double init_scale = 0.5;
  std::uint64_t seed = 1;
};

// Releases drawn per mechanism with a fixed shared embedding; the decoder
// maps each release back to the victim's raw tensor.
ReconstructionReport run_reconstruction_experiment(const ReconExperimentSpec& spec);

}  // namespace cutmixsl
