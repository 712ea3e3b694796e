#include "cutmixsl/attacks.hpp"

#include <algorithm>
#include <cmath>

#include "cutmixsl/errors.hpp"
#include "cutmixsl/protocol.hpp"

namespace cutmixsl {

namespace {

// Release mean implied by the provenance when `record` sits in `slot` and
// every other contributor is known.
Matrix hypothesis_mean(const MembershipTrial& trial, const SmashedData& record,
                       Mechanism mech) {
  const auto& prov = trial.released.provenance;
  const Matrix& shape = trial.records.front().values;
  Matrix mean(shape.rows, shape.cols, 0.0);
  switch (mech) {
    case Mechanism::dp_sl:
      return record.values;
    case Mechanism::dp_mixsl: {
      for (std::size_t i = 0; i < prov.size(); ++i) {
        const Matrix& src = i == trial.slot ? record.values : trial.records[i].values;
        for (std::size_t e = 0; e < mean.size(); ++e)
          mean.data[e] += prov[i].ratio * src.data[e];
      }
      return mean;
    }
    case Mechanism::dp_cutmixsl: {
      for (std::size_t i = 0; i < prov.size(); ++i) {
        if (!prov[i].mask) throw InvariantError("membership: provenance lacks masks");
        const Matrix& src = i == trial.slot ? record.values : trial.records[i].values;
        for (std::size_t p = 0; p < mean.rows; ++p) {
          if (!prov[i].mask->covers(p)) continue;
          for (std::size_t c = 0; c < mean.cols; ++c) mean(p, c) = src(p, c);
        }
      }
      return mean;
    }
  }
  throw ParameterError("membership: unknown mechanism");
}

double release_noise_variance(Mechanism mech, const MechanismConfig& cfg, std::size_t k) {
  switch (mech) {
    case Mechanism::dp_sl:
      return cfg.sigma_s_sq;
    case Mechanism::dp_mixsl:
      return static_cast<double>(k) * cfg.sigma_s_sq;
    case Mechanism::dp_cutmixsl:
      return cfg.noise_mode == NoiseMode::masked_noise
                 ? cfg.sigma_s_sq
                 : static_cast<double>(k) * cfg.sigma_s_sq;
  }
  throw ParameterError("membership: unknown mechanism");
}

}  // namespace

double membership_attack(const std::vector<MembershipTrial>& trials, Mechanism mech,
                         const MechanismConfig& cfg) {
  if (trials.empty()) throw ParameterError("membership_attack: no trials");
  std::size_t truths = 0;
  for (const auto& t : trials) truths += t.truth ? 1 : 0;
  if (truths * 2 != trials.size())
    throw ParameterError("membership_attack: trials must be balanced");

  std::size_t correct = 0;
  for (const auto& trial : trials) {
    const Matrix mu_present = hypothesis_mean(trial, trial.records[trial.slot], mech);
    const Matrix mu_absent = hypothesis_mean(trial, trial.alternative, mech);
    const Matrix& released = trial.released.smashed.values;
    bool guess;
    const double var = release_noise_variance(mech, cfg, trial.records.size());
    if (var == 0.0) {
      guess = released == mu_present;  // degenerate likelihood: exact match
    } else {
      const double llr = (squared_distance(released.data, mu_absent.data) -
                          squared_distance(released.data, mu_present.data)) /
                         (2.0 * var);
      guess = llr > 0.0;
    }
    correct += guess == trial.truth ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(trials.size());
}

std::vector<MembershipTrial> make_membership_trials(const MembershipExperimentSpec& spec,
                                                    RngStream& rng) {
  if (spec.n_trials < 2 || spec.n_trials % 2 != 0)
    throw ParameterError("make_membership_trials: need an even trial count");
  if (spec.k < 1) throw ParameterError("make_membership_trials: k must be >= 1");

  const auto draw_record = [&]() {
    Matrix m(spec.n_patches, spec.feat_dim);
    for (double& v : m.data) v = spec.delta * rng.uniform();
    return SmashedData{std::move(m), spec.delta};
  };

  MixRatios uniform;
  uniform.lambdas.assign(spec.k, 1.0 / static_cast<double>(spec.k));
  uniform.source = RatioSource::realized;

  std::vector<MembershipTrial> trials;
  trials.reserve(spec.n_trials);
  for (std::size_t t = 0; t < spec.n_trials; ++t) {
    MembershipTrial trial;
    trial.slot = 0;
    trial.truth = t % 2 == 0;
    for (std::size_t i = 0; i < spec.k; ++i) trial.records.push_back(draw_record());
    trial.alternative = draw_record();

    std::vector<OneHotLabel> labels;
    for (std::size_t i = 0; i < spec.k; ++i)
      labels.push_back(one_hot(spec.classes, rng.uniform_below(spec.classes)));

    std::vector<SmashedData> inputs = trial.records;
    if (!trial.truth) inputs[trial.slot] = trial.alternative;

    switch (spec.mech) {
      case Mechanism::dp_sl:
        trial.released = dp_sl(inputs[0], labels[0], spec.cfg, rng);
        break;
      case Mechanism::dp_mixsl:
        trial.released = dp_mix(inputs, labels, uniform, spec.cfg, rng);
        break;
      case Mechanism::dp_cutmixsl: {
        const std::vector<PatchMask> masks = allocate_masks(uniform, spec.n_patches, rng);
        trial.released = dp_cutmix(inputs, labels, masks, spec.cfg, rng);
        break;
      }
    }
    trials.push_back(std::move(trial));
  }
  return trials;
}

LeakScores label_leak_scores(const std::vector<LabeledGradient>& observed,
                             const std::vector<Matrix>& reference, LeakKind kind) {
  if (observed.empty()) throw ParameterError("label_leak_scores: no gradients");
  std::vector<double> ref_mean;
  if (kind == LeakKind::cosine) {
    if (reference.empty())
      throw ParameterError("label_leak_scores: cosine mode needs a reference batch");
    ref_mean.assign(reference.front().size(), 0.0);
    for (const auto& g : reference) {
      if (g.size() != ref_mean.size())
        throw DimensionError("label_leak_scores: reference shape mismatch");
      for (std::size_t e = 0; e < ref_mean.size(); ++e) ref_mean[e] += g.data[e];
    }
    for (double& v : ref_mean) v /= static_cast<double>(reference.size());
    if (l2_norm(ref_mean) == 0.0)
      throw ParameterError("label_leak_scores: zero reference direction");
  }

  LeakScores scores;
  scores.kind = kind;
  for (const auto& lg : observed) {
    double s;
    if (kind == LeakKind::norm) {
      s = l2_norm(lg.grad.data);
    } else {
      const double gn = l2_norm(lg.grad.data);
      s = gn == 0.0 ? 0.0 : dot(lg.grad.data, ref_mean) / (gn * l2_norm(ref_mean));
    }
    (lg.positive ? scores.positives : scores.negatives).push_back(s);
  }
  return scores;
}

double roc_auc(const LeakScores& scores) {
  if (scores.positives.empty() || scores.negatives.empty())
    throw ParameterError("roc_auc: both classes must be nonempty");
  double u = 0.0;
  for (const double p : scores.positives) {
    for (const double n : scores.negatives) {
      if (p > n) u += 1.0;
      else if (p == n) u += 0.5;
    }
  }
  return u / (static_cast<double>(scores.positives.size()) *
              static_cast<double>(scores.negatives.size()));
}

double roc_auc_ci95(double auc, std::size_t n_pos, std::size_t n_neg) {
  const double a = auc;
  const double q1 = a / (2.0 - a);
  const double q2 = 2.0 * a * a / (1.0 + a);
  const double p = static_cast<double>(n_pos);
  const double n = static_cast<double>(n_neg);
  const double var =
      (a * (1.0 - a) + (p - 1.0) * (q1 - a * a) + (n - 1.0) * (q2 - a * a)) / (p * n);
  return 1.96 * std::sqrt(std::max(0.0, var));
}

LabelLeakResult run_label_leak_experiment(const LabelLeakExperimentSpec& spec) {
  ProtocolConfig cfg;
  cfg.n = 2;
  cfg.k = 2;
  cfg.alpha_m = spec.alpha_m;
  cfg.lr = spec.lr;
  cfg.mech = MechanismConfig{};  // the leak studies run noiseless
  if (spec.worst_case) {
    cfg.mechanism = Mechanism::dp_sl;
    cfg.avg_cut_grad = true;
    cfg.weight_avg = true;
  } else {
    cfg.mechanism = Mechanism::dp_cutmixsl;
  }

  RngStream data_rng(spec.seed, {0, Role::server, 7});
  const auto data =
      make_two_class_dataset(spec.data, 2, spec.rounds_per_epoch, data_rng);
  ProtocolState state =
      make_protocol_state(cfg, spec.seed, spec.data.n_patches, spec.data.patch_dim,
                          spec.feat_dim, spec.hidden, 2, spec.delta, spec.init_scale);

  constexpr std::uint32_t kVictim = 0;
  constexpr std::uint32_t kAdversary = 1;
  LabelLeakResult result;
  std::vector<Matrix> previous_epoch_grads;
  for (std::size_t epoch = 0; epoch < spec.epochs; ++epoch) {
    std::vector<LabeledGradient> observed;
    std::vector<Matrix> epoch_grads;
    for (std::size_t r = 0; r < spec.rounds_per_epoch; ++r) {
      const std::size_t idx = (epoch * spec.rounds_per_epoch + r) % spec.rounds_per_epoch;
      std::vector<Sample> batch = {data[0][idx], data[1][idx]};
      const RoundResult rr = run_round(state, batch);
      const bool victim_positive =
          batch[kVictim].label.values.size() > 1 && batch[kVictim].label.values[1] == 1.0;
      for (const auto& msg : rr.trace) {
        if (msg.kind != MessageKind::split_gradient) continue;
        if (msg.receiver.index != kAdversary) continue;
        const Matrix& g = std::get<GradientPayload>(msg.payload).grad;
        observed.push_back(LabeledGradient{g, victim_positive});
        epoch_grads.push_back(g);
      }
    }
    const std::vector<Matrix>& reference =
        previous_epoch_grads.empty() ? epoch_grads : previous_epoch_grads;
    result.norm_auc.push_back(roc_auc(label_leak_scores(observed, {}, LeakKind::norm)));
    try {
      result.cosine_auc.push_back(
          roc_auc(label_leak_scores(observed, reference, LeakKind::cosine)));
    } catch (const ParameterError&) {
      // Degenerate reference (all received gradients zero): no direction
      // information, record chance.
      result.cosine_auc.push_back(0.5);
    }
    previous_epoch_grads = std::move(epoch_grads);
  }
  return result;
}

namespace {

// Solve (G + ridge I) X = B for SPD G via Cholesky; G is consumed.
Matrix cholesky_solve(Matrix g, const Matrix& b) {
  const std::size_t d = g.rows;
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t i = j; i < d; ++i) {
      double sum = g(i, j);
      for (std::size_t m = 0; m < j; ++m) sum -= g(i, m) * g(j, m);
      if (i == j) {
        if (!(sum > 0.0)) throw NumericError("cholesky: matrix not positive definite");
        g(j, j) = std::sqrt(sum);
      } else {
        g(i, j) = sum / g(j, j);
      }
    }
  }
  Matrix x = b;
  for (std::size_t col = 0; col < b.cols; ++col) {
    for (std::size_t i = 0; i < d; ++i) {
      double sum = x(i, col);
      for (std::size_t m = 0; m < i; ++m) sum -= g(i, m) * x(m, col);
      x(i, col) = sum / g(i, i);
    }
    for (std::size_t ii = d; ii > 0; --ii) {
      const std::size_t i = ii - 1;
      double sum = x(i, col);
      for (std::size_t m = i + 1; m < d; ++m) sum -= g(m, i) * x(m, col);
      x(i, col) = sum / g(i, i);
    }
  }
  return x;
}

}  // namespace

ReconstructionReport reconstruction_attack(const std::vector<ReconPair>& train,
                                           const std::vector<ReconPair>& test, double ridge) {
  if (train.empty()) throw ParameterError("reconstruction_attack: empty training set");
  if (test.empty()) throw ParameterError("reconstruction_attack: empty test set");
  if (!(ridge > 0.0)) throw ParameterError("reconstruction_attack: ridge must be > 0");
  const std::size_t d_in = train.front().released.size() + 1;  // bias column
  const std::size_t d_out = train.front().raw.size();
  for (const auto& pair : train) {
    if (pair.released.size() + 1 != d_in || pair.raw.size() != d_out)
      throw DimensionError("reconstruction_attack: inconsistent training shapes");
  }

  Matrix gram(d_in, d_in, 0.0);
  Matrix moment(d_in, d_out, 0.0);
  std::vector<double> row(d_in);
  for (const auto& pair : train) {
    for (std::size_t e = 0; e + 1 < d_in; ++e) row[e] = pair.released.data[e];
    row[d_in - 1] = 1.0;
    for (std::size_t i = 0; i < d_in; ++i) {
      for (std::size_t j = i; j < d_in; ++j) gram(i, j) += row[i] * row[j];
      for (std::size_t o = 0; o < d_out; ++o) moment(i, o) += row[i] * pair.raw.data[o];
    }
  }
  for (std::size_t i = 0; i < d_in; ++i) {
    for (std::size_t j = 0; j < i; ++j) gram(i, j) = gram(j, i);
    gram(i, i) += ridge;
  }

  ReconstructionReport report;
  report.decoder = cholesky_solve(std::move(gram), moment);

  double se = 0.0;
  std::size_t count = 0;
  for (const auto& pair : test) {
    if (pair.released.size() + 1 != d_in || pair.raw.size() != d_out)
      throw DimensionError("reconstruction_attack: inconsistent test shapes");
    for (std::size_t o = 0; o < d_out; ++o) {
      double pred = report.decoder(d_in - 1, o);
      for (std::size_t e = 0; e + 1 < d_in; ++e)
        pred += pair.released.data[e] * report.decoder(e, o);
      const double diff = pred - pair.raw.data[o];
      se += diff * diff;
      ++count;
    }
  }
  report.mse = se / static_cast<double>(count);
  return report;
}

ReconstructionReport run_reconstruction_experiment(const ReconExperimentSpec& spec) {
  RngStream seg_rng(spec.seed, {0, Role::server, 11});
  const ClientSegment segment = make_client_segment(spec.data.patch_dim, spec.feat_dim,
                                                    spec.delta, spec.init_scale, seg_rng);
  RngStream rng(spec.seed, {0, Role::mixer, 13});
  const auto data = make_two_class_dataset(spec.data, 1, spec.n_train + spec.n_test, rng);

  std::vector<ReconPair> pairs;
  pairs.reserve(spec.n_train + spec.n_test);
  for (std::size_t t = 0; t < spec.n_train + spec.n_test; ++t) {
    const Sample& victim = data[0][t];
    std::vector<SmashedData> smashed = {client_forward(victim.input, segment)};
    std::vector<OneHotLabel> labels = {victim.label};
    for (std::size_t i = 1; i < spec.k; ++i) {
      Sample other;
      other.input = Matrix(spec.data.n_patches, spec.data.patch_dim);
      for (double& v : other.input.data) v = rng.normal(1.0);
      smashed.push_back(client_forward(other.input, segment));
      labels.push_back(one_hot(2, rng.uniform_below(2)));
    }

    MixedBatch released;
    switch (spec.mech) {
      case Mechanism::dp_sl:
        released = dp_sl(smashed[0], labels[0], spec.cfg, rng);
        break;
      case Mechanism::dp_mixsl: {
        const MixRatios ratios = sample_mix_ratios(spec.k, spec.alpha_m, rng);
        released = dp_mix(smashed, labels, ratios, spec.cfg, rng);
        break;
      }
      case Mechanism::dp_cutmixsl: {
        const MixRatios ratios = sample_mix_ratios(spec.k, spec.alpha_m, rng);
        const auto masks = allocate_masks(ratios, spec.data.n_patches, rng);
        released = dp_cutmix(smashed, labels, masks, spec.cfg, rng);
        break;
      }
    }
    pairs.push_back(ReconPair{released.smashed.values, victim.input});
  }

  const std::vector<ReconPair> train(pairs.begin(), pairs.begin() + spec.n_train);
  const std::vector<ReconPair> test(pairs.begin() + spec.n_train, pairs.end());
  return reconstruction_attack(train, test, spec.ridge);
}

}  // namespace cutmixsl
