#include "cutmixsl/harness.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <thread>

#include "cutmixsl/errors.hpp"
#include "cutmixsl/verification.hpp"

namespace cutmixsl {

namespace {

using nlohmann::json;

void require_keys(const json& j, const std::string& path,
                  std::initializer_list<const char*> allowed) {
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) {
      if (key == a) {
        ok = true;
        break;
      }
    }
    if (!ok) throw ConfigError(path + "." + key, "unknown key");
  }
}

template <typename T>
T get_or(const json& j, const char* key, const std::string& path, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(path + "." + key, "wrong type");
  }
}

NoiseMode noise_mode_from_name(const std::string& name, const std::string& path) {
  if (name == "masked_noise") return NoiseMode::masked_noise;
  if (name == "unmasked_noise") return NoiseMode::unmasked_noise;
  throw ConfigError(path, "expected masked_noise or unmasked_noise");
}

std::string fnv_hex(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void validate_config(const ExperimentConfig& cfg) {
  if (cfg.n < 1) throw ConfigError("n", "must be >= 1");
  if (cfg.k < 1 || cfg.k > cfg.n) throw ConfigError("k", "need 1 <= k <= n");
  if (!(cfg.alpha_m > 0.0)) throw ConfigError("alpha_m", "must be > 0");
  if (cfg.lr < 0.0) throw ConfigError("lr", "must be >= 0");
  if (cfg.per_client < 1) throw ConfigError("per_client", "must be >= 1");
  if (cfg.mech.sigma_s_sq < 0.0) throw ConfigError("mechanism_config.sigma_s_sq", "must be >= 0");
  if (cfg.mech.sigma_y_sq < 0.0) throw ConfigError("mechanism_config.sigma_y_sq", "must be >= 0");
  if (!(cfg.acc_delta > 0.0 && cfg.acc_delta < 1.0))
    throw ConfigError("accountant.delta", "must be in (0,1)");
  if (!(cfg.acc_pixel_bound > 0.0)) throw ConfigError("accountant.pixel_bound", "must be > 0");
  if (cfg.acc_d_s < 1) throw ConfigError("accountant.d_s", "must be >= 1");
  if (cfg.acc_d_y < 1) throw ConfigError("accountant.d_y", "must be >= 1");
  if (cfg.sweep.k.empty()) throw ConfigError("sweep.k", "axis must be nonempty");
  if (cfg.sweep.alpha_m.empty()) throw ConfigError("sweep.alpha_m", "axis must be nonempty");
  if (cfg.sweep.sigma_sq.empty()) throw ConfigError("sweep.sigma_sq", "axis must be nonempty");
  for (const std::size_t k : cfg.sweep.k) {
    if (k < 1 || k > cfg.n) throw ConfigError("sweep.k", "every k must satisfy 1 <= k <= n");
  }
  for (const double a : cfg.sweep.alpha_m) {
    if (!(a > 0.0)) throw ConfigError("sweep.alpha_m", "must be > 0");
  }
  for (const double s : cfg.sweep.sigma_sq) {
    if (s < 0.0) throw ConfigError("sweep.sigma_sq", "must be >= 0");
  }
  if (cfg.format != "csv" && cfg.format != "json")
    throw ConfigError("format", "expected csv or json");
  if (cfg.model.classes != 2) throw ConfigError("model.classes", "binary task only");
}

}  // namespace

ExperimentConfig default_config() {
  ExperimentConfig cfg;
  cfg.dataset.n_patches = cfg.model.n_patches;
  cfg.dataset.patch_dim = cfg.model.patch_dim;
  cfg.sweep.k = {cfg.k};
  cfg.sweep.alpha_m = {cfg.alpha_m};
  cfg.sweep.sigma_sq = {cfg.mech.sigma_s_sq};
  return cfg;
}

ExperimentConfig config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("", "config must be a JSON object");
  require_keys(j, "", {"seed", "mechanism", "n", "k", "alpha_m", "rounds", "lr",
                       "per_client", "mechanism_config", "accountant", "model", "dataset",
                       "sweep", "attack", "verify", "trace_payloads", "out_dir", "format"});
  if (!j.contains("seed")) throw ConfigError("seed", "required (no wall-clock seeding)");

  ExperimentConfig cfg;
  try {
    cfg.seed = j.at("seed").get<std::uint64_t>();
  } catch (const json::exception&) {
    throw ConfigError("seed", "must be an unsigned integer");
  }
  if (j.contains("mechanism")) {
    try {
      cfg.mechanism = mechanism_from_name(j.at("mechanism").get<std::string>());
    } catch (const ParameterError& e) {
      throw ConfigError("mechanism", e.what());
    } catch (const json::exception&) {
      throw ConfigError("mechanism", "must be a string");
    }
  }
  cfg.n = get_or<std::uint32_t>(j, "n", "", cfg.n);
  cfg.k = get_or<std::uint32_t>(j, "k", "", cfg.k);
  cfg.alpha_m = get_or<double>(j, "alpha_m", "", cfg.alpha_m);
  cfg.rounds = get_or<std::uint32_t>(j, "rounds", "", cfg.rounds);
  cfg.lr = get_or<double>(j, "lr", "", cfg.lr);
  cfg.per_client = get_or<std::size_t>(j, "per_client", "", cfg.per_client);
  cfg.trace_payloads = get_or<bool>(j, "trace_payloads", "", cfg.trace_payloads);
  cfg.out_dir = get_or<std::string>(j, "out_dir", "", cfg.out_dir);
  cfg.format = get_or<std::string>(j, "format", "", cfg.format);

  if (j.contains("mechanism_config")) {
    const json& m = j.at("mechanism_config");
    require_keys(m, "mechanism_config",
                 {"sigma_s_sq", "sigma_y_sq", "noise_mode", "clamp_labels"});
    cfg.mech.sigma_s_sq = get_or<double>(m, "sigma_s_sq", "mechanism_config", cfg.mech.sigma_s_sq);
    cfg.mech.sigma_y_sq = get_or<double>(m, "sigma_y_sq", "mechanism_config", cfg.mech.sigma_y_sq);
    if (m.contains("noise_mode"))
      cfg.mech.noise_mode = noise_mode_from_name(
          get_or<std::string>(m, "noise_mode", "mechanism_config", "masked_noise"),
          "mechanism_config.noise_mode");
    cfg.mech.clamp_labels = get_or<bool>(m, "clamp_labels", "mechanism_config",
                                         cfg.mech.clamp_labels);
  }
  if (j.contains("accountant")) {
    const json& a = j.at("accountant");
    require_keys(a, "accountant",
                 {"alpha", "delta", "pixel_bound", "d_s", "d_y", "lambda_max",
                  "allow_real_alpha"});
    cfg.acc_alpha = get_or<double>(a, "alpha", "accountant", cfg.acc_alpha);
    cfg.acc_delta = get_or<double>(a, "delta", "accountant", cfg.acc_delta);
    cfg.acc_pixel_bound = get_or<double>(a, "pixel_bound", "accountant", cfg.acc_pixel_bound);
    cfg.acc_d_s = get_or<std::size_t>(a, "d_s", "accountant", cfg.acc_d_s);
    cfg.acc_d_y = get_or<std::size_t>(a, "d_y", "accountant", cfg.acc_d_y);
    cfg.acc_allow_real_alpha =
        get_or<bool>(a, "allow_real_alpha", "accountant", cfg.acc_allow_real_alpha);
    if (a.contains("lambda_max") && !a.at("lambda_max").is_null()) {
      cfg.lambda_max_explicit = true;
      cfg.lambda_max = get_or<double>(a, "lambda_max", "accountant", 0.0);
    }
  }
  if (j.contains("model")) {
    const json& m = j.at("model");
    require_keys(m, "model",
                 {"n_patches", "patch_dim", "feat_dim", "hidden", "classes", "delta",
                  "init_scale"});
    cfg.model.n_patches = get_or<std::size_t>(m, "n_patches", "model", cfg.model.n_patches);
    cfg.model.patch_dim = get_or<std::size_t>(m, "patch_dim", "model", cfg.model.patch_dim);
    cfg.model.feat_dim = get_or<std::size_t>(m, "feat_dim", "model", cfg.model.feat_dim);
    cfg.model.hidden = get_or<std::size_t>(m, "hidden", "model", cfg.model.hidden);
    cfg.model.classes = get_or<std::size_t>(m, "classes", "model", cfg.model.classes);
    cfg.model.delta = get_or<double>(m, "delta", "model", cfg.model.delta);
    cfg.model.init_scale = get_or<double>(m, "init_scale", "model", cfg.model.init_scale);
  }
  cfg.dataset.n_patches = cfg.model.n_patches;
  cfg.dataset.patch_dim = cfg.model.patch_dim;
  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    require_keys(d, "dataset", {"separation", "jitter", "class1_jitter_scale"});
    cfg.dataset.separation = get_or<double>(d, "separation", "dataset", cfg.dataset.separation);
    cfg.dataset.jitter = get_or<double>(d, "jitter", "dataset", cfg.dataset.jitter);
    cfg.dataset.class1_jitter_scale =
        get_or<double>(d, "class1_jitter_scale", "dataset", cfg.dataset.class1_jitter_scale);
  }
  cfg.sweep.k = {cfg.k};
  cfg.sweep.alpha_m = {cfg.alpha_m};
  cfg.sweep.sigma_sq = {cfg.mech.sigma_s_sq};
  if (j.contains("sweep")) {
    const json& s = j.at("sweep");
    require_keys(s, "sweep", {"k", "alpha_m", "sigma_sq"});
    if (s.contains("k")) cfg.sweep.k = s.at("k").get<std::vector<std::size_t>>();
    if (s.contains("alpha_m")) cfg.sweep.alpha_m = s.at("alpha_m").get<std::vector<double>>();
    if (s.contains("sigma_sq"))
      cfg.sweep.sigma_sq = s.at("sigma_sq").get<std::vector<double>>();
  }
  if (j.contains("attack")) {
    const json& a = j.at("attack");
    require_keys(a, "attack",
                 {"n_trials", "ridge", "epochs", "rounds_per_epoch", "recon_train",
                  "recon_test"});
    cfg.attack.n_trials = get_or<std::size_t>(a, "n_trials", "attack", cfg.attack.n_trials);
    cfg.attack.ridge = get_or<double>(a, "ridge", "attack", cfg.attack.ridge);
    cfg.attack.epochs = get_or<std::size_t>(a, "epochs", "attack", cfg.attack.epochs);
    cfg.attack.rounds_per_epoch =
        get_or<std::size_t>(a, "rounds_per_epoch", "attack", cfg.attack.rounds_per_epoch);
    cfg.attack.recon_train =
        get_or<std::size_t>(a, "recon_train", "attack", cfg.attack.recon_train);
    cfg.attack.recon_test = get_or<std::size_t>(a, "recon_test", "attack", cfg.attack.recon_test);
  }
  if (j.contains("verify")) {
    const json& v = j.at("verify");
    require_keys(v, "verify", {"mc_samples", "grid_draws"});
    cfg.verify.mc_samples = get_or<std::size_t>(v, "mc_samples", "verify", cfg.verify.mc_samples);
    cfg.verify.grid_draws = get_or<std::size_t>(v, "grid_draws", "verify", cfg.verify.grid_draws);
  }
  validate_config(cfg);
  return cfg;
}

json config_to_json(const ExperimentConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["mechanism"] = mechanism_name(cfg.mechanism);
  j["n"] = cfg.n;
  j["k"] = cfg.k;
  j["alpha_m"] = cfg.alpha_m;
  j["rounds"] = cfg.rounds;
  j["lr"] = cfg.lr;
  j["per_client"] = cfg.per_client;
  j["trace_payloads"] = cfg.trace_payloads;
  j["out_dir"] = cfg.out_dir;
  j["format"] = cfg.format;
  j["mechanism_config"] = {
      {"sigma_s_sq", cfg.mech.sigma_s_sq},
      {"sigma_y_sq", cfg.mech.sigma_y_sq},
      {"noise_mode",
       cfg.mech.noise_mode == NoiseMode::masked_noise ? "masked_noise" : "unmasked_noise"},
      {"clamp_labels", cfg.mech.clamp_labels},
  };
  j["accountant"] = {
      {"alpha", cfg.acc_alpha},
      {"delta", cfg.acc_delta},
      {"pixel_bound", cfg.acc_pixel_bound},
      {"d_s", cfg.acc_d_s},
      {"d_y", cfg.acc_d_y},
      {"lambda_max", cfg.lambda_max_explicit ? json(cfg.lambda_max) : json(nullptr)},
      {"allow_real_alpha", cfg.acc_allow_real_alpha},
  };
  j["model"] = {
      {"n_patches", cfg.model.n_patches}, {"patch_dim", cfg.model.patch_dim},
      {"feat_dim", cfg.model.feat_dim},   {"hidden", cfg.model.hidden},
      {"classes", cfg.model.classes},     {"delta", cfg.model.delta},
      {"init_scale", cfg.model.init_scale},
  };
  j["dataset"] = {
      {"separation", cfg.dataset.separation},
      {"jitter", cfg.dataset.jitter},
      {"class1_jitter_scale", cfg.dataset.class1_jitter_scale},
  };
  j["sweep"] = {{"k", cfg.sweep.k}, {"alpha_m", cfg.sweep.alpha_m},
                {"sigma_sq", cfg.sweep.sigma_sq}};
  j["attack"] = {
      {"n_trials", cfg.attack.n_trials},
      {"ridge", cfg.attack.ridge},
      {"epochs", cfg.attack.epochs},
      {"rounds_per_epoch", cfg.attack.rounds_per_epoch},
      {"recon_train", cfg.attack.recon_train},
      {"recon_test", cfg.attack.recon_test},
  };
  j["verify"] = {{"mc_samples", cfg.verify.mc_samples}, {"grid_draws", cfg.verify.grid_draws}};
  return j;
}

ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path, "cannot open config file");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(path, std::string("invalid JSON: ") + e.what());
  }
  return config_from_json(j);
}

std::string config_digest(const ExperimentConfig& cfg) {
  return fnv_hex(config_to_json(cfg).dump());
}

AccountantParams resolved_accountant(const ExperimentConfig& cfg) {
  AccountantParams p;
  p.alpha = cfg.acc_alpha;
  p.delta = cfg.acc_delta;
  p.pixel_bound = cfg.acc_pixel_bound;
  p.d_s = cfg.acc_d_s;
  p.d_y = cfg.acc_d_y;
  p.sigma_s_sq = cfg.mech.sigma_s_sq;
  p.sigma_y_sq = cfg.mech.sigma_y_sq;
  p.n = cfg.n;
  p.k = cfg.k;
  p.allow_real_alpha = cfg.acc_allow_real_alpha;
  p.lambda_max = cfg.lambda_max_explicit ? cfg.lambda_max : 1.0 / static_cast<double>(cfg.k);
  return p;
}

namespace {

std::filesystem::path ensure_out_dir(const ExperimentConfig& cfg) {
  const std::filesystem::path dir(cfg.out_dir);
  std::filesystem::create_directories(dir);
  return dir;
}

void write_text_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ProtocolError("cannot open output file " + path.string());
  out << content;
}

json output_header(const ExperimentConfig& cfg) {
  return json{{"schema_version", kSchemaVersion}, {"config_digest", config_digest(cfg)}};
}

std::vector<std::vector<Sample>> build_dataset(const ExperimentConfig& cfg) {
  RngStream rng(cfg.seed, {0, Role::server, 17});
  return make_two_class_dataset(cfg.dataset, cfg.n, cfg.per_client, rng);
}

ProtocolState build_state(const ExperimentConfig& cfg, std::uint32_t k, double sigma_sq,
                          double alpha_m) {
  ProtocolConfig pc;
  pc.n = cfg.n;
  pc.k = k;
  pc.alpha_m = alpha_m;
  pc.mechanism = cfg.mechanism;
  pc.mech = cfg.mech;
  pc.mech.sigma_s_sq = sigma_sq;
  pc.mech.sigma_y_sq = sigma_sq;
  pc.lr = cfg.lr;
  return make_protocol_state(pc, cfg.seed, cfg.model.n_patches, cfg.model.patch_dim,
                             cfg.model.feat_dim, cfg.model.hidden, cfg.model.classes,
                             cfg.model.delta, cfg.model.init_scale);
}

struct SweepCell {
  std::size_t index = 0;
  std::size_t k = 0;
  double alpha_m = 0.0;
  double sigma_sq = 0.0;
  double lambda_max = 0.0;
  double epsilon_rdp = 0.0;
  double epsilon_cdp = 0.0;
  double epsilon_subsampled = 0.0;
  double final_loss = 0.0;
  double final_acc = 0.0;
  bool simulated = false;
};

SweepCell evaluate_sweep_cell(const ExperimentConfig& cfg, std::size_t index, std::size_t k,
                              double alpha_m, double sigma_sq) {
  SweepCell cell;
  cell.index = index;
  cell.k = k;
  cell.alpha_m = alpha_m;
  cell.sigma_sq = sigma_sq;
  cell.lambda_max = 1.0 / static_cast<double>(k);

  AccountantParams p = resolved_accountant(cfg);
  p.k = k;
  p.lambda_max = cell.lambda_max;
  p.sigma_s_sq = sigma_sq;
  p.sigma_y_sq = sigma_sq;
  const RdpBudget rdp = rdp_budget(p, cfg.mechanism);
  cell.epsilon_rdp = rdp.epsilon;
  cell.epsilon_cdp = rdp_to_cdp(rdp, p.delta).epsilon;
  cell.epsilon_subsampled = subsampled_cdp(p, cfg.mechanism, p.delta).epsilon;

  if (cfg.rounds > 0) {
    cell.simulated = true;
    ProtocolState state =
        build_state(cfg, static_cast<std::uint32_t>(k), sigma_sq, alpha_m);
    RngStream data_rng(cfg.seed, {0, Role::server, 17});
    const auto data = make_two_class_dataset(cfg.dataset, cfg.n, cfg.per_client, data_rng);
    double last_loss = 0.0;
    for (std::uint32_t r = 0; r < cfg.rounds; ++r) {
      std::vector<Sample> batch;
      batch.reserve(cfg.n);
      for (std::uint32_t ci = 0; ci < cfg.n; ++ci)
        batch.push_back(data[ci][r % cfg.per_client]);
      const RoundResult rr = run_round(state, batch);
      double loss = 0.0;
      for (const auto& m : rr.metrics) loss += m.loss;
      last_loss = rr.metrics.empty() ? 0.0 : loss / static_cast<double>(rr.metrics.size());
    }
    cell.final_loss = last_loss;
    cell.final_acc = evaluate_accuracy(state, data);
  }
  return cell;
}

}  // namespace

int run_account(const ExperimentConfig& cfg, std::ostream& console) {
  const AccountantParams p = resolved_accountant(cfg);
  json out = output_header(cfg);
  out["budgets"] = json::array();
  console << "mechanism      epsilon_rdp    epsilon_cdp    epsilon_subsampled\n";
  for (const Mechanism mech :
       {Mechanism::dp_mixsl, Mechanism::dp_cutmixsl, Mechanism::dp_sl}) {
    const RdpBudget rdp = rdp_budget(p, mech);
    const CdpBudget cdp = rdp_to_cdp(rdp, p.delta);
    const CdpBudget sub = subsampled_cdp(p, mech, p.delta);
    json record = budget_to_json(p, rdp, cdp);
    record["epsilon_subsampled"] = sub.epsilon;
    out["budgets"].push_back(std::move(record));
    char line[160];
    std::snprintf(line, sizeof line, "%-14s %-14.6g %-14.6g %-14.6g\n",
                  mechanism_name(mech).c_str(), rdp.epsilon, cdp.epsilon, sub.epsilon);
    console << line;
  }
  const auto dir = ensure_out_dir(cfg);
  write_text_file(dir / "account.json", out.dump(2) + "\n");
  return kExitOk;
}

int run_simulate(const ExperimentConfig& cfg, std::ostream& console) {
  const auto dir = ensure_out_dir(cfg);
  const auto data = build_dataset(cfg);
  ProtocolState state = build_state(cfg, cfg.k, cfg.mech.sigma_s_sq, cfg.alpha_m);

  std::ofstream metrics(dir / "metrics.csv", std::ios::binary);
  write_metrics_csv_header(metrics);
  std::ofstream trace(dir / "trace.ndjson", std::ios::binary);
  for (std::uint32_t r = 0; r < cfg.rounds; ++r) {
    std::vector<Sample> batch;
    batch.reserve(cfg.n);
    for (std::uint32_t ci = 0; ci < cfg.n; ++ci) batch.push_back(data[ci][r % cfg.per_client]);
    const RoundResult rr = run_round(state, batch);
    write_metrics_csv(metrics, rr.metrics);
    write_trace_ndjson(trace, rr.trace, cfg.trace_payloads);
  }
  const double acc = evaluate_accuracy(state, data);

  json manifest = output_header(cfg);
  manifest["rounds"] = cfg.rounds;
  manifest["final_train_accuracy"] = acc;
  manifest["outputs"] = {"metrics.csv", "trace.ndjson"};
  write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
  console << "simulate: " << cfg.rounds << " rounds, final train accuracy " << acc << "\n";
  return kExitOk;
}

int run_attack(const ExperimentConfig& cfg, const std::string& name, std::ostream& console) {
  const auto dir = ensure_out_dir(cfg);
  json out = output_header(cfg);
  out["attack"] = name;
  json reports = json::array();

  if (name == "membership") {
    std::size_t cell = 0;
    for (const double sigma_sq : cfg.sweep.sigma_sq) {
      for (const std::size_t k : cfg.sweep.k) {
        MembershipExperimentSpec spec;
        spec.mech = cfg.mechanism;
        spec.cfg = cfg.mech;
        spec.cfg.sigma_s_sq = sigma_sq;
        spec.cfg.sigma_y_sq = sigma_sq;
        spec.k = k;
        spec.n_trials = cfg.attack.n_trials;
        RngStream rng(cfg.seed, {static_cast<std::uint32_t>(cell), Role::server, 23});
        const auto trials = make_membership_trials(spec, rng);
        const double rate = membership_attack(trials, spec.mech, spec.cfg);
        const double se =
            std::sqrt(rate * (1.0 - rate) / static_cast<double>(spec.n_trials));
        reports.push_back({{"attack", "membership"},
                           {"mechanism", mechanism_name(cfg.mechanism)},
                           {"params", {{"k", k}, {"sigma_sq", sigma_sq}}},
                           {"metric", "success_rate"},
                           {"value", rate},
                           {"n_trials", spec.n_trials},
                           {"seed", cfg.seed},
                           {"ci95", 1.96 * se}});
        console << "membership k=" << k << " sigma_sq=" << sigma_sq << " -> " << rate << "\n";
        ++cell;
      }
    }
  } else if (name == "label_leak") {
    for (const bool worst : {true, false}) {
      LabelLeakExperimentSpec spec;
      spec.worst_case = worst;
      spec.epochs = cfg.attack.epochs;
      spec.rounds_per_epoch = cfg.attack.rounds_per_epoch;
      spec.lr = cfg.lr;
      spec.alpha_m = cfg.alpha_m;
      spec.data = cfg.dataset;
      spec.feat_dim = cfg.model.feat_dim;
      spec.hidden = cfg.model.hidden;
      spec.delta = cfg.model.delta;
      spec.init_scale = cfg.model.init_scale;
      spec.seed = cfg.seed;
      const LabelLeakResult res = run_label_leak_experiment(spec);
      double max_norm = 0.0;
      for (const double a : res.norm_auc) max_norm = std::max(max_norm, a);
      const std::size_t n_scores = spec.rounds_per_epoch / 2;
      reports.push_back(
          {{"attack", "label_leak"},
           {"mechanism", worst ? "dp_sl" : "dp_cutmixsl"},
           {"params",
            {{"worst_case", worst},
             {"epochs", spec.epochs},
             {"norm_auc", res.norm_auc},
             {"cosine_auc", res.cosine_auc}}},
           {"metric", "norm_leak_auc_max"},
           {"value", max_norm},
           {"n_trials", spec.epochs * spec.rounds_per_epoch},
           {"seed", cfg.seed},
           {"ci95", roc_auc_ci95(max_norm, n_scores, n_scores)}});
      console << "label_leak worst_case=" << worst << " max norm AUC " << max_norm << "\n";
    }
  } else if (name == "reconstruction") {
    std::size_t cell = 0;
    for (const std::size_t k : cfg.sweep.k) {
      for (const double alpha_m : cfg.sweep.alpha_m) {
        ReconExperimentSpec spec;
        spec.mech = cfg.mechanism;
        spec.cfg = cfg.mech;
        spec.k = k;
        spec.alpha_m = alpha_m;
        spec.n_train = cfg.attack.recon_train;
        spec.n_test = cfg.attack.recon_test;
        spec.ridge = cfg.attack.ridge;
        spec.data = cfg.dataset;
        spec.feat_dim = cfg.model.feat_dim;
        spec.delta = cfg.model.delta;
        spec.init_scale = cfg.model.init_scale;
        spec.seed = cfg.seed + cell;
        const ReconstructionReport rep = run_reconstruction_experiment(spec);
        reports.push_back({{"attack", "reconstruction"},
                           {"mechanism", mechanism_name(cfg.mechanism)},
                           {"params",
                            {{"k", k},
                             {"alpha_m", alpha_m},
                             {"train_size", spec.n_train},
                             {"ridge", spec.ridge}}},
                           {"metric", "test_mse"},
                           {"value", rep.mse},
                           {"n_trials", spec.n_test},
                           {"seed", spec.seed},
                           {"ci95", 0.0}});
        console << "reconstruction k=" << k << " alpha_m=" << alpha_m << " -> mse " << rep.mse
                << "\n";
        ++cell;
      }
    }
  } else {
    throw ParameterError("unknown attack: " + name +
                         " (expected membership, label_leak, or reconstruction)");
  }

  out["reports"] = std::move(reports);
  write_text_file(dir / ("attack_" + name + ".json"), out.dump(2) + "\n");
  return kExitOk;
}

int run_verify(const ExperimentConfig& cfg, std::ostream& console) {
  const auto dir = ensure_out_dir(cfg);
  json checks = json::array();
  bool all_pass = true;
  const auto record = [&](const std::string& name, double analytic, double estimate,
                          double ci95, bool pass) {
    checks.push_back({{"check", name},
                      {"analytic", analytic},
                      {"estimate", estimate},
                      {"ci95", ci95},
                      {"pass", pass}});
    all_pass = all_pass && pass;
    console << (pass ? "PASS " : "FAIL ") << name << " analytic=" << analytic
            << " estimate=" << estimate << " ci95=" << ci95 << "\n";
  };

  // 1. Closed-form Gaussian divergence in one dimension.
  {
    RngStream rng(cfg.seed, {0, Role::server, 31});
    const std::vector<double> mu_p = {1.0}, mu_q = {0.0};
    const McEstimate est =
        mc_renyi_divergence(mu_p, mu_q, 1.0, 2.0, cfg.verify.mc_samples, rng);
    record("mc_renyi_1d_gap1", 1.0, est.value, est.ci95_half_width,
           std::abs(est.value - 1.0) <= std::max(est.ci95_half_width, 1e-3) * 3.0);
  }

  // 2. Worst-case tightness for dp_sl, dominance for the mixing mechanisms.
  {
    AccountantParams p;
    p.alpha = 2.0;
    p.delta = cfg.acc_delta;
    p.pixel_bound = 1.0;
    p.d_s = 4;
    p.d_y = 2;
    p.sigma_s_sq = 4.0;
    p.sigma_y_sq = 4.0;
    p.n = cfg.n;
    p.k = 1;
    p.lambda_max = 1.0;
    RngStream rng(cfg.seed, {1, Role::server, 31});
    const WorstCaseCheck sl =
        empirical_worstcase_check(p, Mechanism::dp_sl, NoiseMode::masked_noise,
                                  cfg.verify.mc_samples, rng);
    record("worstcase_dp_sl_tight", sl.analytic, sl.estimate.value,
           sl.estimate.ci95_half_width,
           std::abs(sl.estimate.value - sl.analytic) <= 3.0 * sl.estimate.ci95_half_width);

    p.k = 2;
    p.n = std::max<std::size_t>(2, cfg.n);
    p.lambda_max = 0.5;
    const WorstCaseCheck mix =
        empirical_worstcase_check(p, Mechanism::dp_mixsl, NoiseMode::masked_noise,
                                  cfg.verify.mc_samples, rng);
    record("worstcase_dp_mixsl_dominated", mix.analytic, mix.estimate.value,
           mix.estimate.ci95_half_width,
           mix.estimate.value <= mix.analytic + 3.0 * mix.estimate.ci95_half_width);

    p.d_y = 4;
    const WorstCaseCheck cut =
        empirical_worstcase_check(p, Mechanism::dp_cutmixsl, NoiseMode::masked_noise,
                                  cfg.verify.mc_samples, rng);
    record("worstcase_dp_cutmixsl_masked", cut.analytic, cut.estimate.value,
           cut.estimate.ci95_half_width,
           cut.estimate.value <= cut.analytic + 3.0 * cut.estimate.ci95_half_width);

    const WorstCaseCheck cut2 =
        empirical_worstcase_check(p, Mechanism::dp_cutmixsl, NoiseMode::unmasked_noise,
                                  cfg.verify.mc_samples, rng);
    record("worstcase_dp_cutmixsl_unmasked", cut2.analytic, cut2.estimate.value,
           cut2.estimate.ci95_half_width,
           cut2.estimate.value <= cut2.analytic + 3.0 * cut2.estimate.ci95_half_width);
  }

  // 3. Grid search against the closed-form optimum in the small-budget regime.
  {
    RngStream rng(cfg.seed, {2, Role::server, 31});
    std::size_t agree = 0;
    for (std::size_t d = 0; d < cfg.verify.grid_draws; ++d) {
      AccountantParams p;
      p.alpha = 2.0 + static_cast<double>(rng.uniform_below(3));
      const double eps_o = cdp_conversion_term(p.alpha, 0.5 + 0.4 * rng.uniform());
      p.delta = std::exp(-eps_o * (p.alpha - 1.0));
      p.n = 400;
      p.k = 1;
      p.lambda_max = 1.0;
      p.pixel_bound = 1.0;
      p.d_y = 2;
      p.sigma_y_sq = static_cast<double>(p.d_y) * p.alpha /
                     (2.0 * eps_o * (1.0 + 80.0 * rng.uniform()));
      p.d_s = 4;
      p.sigma_s_sq = 200.0 + 200.0 * rng.uniform();
      const Mechanism mech = d % 2 == 0 ? Mechanism::dp_mixsl : Mechanism::dp_cutmixsl;
      const RdpComponents base = rdp_components(p);
      const double k_star = optimal_group_size(base.smashed, base.label, eps_o, mech);
      const std::size_t grid = grid_search_group_size(p, mech, 1, p.n);
      const double lo = std::floor(k_star), hi = std::ceil(k_star);
      if (static_cast<double>(grid) >= lo - 1.0 && static_cast<double>(grid) <= hi + 1.0)
        ++agree;
    }
    record("grid_matches_closed_form", static_cast<double>(cfg.verify.grid_draws),
           static_cast<double>(agree), 0.0, agree == cfg.verify.grid_draws);
  }

  // 4. Finite differences plus the mutation sentinel.
  {
    RngStream rng(cfg.seed, {3, Role::server, 31});
    const ClientSegment client = make_client_segment(3, 4, 1.0, 0.5, rng);
    const ServerSegment server = make_server_segment(4, 4, 8, 3, 0.5, rng);
    Sample sample;
    sample.input = Matrix(4, 3);
    for (double& v : sample.input.data) v = rng.normal(1.0);
    sample.label = one_hot(3, 1);
    const FiniteDiffReport ok = finite_difference_suite(client, server, sample, 1e-5);
    record("finite_difference_suite", 1e-5, ok.max_rel_error, 0.0, ok.pass);
    const FiniteDiffReport bad = finite_difference_suite(client, server, sample, 1e-5, 1.01);
    record("finite_difference_mutation_sentinel", 1e-5, bad.max_rel_error, 0.0, !bad.pass);
  }

  json out = output_header(cfg);
  out["checks"] = std::move(checks);
  out["pass"] = all_pass;
  write_text_file(dir / "verify_report.json", out.dump(2) + "\n");
  return all_pass ? kExitOk : kExitVerifyFailed;
}

int run_sweep(const ExperimentConfig& cfg, std::ostream& console) {
  const auto dir = ensure_out_dir(cfg);
  struct CellSpec {
    std::size_t k;
    double alpha_m;
    double sigma_sq;
  };
  std::vector<CellSpec> specs;
  for (const std::size_t k : cfg.sweep.k) {
    for (const double a : cfg.sweep.alpha_m) {
      for (const double s : cfg.sweep.sigma_sq) specs.push_back({k, a, s});
    }
  }

  std::vector<SweepCell> cells(specs.size());
  std::atomic<std::size_t> next{0};
  const std::size_t n_workers =
      std::max<std::size_t>(1, std::min<std::size_t>(std::thread::hardware_concurrency(),
                                                     specs.size()));
  std::vector<std::thread> workers;
  workers.reserve(n_workers);
  for (std::size_t w = 0; w < n_workers; ++w) {
    workers.emplace_back([&]() {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= specs.size()) return;
        cells[i] = evaluate_sweep_cell(cfg, i, specs[i].k, specs[i].alpha_m,
                                       specs[i].sigma_sq);
      }
    });
  }
  for (auto& w : workers) w.join();

  // Rows come out in deterministic cell order regardless of worker timing.
  if (cfg.format == "csv") {
    std::string body;
    body += "# schema_version=" + std::to_string(kSchemaVersion) +
            " config_digest=" + config_digest(cfg) + "\n";
    body += "cell,mechanism,k,alpha_m,sigma_sq,lambda_max,epsilon_rdp,epsilon_cdp,"
            "epsilon_subsampled,final_loss,final_acc\n";
    char line[320];
    for (const auto& c : cells) {
      std::snprintf(line, sizeof line, "%zu,%s,%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g",
                    c.index, mechanism_name(cfg.mechanism).c_str(), c.k, c.alpha_m,
                    c.sigma_sq, c.lambda_max, c.epsilon_rdp, c.epsilon_cdp,
                    c.epsilon_subsampled);
      body += line;
      if (c.simulated) {
        std::snprintf(line, sizeof line, ",%.17g,%.17g\n", c.final_loss, c.final_acc);
      } else {
        std::snprintf(line, sizeof line, ",,\n");
      }
      body += line;
    }
    write_text_file(dir / "sweep.csv", body);
  } else {
    json out = output_header(cfg);
    out["cells"] = json::array();
    for (const auto& c : cells) {
      json cell = {{"cell", c.index},
                   {"mechanism", mechanism_name(cfg.mechanism)},
                   {"k", c.k},
                   {"alpha_m", c.alpha_m},
                   {"sigma_sq", c.sigma_sq},
                   {"lambda_max", c.lambda_max},
                   {"epsilon_rdp", c.epsilon_rdp},
                   {"epsilon_cdp", c.epsilon_cdp},
                   {"epsilon_subsampled", c.epsilon_subsampled}};
      if (c.simulated) {
        cell["final_loss"] = c.final_loss;
        cell["final_acc"] = c.final_acc;
      }
      out["cells"].push_back(std::move(cell));
    }
    write_text_file(dir / "sweep.json", out.dump(2) + "\n");
  }
  console << "sweep: " << cells.size() << " cells\n";
  return kExitOk;
}

}  // namespace cutmixsl
