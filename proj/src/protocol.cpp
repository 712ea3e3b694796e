#include "cutmixsl/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "json.hpp"

#include "cutmixsl/errors.hpp"

namespace cutmixsl {

std::string message_kind_name(MessageKind k) {
  switch (k) {
    case MessageKind::mask_assignment: return "mask_assignment";
    case MessageKind::masked_upload: return "masked_upload";
    case MessageKind::mixed_batch: return "mixed_batch";
    case MessageKind::cut_gradient: return "cut_gradient";
    case MessageKind::split_gradient: return "split_gradient";
  }
  throw ParameterError("message_kind_name: unknown kind");
}

namespace {

const char* role_name(Role r) {
  switch (r) {
    case Role::client: return "client";
    case Role::mixer: return "mixer";
    case Role::server: return "server";
  }
  return "?";
}

int schedule_stage(MessageKind k) { return static_cast<int>(k); }

std::size_t payload_stage(const MessagePayload& p) { return p.index(); }

}  // namespace

void validate_message(const RoundMessage& msg) {
  static constexpr std::size_t expected_index[] = {0, 1, 2, 3, 3};
  if (payload_stage(msg.payload) != expected_index[static_cast<int>(msg.kind)])
    throw InvariantError("message payload does not match its kind");
}

Grouping cluster_clients(std::uint32_t n, std::uint32_t k, RngStream& rng) {
  if (n < 1 || k < 1 || k > n) throw ParameterError("cluster_clients: need 1 <= k <= n");
  const std::vector<std::uint32_t> perm = rng.permutation(n);
  Grouping g;
  g.k = k;
  const std::uint32_t n_groups = n / k;
  g.groups.resize(n_groups);
  for (std::uint32_t i = 0; i < n_groups; ++i)
    g.groups[i].assign(perm.begin() + i * k, perm.begin() + (i + 1) * k);
  return g;
}

ProtocolState make_protocol_state(const ProtocolConfig& config, std::uint64_t seed,
                                  std::size_t n_patches, std::size_t patch_dim,
                                  std::size_t feat_dim, std::size_t hidden,
                                  std::size_t classes, double delta, double init_scale) {
  if (config.n < 1 || config.k < 1 || config.k > config.n)
    throw ParameterError("protocol config: need 1 <= k <= n");
  if (!(config.alpha_m > 0.0)) throw ParameterError("protocol config: alpha_m must be > 0");
  ProtocolState st;
  st.seed = seed;
  st.config = config;
  // Init streams are round-independent (round number ~0 is never reused
  // because client streams are only consumed from round 0 onward with
  // distinct role keys).
  for (std::uint32_t i = 0; i < config.n; ++i) {
    RngStream rng(seed ^ 0x5eedc0de, {0, Role::client, i});
    st.clients.push_back(make_client_segment(patch_dim, feat_dim, delta, init_scale, rng));
  }
  RngStream rng(seed ^ 0x5eedc0de, {0, Role::server, 0});
  st.server = make_server_segment(n_patches, feat_dim, hidden, classes, init_scale, rng);
  return st;
}

std::vector<Matrix> split_cut_gradient(const Matrix& grad, const std::vector<PatchMask>& masks) {
  require_partition(masks);
  if (masks.front().length() != grad.rows)
    throw DimensionError("split_cut_gradient: mask length does not match patch count");
  std::vector<Matrix> pieces;
  pieces.reserve(masks.size());
  for (const auto& mask : masks) {
    Matrix piece(grad.rows, grad.cols, 0.0);
    for (std::size_t p = 0; p < grad.rows; ++p) {
      if (!mask.covers(p)) continue;
      for (std::size_t c = 0; c < grad.cols; ++c) piece(p, c) = grad(p, c);
    }
    pieces.push_back(std::move(piece));
  }
  return pieces;
}

namespace {

std::size_t argmax(const std::vector<double>& v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

void append_message(std::vector<RoundMessage>& trace, RoundMessage msg) {
  validate_message(msg);
  trace.push_back(std::move(msg));
}

// Mean gradient over equally shaped tensors.
Matrix mean_gradient(const std::vector<Matrix>& grads) {
  Matrix acc(grads.front().rows, grads.front().cols, 0.0);
  for (const auto& g : grads) {
    for (std::size_t e = 0; e < acc.size(); ++e) acc.data[e] += g.data[e];
  }
  const double inv = 1.0 / static_cast<double>(grads.size());
  for (double& v : acc.data) v *= inv;
  return acc;
}

void accumulate(ServerGrads& acc, const ServerGrads& g) {
  if (acc.hidden_w_g.size() == 0) {
    acc = g;
    return;
  }
  for (std::size_t e = 0; e < acc.hidden_w_g.size(); ++e)
    acc.hidden_w_g.data[e] += g.hidden_w_g.data[e];
  for (std::size_t j = 0; j < acc.hidden_b_g.size(); ++j) acc.hidden_b_g[j] += g.hidden_b_g[j];
  for (std::size_t e = 0; e < acc.out_w_g.size(); ++e) acc.out_w_g.data[e] += g.out_w_g.data[e];
  for (std::size_t c = 0; c < acc.out_b_g.size(); ++c) acc.out_b_g[c] += g.out_b_g[c];
  for (std::size_t e = 0; e < acc.cut_grad.size(); ++e)
    acc.cut_grad.data[e] += g.cut_grad.data[e];
}

}  // namespace

RoundResult run_round(ProtocolState& state, const std::vector<Sample>& batch) {
  const ProtocolConfig& cfg = state.config;
  if (state.clients.size() != cfg.n) throw ProtocolError("run_round: state/config n mismatch");
  if (batch.size() != cfg.n) throw DimensionError("run_round: need one sample per client");
  const std::uint32_t round = state.round;

  RoundResult result;
  RngStream cluster_rng(state.seed, {round, Role::mixer, 0});
  const Grouping grouping = cluster_clients(cfg.n, cfg.k, cluster_rng);

  ServerGrads server_acc;
  std::vector<std::pair<std::uint32_t, ClientGrads>> client_updates;

  for (std::uint32_t gi = 0; gi < grouping.groups.size(); ++gi) {
    const std::vector<std::uint32_t>& members = grouping.groups[gi];
    RngStream mixer_rng(state.seed, {round, Role::mixer, gi + 1});
    auto emit = [&](MessageKind kind, Endpoint from, Endpoint to, MessagePayload payload) {
      append_message(result.trace,
                     RoundMessage{kind, round, gi, from, to, std::move(payload)});
    };
    const Endpoint mixer{Role::mixer, 0};
    const Endpoint server{Role::server, 0};

    // Client-side forward passes (cached for the backward half-round).
    std::vector<ClientForwardCache> caches;
    caches.reserve(members.size());
    for (const std::uint32_t ci : members)
      caches.push_back(client_forward_cached(batch[ci].input, state.clients[ci], round));
    const std::size_t n_patches = caches.front().smashed.n_patches();
    const double delta = caches.front().smashed.delta;

    try {
      if (cfg.mechanism == Mechanism::dp_cutmixsl || cfg.mechanism == Mechanism::dp_mixsl) {
        const bool cutmix = cfg.mechanism == Mechanism::dp_cutmixsl;
        const MixRatios drawn =
            sample_mix_ratios(members.size(), cfg.alpha_m, mixer_rng);
        std::vector<PatchMask> masks;
        MixRatios lambdas = drawn;
        if (cutmix) {
          masks = allocate_masks(drawn, n_patches, mixer_rng);
          lambdas = realized_ratios(masks);
        }
        for (std::size_t j = 0; j < members.size(); ++j) {
          emit(MessageKind::mask_assignment, mixer, Endpoint{Role::client, members[j]},
               MaskAssignment{cutmix ? std::optional<PatchMask>(masks[j]) : std::nullopt,
                              lambdas.lambdas[j]});
        }

        std::vector<ClientRelease> uploads;
        uploads.reserve(members.size());
        for (std::size_t j = 0; j < members.size(); ++j) {
          RngStream client_rng(state.seed, {round, Role::client, members[j]});
          ClientRelease rel =
              cutmix ? release_cutmix_contribution(caches[j].smashed, batch[members[j]].label,
                                                   masks[j], lambdas.lambdas[j], cfg.mech,
                                                   client_rng)
                     : release_mix_contribution(caches[j].smashed, batch[members[j]].label,
                                                lambdas.lambdas[j], cfg.mech, client_rng);
          emit(MessageKind::masked_upload, Endpoint{Role::client, members[j]}, mixer,
               MaskedUpload{rel.smashed, rel.label, cfg.mech.sigma_s_sq > 0.0,
                            lambdas.lambdas[j]});
          uploads.push_back(std::move(rel));
        }

        MixedBatch mixed;
        Matrix acc(uploads.front().smashed.rows, uploads.front().smashed.cols, 0.0);
        std::vector<double> label(uploads.front().label.size(), 0.0);
        for (std::size_t j = 0; j < uploads.size(); ++j) {
          for (std::size_t e = 0; e < acc.size(); ++e) acc.data[e] += uploads[j].smashed.data[e];
          for (std::size_t c = 0; c < label.size(); ++c) label[c] += uploads[j].label[c];
          mixed.provenance.push_back(
              Contribution{members[j], lambdas.lambdas[j],
                           cutmix ? std::optional<PatchMask>(masks[j]) : std::nullopt});
        }
        if (cfg.mech.clamp_labels) clamp01(label);
        mixed.smashed = SmashedData{std::move(acc), delta};
        mixed.label = std::move(label);
        emit(MessageKind::mixed_batch, mixer, server, mixed);

        const ServerForward fwd = server_forward(mixed, state.server);
        ServerGrads grads = server_backward(mixed, state.server, fwd);
        emit(MessageKind::cut_gradient, server, mixer, GradientPayload{grads.cut_grad});

        std::vector<Matrix> pieces;
        if (cfg.avg_cut_grad) {
          pieces.assign(members.size(), grads.cut_grad);  // broadcast, no masking
        } else if (cutmix) {
          pieces = split_cut_gradient(grads.cut_grad, masks);
        } else {
          pieces.reserve(members.size());
          for (std::size_t j = 0; j < members.size(); ++j) {
            Matrix piece = grads.cut_grad;
            for (double& v : piece.data) v *= lambdas.lambdas[j];
            pieces.push_back(std::move(piece));
          }
        }
        double norm_sum = 0.0;
        for (std::size_t j = 0; j < members.size(); ++j) {
          emit(MessageKind::split_gradient, mixer, Endpoint{Role::client, members[j]},
               GradientPayload{pieces[j]});
          norm_sum += l2_norm(pieces[j].data);
          client_updates.emplace_back(
              members[j],
              client_backward(pieces[j], caches[j], state.clients[members[j]], round));
        }
        accumulate(server_acc, grads);

        RoundMetrics m;
        m.round = round;
        m.group = gi;
        m.loss = fwd.loss;
        m.acc = argmax(fwd.probs) == argmax(fwd.target) ? 1.0 : 0.0;
        m.grad_norm_mean = norm_sum / static_cast<double>(members.size());
        result.metrics.push_back(m);
      } else {
        // dp_sl: no mixing; each member's pair flows through the mixer
        // untouched beyond the Gaussian release.
        std::vector<ClientRelease> uploads;
        uploads.reserve(members.size());
        for (std::size_t j = 0; j < members.size(); ++j) {
          RngStream client_rng(state.seed, {round, Role::client, members[j]});
          ClientRelease rel =
              release_plain(caches[j].smashed, batch[members[j]].label, cfg.mech, client_rng);
          emit(MessageKind::masked_upload, Endpoint{Role::client, members[j]}, mixer,
               MaskedUpload{rel.smashed, rel.label, cfg.mech.sigma_s_sq > 0.0, 1.0});
          uploads.push_back(std::move(rel));
        }
        std::vector<MixedBatch> batches;
        batches.reserve(members.size());
        for (std::size_t j = 0; j < members.size(); ++j) {
          MixedBatch b;
          b.smashed = SmashedData{uploads[j].smashed, delta};
          b.label = uploads[j].label;
          if (cfg.mech.clamp_labels) clamp01(b.label);
          b.provenance = {Contribution{members[j], 1.0, std::nullopt}};
          emit(MessageKind::mixed_batch, mixer, server, b);
          batches.push_back(std::move(b));
        }
        std::vector<Matrix> cut_grads;
        double loss_sum = 0.0, acc_sum = 0.0;
        for (std::size_t j = 0; j < members.size(); ++j) {
          const ServerForward fwd = server_forward(batches[j], state.server);
          ServerGrads grads = server_backward(batches[j], state.server, fwd);
          emit(MessageKind::cut_gradient, server, mixer, GradientPayload{grads.cut_grad});
          loss_sum += fwd.loss;
          acc_sum += argmax(fwd.probs) == argmax(fwd.target) ? 1.0 : 0.0;
          cut_grads.push_back(grads.cut_grad);
          accumulate(server_acc, grads);
        }
        std::vector<Matrix> pieces;
        if (cfg.avg_cut_grad) {
          pieces.assign(members.size(), mean_gradient(cut_grads));
        } else {
          pieces = cut_grads;
        }
        double norm_sum = 0.0;
        for (std::size_t j = 0; j < members.size(); ++j) {
          emit(MessageKind::split_gradient, mixer, Endpoint{Role::client, members[j]},
               GradientPayload{pieces[j]});
          norm_sum += l2_norm(pieces[j].data);
          client_updates.emplace_back(
              members[j],
              client_backward(pieces[j], caches[j], state.clients[members[j]], round));
        }
        RoundMetrics m;
        m.round = round;
        m.group = gi;
        m.loss = loss_sum / static_cast<double>(members.size());
        m.acc = acc_sum / static_cast<double>(members.size());
        m.grad_norm_mean = norm_sum / static_cast<double>(members.size());
        result.metrics.push_back(m);
      }
    } catch (const NumericError& e) {
      throw NumericError("round " + std::to_string(round) + " group " + std::to_string(gi) +
                         ": " + e.what());
    }
  }

  // Updates are applied after all groups so group order cannot leak into the
  // forward passes of a single round.
  for (auto& [ci, grads] : client_updates) sgd_step(state.clients[ci], grads, cfg.lr);
  if (server_acc.hidden_w_g.size() != 0) sgd_step(state.server, server_acc, cfg.lr);

  if (cfg.weight_avg && cfg.n > 1) {
    ClientSegment mean = state.clients.front();
    for (std::size_t i = 1; i < state.clients.size(); ++i) {
      for (std::size_t e = 0; e < mean.embed_w.size(); ++e)
        mean.embed_w.data[e] += state.clients[i].embed_w.data[e];
      for (std::size_t f = 0; f < mean.embed_b.size(); ++f)
        mean.embed_b[f] += state.clients[i].embed_b[f];
    }
    const double inv = 1.0 / static_cast<double>(state.clients.size());
    for (double& v : mean.embed_w.data) v *= inv;
    for (double& v : mean.embed_b) v *= inv;
    for (auto& c : state.clients) c = mean;
  }

  state.round += 1;
  return result;
}

bool trace_in_schedule_order(const std::vector<RoundMessage>& trace) {
  // Within each (round, group) the stage may never decrease.
  for (std::size_t i = 1; i < trace.size(); ++i) {
    const auto& prev = trace[i - 1];
    const auto& cur = trace[i];
    if (prev.round == cur.round && prev.group == cur.group &&
        schedule_stage(cur.kind) < schedule_stage(prev.kind))
      return false;
  }
  return true;
}

bool trace_respects_privacy_boundary(const std::vector<RoundMessage>& trace,
                                     const ProtocolConfig& config) {
  for (const auto& msg : trace) {
    if (msg.sender.role == Role::client && msg.receiver.role != Role::mixer) return false;
    if (msg.kind == MessageKind::masked_upload) {
      const auto& upload = std::get<MaskedUpload>(msg.payload);
      if (config.mech.sigma_s_sq > 0.0 && !upload.noised) return false;
      if (upload.mask_fraction < 0.0 || upload.mask_fraction > 1.0) return false;
    }
  }
  return true;
}

namespace {

struct Fnv1a {
  std::uint64_t h = 1469598103934665603ULL;
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  }
  void u64(std::uint64_t v) { bytes(&v, sizeof v); }
  void f64(double v) { bytes(&v, sizeof v); }
  void matrix(const Matrix& m) {
    u64(m.rows);
    u64(m.cols);
    for (const double v : m.data) f64(v);
  }
  void vec(const std::vector<double>& v) {
    u64(v.size());
    for (const double x : v) f64(x);
  }
  void mask(const PatchMask& m) {
    u64(m.length());
    bytes(m.selected.data(), m.selected.size());
  }
};

nlohmann::json matrix_to_json(const Matrix& m) {
  return nlohmann::json{{"rows", m.rows}, {"cols", m.cols}, {"data", m.data}};
}

nlohmann::json mask_to_json(const PatchMask& m) {
  std::vector<int> bits(m.selected.begin(), m.selected.end());
  return nlohmann::json(bits);
}

nlohmann::json payload_to_json(const RoundMessage& msg) {
  nlohmann::json j;
  switch (msg.kind) {
    case MessageKind::mask_assignment: {
      const auto& p = std::get<MaskAssignment>(msg.payload);
      j["ratio"] = p.ratio;
      j["mask"] = p.mask ? mask_to_json(*p.mask) : nlohmann::json(nullptr);
      break;
    }
    case MessageKind::masked_upload: {
      const auto& p = std::get<MaskedUpload>(msg.payload);
      j["smashed"] = matrix_to_json(p.smashed);
      j["label"] = p.label;
      j["noised"] = p.noised;
      j["mask_fraction"] = p.mask_fraction;
      break;
    }
    case MessageKind::mixed_batch: {
      const auto& p = std::get<MixedBatch>(msg.payload);
      j["smashed"] = matrix_to_json(p.smashed.values);
      j["delta"] = p.smashed.delta;
      j["label"] = p.label;
      nlohmann::json prov = nlohmann::json::array();
      for (const auto& c : p.provenance) {
        prov.push_back({{"client", c.client},
                        {"ratio", c.ratio},
                        {"mask", c.mask ? mask_to_json(*c.mask) : nlohmann::json(nullptr)}});
      }
      j["provenance"] = std::move(prov);
      break;
    }
    case MessageKind::cut_gradient:
    case MessageKind::split_gradient: {
      const auto& p = std::get<GradientPayload>(msg.payload);
      j["grad"] = matrix_to_json(p.grad);
      break;
    }
  }
  return j;
}

}  // namespace

std::uint64_t payload_digest(const RoundMessage& msg) {
  Fnv1a h;
  h.u64(static_cast<std::uint64_t>(msg.kind));
  switch (msg.kind) {
    case MessageKind::mask_assignment: {
      const auto& p = std::get<MaskAssignment>(msg.payload);
      h.f64(p.ratio);
      if (p.mask) h.mask(*p.mask);
      break;
    }
    case MessageKind::masked_upload: {
      const auto& p = std::get<MaskedUpload>(msg.payload);
      h.matrix(p.smashed);
      h.vec(p.label);
      h.u64(p.noised ? 1 : 0);
      h.f64(p.mask_fraction);
      break;
    }
    case MessageKind::mixed_batch: {
      const auto& p = std::get<MixedBatch>(msg.payload);
      h.matrix(p.smashed.values);
      h.f64(p.smashed.delta);
      h.vec(p.label);
      for (const auto& c : p.provenance) {
        h.u64(c.client);
        h.f64(c.ratio);
        if (c.mask) h.mask(*c.mask);
      }
      break;
    }
    case MessageKind::cut_gradient:
    case MessageKind::split_gradient: {
      h.matrix(std::get<GradientPayload>(msg.payload).grad);
      break;
    }
  }
  return h.h;
}

void write_trace_ndjson(std::ostream& out, const std::vector<RoundMessage>& trace,
                        bool include_payload) {
  char digest_hex[17];
  for (const auto& msg : trace) {
    nlohmann::json j{
        {"kind", message_kind_name(msg.kind)},
        {"round", msg.round},
        {"group", msg.group},
        {"sender", {{"role", role_name(msg.sender.role)}, {"index", msg.sender.index}}},
        {"receiver", {{"role", role_name(msg.receiver.role)}, {"index", msg.receiver.index}}},
    };
    std::snprintf(digest_hex, sizeof digest_hex, "%016llx",
                  static_cast<unsigned long long>(payload_digest(msg)));
    j["digest"] = digest_hex;
    if (include_payload) j["payload"] = payload_to_json(msg);
    out << j.dump() << '\n';
  }
}

void write_metrics_csv_header(std::ostream& out) { out << "round,group,loss,acc,grad_norm_mean\n"; }

void write_metrics_csv(std::ostream& out, const std::vector<RoundMetrics>& rows) {
  char line[256];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%u,%u,%.17g,%.17g,%.17g\n", r.round, r.group, r.loss,
                  r.acc, r.grad_norm_mean);
    out << line;
  }
}

double evaluate_accuracy(const ProtocolState& state,
                         const std::vector<std::vector<Sample>>& per_client_data) {
  std::size_t correct = 0, total = 0;
  for (std::size_t ci = 0; ci < per_client_data.size(); ++ci) {
    for (const Sample& sample : per_client_data[ci]) {
      MixedBatch b;
      b.smashed = client_forward(sample.input, state.clients[ci]);
      b.label = sample.label.values;
      b.provenance = {Contribution{static_cast<std::uint32_t>(ci), 1.0, std::nullopt}};
      const ServerForward fwd = server_forward(b, state.server);
      correct += argmax(fwd.probs) == argmax(sample.label.values) ? 1 : 0;
      total += 1;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace cutmixsl
