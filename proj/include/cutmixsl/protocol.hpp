#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "cutmixsl/mechanisms.hpp"
#include "cutmixsl/splitmodel.hpp"

namespace cutmixsl {

enum class MessageKind : std::uint8_t {
  mask_assignment,
  masked_upload,
  mixed_batch,
  cut_gradient,
  split_gradient,
};

std::string message_kind_name(MessageKind k);

struct Endpoint {
  Role role = Role::client;
  std::uint32_t index = 0;
};

// mixer -> client: patch mask for CutMix-style mixing (absent for Mixup,
// where only the convex weight is assigned).
struct MaskAssignment {
  std::optional<PatchMask> mask;
  double ratio = 1.0;
};

// client -> mixer: the released pair, with structural privacy metadata.
struct MaskedUpload {
  Matrix smashed;
  std::vector<double> label;
  bool noised = false;
  double mask_fraction = 1.0;  // share of patches (or convex weight) disclosed
};

// server -> mixer and mixer -> client gradients share one payload shape.
struct GradientPayload {
  Matrix grad;
};

using MessagePayload = std::variant<MaskAssignment, MaskedUpload, MixedBatch, GradientPayload>;

struct RoundMessage {
  MessageKind kind = MessageKind::mask_assignment;
  std::uint32_t round = 0;
  std::uint32_t group = 0;
  Endpoint sender;
  Endpoint receiver;
  MessagePayload payload;
};

// Throws InvariantError when the payload alternative does not match the kind.
void validate_message(const RoundMessage& msg);

// Disjoint clusters of exactly k clients; n mod k leftovers sit the round out.
struct Grouping {
  std::vector<std::vector<std::uint32_t>> groups;
  std::uint32_t k = 1;
};

Grouping cluster_clients(std::uint32_t n, std::uint32_t k, RngStream& rng);

struct ProtocolConfig {
  std::uint32_t n = 2;
  std::uint32_t k = 2;
  double alpha_m = 2.0;
  Mechanism mechanism = Mechanism::dp_cutmixsl;
  MechanismConfig mech;
  double lr = 0.05;
  // Worst-case knobs for the label-leak study: broadcast one averaged cut
  // gradient to the whole group instead of mask-split pieces, and average the
  // client segments after every round.
  bool avg_cut_grad = false;
  bool weight_avg = false;
};

struct ProtocolState {
  std::uint32_t round = 0;
  std::vector<ClientSegment> clients;
  ServerSegment server;
  std::uint64_t seed = 0;
  ProtocolConfig config;
};

ProtocolState make_protocol_state(const ProtocolConfig& config, std::uint64_t seed,
                                  std::size_t n_patches, std::size_t patch_dim,
                                  std::size_t feat_dim, std::size_t hidden,
                                  std::size_t classes, double delta, double init_scale);

struct RoundMetrics {
  std::uint32_t round = 0;
  std::uint32_t group = 0;
  double loss = 0.0;
  double acc = 0.0;
  double grad_norm_mean = 0.0;
};

struct RoundResult {
  std::vector<RoundMetrics> metrics;   // one row per group
  std::vector<RoundMessage> trace;     // full ordered message trace
};

// One forward + backward round over every group; mutates the weights in
// place and advances the round counter. Deterministic given (seed, round).
RoundResult run_round(ProtocolState& state, const std::vector<Sample>& batch);

// M_i ⊙ grad per mask; pieces sum to grad bitwise (masking is selection).
std::vector<Matrix> split_cut_gradient(const Matrix& grad, const std::vector<PatchMask>& masks);

// Structural trace checks used by tests and the verify suite.
bool trace_in_schedule_order(const std::vector<RoundMessage>& trace);
// No client->server message exists, and every client upload is flagged as
// noised/masked consistently with the config.
bool trace_respects_privacy_boundary(const std::vector<RoundMessage>& trace,
                                     const ProtocolConfig& config);

// Newline-delimited JSON: kind, round, group, sender, receiver, payload
// digest (FNV-1a over the payload bytes) and optionally the full payload.
void write_trace_ndjson(std::ostream& out, const std::vector<RoundMessage>& trace,
                        bool include_payload);
std::uint64_t payload_digest(const RoundMessage& msg);

// CSV rows under the header `round,group,loss,acc,grad_norm_mean`.
void write_metrics_csv_header(std::ostream& out);
void write_metrics_csv(std::ostream& out, const std::vector<RoundMetrics>& rows);

// Clean per-sample accuracy of the current weights (no noise, no mixing).
double evaluate_accuracy(const ProtocolState& state,
                         const std::vector<std::vector<Sample>>& per_client_data);

}  // namespace cutmixsl
