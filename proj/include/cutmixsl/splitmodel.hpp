#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "cutmixsl/core.hpp"
#include "cutmixsl/mechanisms.hpp"

namespace cutmixsl {

// Lower model segment: per-patch affine map followed by a scaled logistic
// squash, so every cut-layer activation lies in [0, delta] structurally.
struct ClientSegment {
  Matrix embed_w;                // [patch_dim x feat_dim]
  std::vector<double> embed_b;   // [feat_dim]
  double delta = 1.0;
};

// Upper model segment: one rectified hidden layer over the flattened mixed
// tensor, then a linear classifier head.
struct ServerSegment {
  Matrix hidden_w;               // [n_patches*feat_dim x hidden]
  std::vector<double> hidden_b;  // [hidden]
  Matrix out_w;                  // [hidden x classes]
  std::vector<double> out_b;     // [classes]
};

// One training example: raw patch tensor plus its one-hot label.
struct Sample {
  Matrix input;  // [n_patches x patch_dim]
  OneHotLabel label;
};

ClientSegment make_client_segment(std::size_t patch_dim, std::size_t feat_dim, double delta,
                                  double init_scale, RngStream& rng);
ServerSegment make_server_segment(std::size_t n_patches, std::size_t feat_dim,
                                  std::size_t hidden, std::size_t classes, double init_scale,
                                  RngStream& rng);

// Forward state a client must keep to backpropagate the split gradient it
// receives later in the round.
struct ClientForwardCache {
  Matrix input;         // [n_patches x patch_dim]
  SmashedData smashed;  // squashed activations
  std::uint32_t round = 0;
};

SmashedData client_forward(const Matrix& input, const ClientSegment& seg);
ClientForwardCache client_forward_cached(const Matrix& input, const ClientSegment& seg,
                                         std::uint32_t round);

struct ServerForward {
  std::vector<double> hidden;  // post-rectifier
  std::vector<double> logits;
  std::vector<double> probs;
  std::vector<double> target;  // renormalized soft target actually used
  double loss = 0.0;
};

// Flatten -> rectified hidden layer -> logits -> softmax cross-entropy
// against the (renormalized) mixed label.
ServerForward server_forward(const MixedBatch& batch, const ServerSegment& seg);

struct ServerGrads {
  Matrix hidden_w_g;
  std::vector<double> hidden_b_g;
  Matrix out_w_g;
  std::vector<double> out_b_g;
  Matrix cut_grad;  // [n_patches x feat_dim], gradient wrt the mixed tensor
};

ServerGrads server_backward(const MixedBatch& batch, const ServerSegment& seg,
                            const ServerForward& fwd);

struct ClientGrads {
  Matrix embed_w_g;
  std::vector<double> embed_b_g;
};

// Chain rule through the squash and the affine map; expected_round must
// match the cache's round.
ClientGrads client_backward(const Matrix& split_grad, const ClientForwardCache& cache,
                            const ClientSegment& seg, std::uint32_t expected_round);

void sgd_step(ClientSegment& seg, const ClientGrads& grads, double lr);
void sgd_step(ServerSegment& seg, const ServerGrads& grads, double lr);

// Flat binary weight format: magic "CMSL", version u32, then shape-prefixed
// little-endian 64-bit floats per tensor, in declaration order.
void save_model(std::ostream& out, const std::vector<ClientSegment>& clients,
                const ServerSegment& server);
void load_model(std::istream& in, std::vector<ClientSegment>& clients, ServerSegment& server);
void save_model_file(const std::string& path, const std::vector<ClientSegment>& clients,
                     const ServerSegment& server);
void load_model_file(const std::string& path, std::vector<ClientSegment>& clients,
                     ServerSegment& server);

}  // namespace cutmixsl
