#include "cutmixsl/splitmodel.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "cutmixsl/errors.hpp"

namespace cutmixsl {

namespace {

Matrix random_matrix(std::size_t rows, std::size_t cols, double scale, RngStream& rng) {
  Matrix m(rows, cols);
  for (double& v : m.data) v = scale * rng.normal(1.0);
  return m;
}

std::vector<double> random_vector(std::size_t n, double scale, RngStream& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = scale * rng.normal(1.0);
  return v;
}

double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

ClientSegment make_client_segment(std::size_t patch_dim, std::size_t feat_dim, double delta,
                                  double init_scale, RngStream& rng) {
  if (patch_dim < 1 || feat_dim < 1 || !(delta > 0.0))
    throw ParameterError("make_client_segment: bad shape or delta");
  return ClientSegment{random_matrix(patch_dim, feat_dim, init_scale, rng),
                       random_vector(feat_dim, init_scale, rng), delta};
}

ServerSegment make_server_segment(std::size_t n_patches, std::size_t feat_dim,
                                  std::size_t hidden, std::size_t classes, double init_scale,
                                  RngStream& rng) {
  if (n_patches < 1 || feat_dim < 1 || hidden < 1 || classes < 1)
    throw ParameterError("make_server_segment: bad shape");
  return ServerSegment{random_matrix(n_patches * feat_dim, hidden, init_scale, rng),
                       random_vector(hidden, init_scale, rng),
                       random_matrix(hidden, classes, init_scale, rng),
                       random_vector(classes, init_scale, rng)};
}

SmashedData client_forward(const Matrix& input, const ClientSegment& seg) {
  if (input.cols != seg.embed_w.rows)
    throw DimensionError("client_forward: patch dim does not match embedding");
  const std::size_t feat = seg.embed_w.cols;
  Matrix s(input.rows, feat);
  for (std::size_t p = 0; p < input.rows; ++p) {
    for (std::size_t f = 0; f < feat; ++f) {
      double z = seg.embed_b[f];
      for (std::size_t r = 0; r < input.cols; ++r) z += input(p, r) * seg.embed_w(r, f);
      s(p, f) = seg.delta * logistic(z);
    }
  }
  return SmashedData{std::move(s), seg.delta};
}

ClientForwardCache client_forward_cached(const Matrix& input, const ClientSegment& seg,
                                         std::uint32_t round) {
  return ClientForwardCache{input, client_forward(input, seg), round};
}

ServerForward server_forward(const MixedBatch& batch, const ServerSegment& seg) {
  const Matrix& v = batch.smashed.values;
  if (!all_finite(v.data)) throw NumericError("server_forward: non-finite mixed tensor");
  if (v.size() != seg.hidden_w.rows)
    throw DimensionError("server_forward: flattened size does not match hidden layer");
  const std::size_t hidden = seg.hidden_w.cols;
  const std::size_t classes = seg.out_w.cols;
  if (batch.label.size() != classes)
    throw DimensionError("server_forward: label length does not match classes");

  ServerForward out;
  out.hidden.assign(hidden, 0.0);
  for (std::size_t j = 0; j < hidden; ++j) {
    double z = seg.hidden_b[j];
    for (std::size_t e = 0; e < v.size(); ++e) z += v.data[e] * seg.hidden_w(e, j);
    out.hidden[j] = z > 0.0 ? z : 0.0;
  }
  out.logits.assign(classes, 0.0);
  for (std::size_t c = 0; c < classes; ++c) {
    double z = seg.out_b[c];
    for (std::size_t j = 0; j < hidden; ++j) z += out.hidden[j] * seg.out_w(j, c);
    out.logits[c] = z;
  }

  // Noisy unclamped labels can lose normalization; cross-entropy against a
  // non-distribution has no calibration meaning, so renormalize (uniform
  // fallback when the mass is degenerate).
  out.target = batch.label;
  double mass = 0.0;
  for (const double t : out.target) mass += t;
  if (mass > 1e-9) {
    for (double& t : out.target) t /= mass;
  } else {
    for (double& t : out.target) t = 1.0 / static_cast<double>(classes);
  }

  double max_logit = out.logits[0];
  for (const double z : out.logits) max_logit = std::max(max_logit, z);
  double lse = 0.0;
  for (const double z : out.logits) lse += std::exp(z - max_logit);
  lse = std::log(lse) + max_logit;
  out.probs.assign(classes, 0.0);
  double loss = 0.0;
  for (std::size_t c = 0; c < classes; ++c) {
    out.probs[c] = std::exp(out.logits[c] - lse);
    loss += out.target[c] * (lse - out.logits[c]);
  }
  out.loss = loss;
  if (!std::isfinite(out.loss)) throw NumericError("server_forward: non-finite loss");
  return out;
}

ServerGrads server_backward(const MixedBatch& batch, const ServerSegment& seg,
                            const ServerForward& fwd) {
  const Matrix& v = batch.smashed.values;
  const std::size_t hidden = seg.hidden_w.cols;
  const std::size_t classes = seg.out_w.cols;

  std::vector<double> dlogits(classes);
  for (std::size_t c = 0; c < classes; ++c) dlogits[c] = fwd.probs[c] - fwd.target[c];

  ServerGrads g;
  g.out_w_g = Matrix(hidden, classes);
  g.out_b_g = dlogits;
  std::vector<double> dhidden(hidden, 0.0);
  for (std::size_t j = 0; j < hidden; ++j) {
    for (std::size_t c = 0; c < classes; ++c) {
      g.out_w_g(j, c) = fwd.hidden[j] * dlogits[c];
      dhidden[j] += seg.out_w(j, c) * dlogits[c];
    }
    if (fwd.hidden[j] <= 0.0) dhidden[j] = 0.0;  // rectifier gate
  }
  g.hidden_w_g = Matrix(v.size(), hidden);
  g.hidden_b_g = dhidden;
  g.cut_grad = Matrix(v.rows, v.cols, 0.0);
  for (std::size_t e = 0; e < v.size(); ++e) {
    double dv = 0.0;
    for (std::size_t j = 0; j < hidden; ++j) {
      g.hidden_w_g(e, j) = v.data[e] * dhidden[j];
      dv += seg.hidden_w(e, j) * dhidden[j];
    }
    g.cut_grad.data[e] = dv;
  }
  return g;
}

ClientGrads client_backward(const Matrix& split_grad, const ClientForwardCache& cache,
                            const ClientSegment& seg, std::uint32_t expected_round) {
  if (cache.round != expected_round)
    throw ProtocolError("client_backward: forward cache is from a different round");
  const Matrix& s = cache.smashed.values;
  if (!split_grad.same_shape(s))
    throw DimensionError("client_backward: gradient shape does not match activations");
  const std::size_t feat = seg.embed_w.cols;
  const double delta = seg.delta;

  ClientGrads g;
  g.embed_w_g = Matrix(seg.embed_w.rows, feat, 0.0);
  g.embed_b_g.assign(feat, 0.0);
  for (std::size_t p = 0; p < s.rows; ++p) {
    for (std::size_t f = 0; f < feat; ++f) {
      // d s / d z for s = delta * logistic(z) is s (delta - s) / delta.
      const double dz = split_grad(p, f) * s(p, f) * (delta - s(p, f)) / delta;
      g.embed_b_g[f] += dz;
      for (std::size_t r = 0; r < cache.input.cols; ++r)
        g.embed_w_g(r, f) += cache.input(p, r) * dz;
    }
  }
  return g;
}

void sgd_step(ClientSegment& seg, const ClientGrads& grads, double lr) {
  if (lr < 0.0) throw ParameterError("sgd_step: learning rate must be >= 0");
  for (std::size_t e = 0; e < seg.embed_w.size(); ++e)
    seg.embed_w.data[e] -= lr * grads.embed_w_g.data[e];
  for (std::size_t f = 0; f < seg.embed_b.size(); ++f) seg.embed_b[f] -= lr * grads.embed_b_g[f];
}

void sgd_step(ServerSegment& seg, const ServerGrads& grads, double lr) {
  if (lr < 0.0) throw ParameterError("sgd_step: learning rate must be >= 0");
  for (std::size_t e = 0; e < seg.hidden_w.size(); ++e)
    seg.hidden_w.data[e] -= lr * grads.hidden_w_g.data[e];
  for (std::size_t j = 0; j < seg.hidden_b.size(); ++j)
    seg.hidden_b[j] -= lr * grads.hidden_b_g[j];
  for (std::size_t e = 0; e < seg.out_w.size(); ++e)
    seg.out_w.data[e] -= lr * grads.out_w_g.data[e];
  for (std::size_t c = 0; c < seg.out_b.size(); ++c) seg.out_b[c] -= lr * grads.out_b_g[c];
}

namespace {

constexpr char kMagic[4] = {'C', 'M', 'S', 'L'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw ProtocolError("model file: truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

void write_f64(std::ostream& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 8);
}

double read_f64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) throw ProtocolError("model file: truncated");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

void write_matrix(std::ostream& out, const Matrix& m) {
  write_u32(out, static_cast<std::uint32_t>(m.rows));
  write_u32(out, static_cast<std::uint32_t>(m.cols));
  for (const double v : m.data) write_f64(out, v);
}

Matrix read_matrix(std::istream& in) {
  const std::uint32_t rows = read_u32(in);
  const std::uint32_t cols = read_u32(in);
  Matrix m(rows, cols);
  for (double& v : m.data) v = read_f64(in);
  return m;
}

void write_vector(std::ostream& out, const std::vector<double>& v) {
  write_u32(out, static_cast<std::uint32_t>(v.size()));
  write_u32(out, 1);
  for (const double x : v) write_f64(out, x);
}

std::vector<double> read_vector(std::istream& in) {
  const std::uint32_t rows = read_u32(in);
  const std::uint32_t cols = read_u32(in);
  if (cols != 1) throw ProtocolError("model file: expected a column vector");
  std::vector<double> v(rows);
  for (double& x : v) x = read_f64(in);
  return v;
}

}  // namespace

void save_model(std::ostream& out, const std::vector<ClientSegment>& clients,
                const ServerSegment& server) {
  out.write(kMagic, 4);
  write_u32(out, kVersion);
  write_u32(out, static_cast<std::uint32_t>(clients.size()));
  for (const auto& c : clients) {
    write_matrix(out, c.embed_w);
    write_vector(out, c.embed_b);
    write_f64(out, c.delta);
  }
  write_matrix(out, server.hidden_w);
  write_vector(out, server.hidden_b);
  write_matrix(out, server.out_w);
  write_vector(out, server.out_b);
}

void load_model(std::istream& in, std::vector<ClientSegment>& clients, ServerSegment& server) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw ProtocolError("model file: bad magic bytes");
  if (read_u32(in) != kVersion) throw ProtocolError("model file: unsupported version");
  const std::uint32_t n = read_u32(in);
  clients.clear();
  clients.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    ClientSegment c;
    c.embed_w = read_matrix(in);
    c.embed_b = read_vector(in);
    c.delta = read_f64(in);
    clients.push_back(std::move(c));
  }
  server.hidden_w = read_matrix(in);
  server.hidden_b = read_vector(in);
  server.out_w = read_matrix(in);
  server.out_b = read_vector(in);
}

void save_model_file(const std::string& path, const std::vector<ClientSegment>& clients,
                     const ServerSegment& server) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ProtocolError("save_model_file: cannot open " + path);
  save_model(out, clients, server);
}

void load_model_file(const std::string& path, std::vector<ClientSegment>& clients,
                     ServerSegment& server) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ProtocolError("load_model_file: cannot open " + path);
  load_model(in, clients, server);
}

}  // namespace cutmixsl
