#pragma once
/*
 * Twin-stream RUL network. One parameter set serves both domains.
 *
 *   X (b,f,K) --encode--> E (b,M) --squeeze--> C (b,B) --expand--> E~ (b,M)
 *            --decode--> O (b,P) --head--> Y^ (b,1)
 *   C, X[:, :, 0] --reconstruct--> X^ (b,f,K)
 *
 * The encoder runs self-attention over the f sensor rows and, separately,
 * over the K time steps; the two token sets are concatenated, projected and
 * flattened, so M = (f + K) * attn_dim. The decoder lets one learned query
 * token attend over E~ viewed as the same (f + K) token sequence.
 */

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "lamanet/ops.hpp"

namespace lamanet {

enum class ReconCell { gru, lstm, rnn };

inline const char* to_string(ReconCell c) {
  switch (c) {
    case ReconCell::gru: return "gru";
    case ReconCell::lstm: return "lstm";
    case ReconCell::rnn: return "rnn";
  }
  return "?";
}

inline ReconCell parse_recon_cell(const std::string& s) {
  if (s == "gru" || s == "GRU") return ReconCell::gru;
  if (s == "lstm" || s == "LSTM") return ReconCell::lstm;
  if (s == "rnn" || s == "RNN") return ReconCell::rnn;
  throw std::invalid_argument("unknown reconstruction cell '" + s + "'");
}

struct ModelConfig {
  std::size_t features = 24;
  std::size_t window = 40;
  std::size_t attn_dim = 32;
  std::size_t heads = 4;
  std::size_t encoder_layers = 3;
  std::size_t decoder_layers = 1;
  std::size_t ffn_dim = 64;
  std::size_t squeeze_hidden = 500;
  std::size_t bottleneck = 200;
  std::size_t projection_dim = 32;
  ReconCell recon_cell = ReconCell::gru;
  std::size_t recon_hidden = 1;
  std::size_t discriminator_hidden = 64;

  std::size_t tokens() const { return features + window; }
  std::size_t latent_dim() const { return tokens() * attn_dim; }

  void validate() const {
    auto positive = [](std::size_t v, const char* name) {
      if (v == 0) throw std::invalid_argument(std::string("model config: ") + name + " must be positive");
    };
    positive(features, "features");
    positive(window, "window");
    positive(attn_dim, "attn_dim");
    positive(heads, "heads");
    positive(encoder_layers, "encoder_layers");
    positive(decoder_layers, "decoder_layers");
    positive(ffn_dim, "ffn_dim");
    positive(squeeze_hidden, "squeeze_hidden");
    positive(bottleneck, "bottleneck");
    positive(projection_dim, "projection_dim");
    positive(recon_hidden, "recon_hidden");
    positive(discriminator_hidden, "discriminator_hidden");
    if (attn_dim % heads != 0) throw std::invalid_argument("model config: heads must divide attn_dim");
    if (bottleneck >= latent_dim()) {
      throw std::invalid_argument("model config: bottleneck " + std::to_string(bottleneck) +
                                  " must be smaller than the encoder latent " + std::to_string(latent_dim()));
    }
  }
};

/// Named, ordered learnable tensors.
class ParamStore {
 public:
  Tensor& add(const std::string& name, Shape shape, std::vector<double> values) {
    if (index_.count(name)) throw std::logic_error("duplicate parameter " + name);
    index_[name] = params_.size();
    params_.emplace_back(name, Tensor::from(std::move(shape), std::move(values), true));
    return params_.back().second;
  }
  const Tensor& operator[](const std::string& name) const { return params_.at(index_.at(name)).second; }
  Tensor& operator[](const std::string& name) { return params_.at(index_.at(name)).second; }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::vector<std::pair<std::string, Tensor>>& entries() { return params_; }
  const std::vector<std::pair<std::string, Tensor>>& entries() const { return params_; }
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : params_) n += t.numel();
    return n;
  }
  void zero_grad() {
    for (auto& [_, t] : params_) t.zero_grad();
  }
  std::vector<Tensor> tensors() const {
    std::vector<Tensor> out;
    for (const auto& [_, t] : params_) out.push_back(t);
    return out;
  }

 private:
  std::vector<std::pair<std::string, Tensor>> params_;
  std::map<std::string, std::size_t> index_;
};

struct LatentBundle {
  Tensor E;        // (b, M)
  Tensor C;        // (b, B)
  Tensor E_tilde;  // (b, M)
  Tensor O;        // (b, P)
  Tensor Y_hat;    // (b, 1)
};

class Model {
 public:
  Model(ModelConfig cfg, std::uint64_t init_seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::mt19937_64 rng(init_seed);
    build(rng);
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  /// Parameters that only the reconstruction or adversarial losses reach.
  static bool is_da_only(const std::string& name) {
    return name.rfind("recon.", 0) == 0 || name.rfind("disc.", 0) == 0;
  }

  // ---- forward pieces -----------------------------------------------------

  Tensor encode(const Tensor& x) const {
    check_input(x);
    const std::size_t b = x.dim(0);
    // Sensor aspect: each sensor row (length K) is a token.
    Tensor s = add_bias(matmul(x, p("enc.sensor.in.w")), p("enc.sensor.in.b"));
    for (std::size_t l = 0; l < cfg_.encoder_layers; ++l) s = encoder_layer(s, "enc.sensor.l" + std::to_string(l));
    // Time aspect: each time step (f sensors) is a token, plus learned positions.
    Tensor t = add_bias(matmul(transpose(x), p("enc.time.in.w")), p("enc.time.in.b"));
    t = add(t, broadcast_to(p("enc.time.pos"), t.shape()));
    for (std::size_t l = 0; l < cfg_.encoder_layers; ++l) t = encoder_layer(t, "enc.time.l" + std::to_string(l));
    Tensor fused = add_bias(matmul(concat({s, t}, 1), p("enc.fuse.w")), p("enc.fuse.b"));
    return reshape(fused, {b, cfg_.latent_dim()});
  }

  Tensor squeeze(const Tensor& e) const {
    check_rows(e, cfg_.latent_dim(), "squeeze");
    Tensor h = relu(add_bias(matmul(e, p("squeeze.0.w")), p("squeeze.0.b")));
    return relu(add_bias(matmul(h, p("squeeze.1.w")), p("squeeze.1.b")));
  }

  Tensor expand(const Tensor& c) const {
    check_rows(c, cfg_.bottleneck, "expand");
    Tensor h = relu(add_bias(matmul(c, p("expand.0.w")), p("expand.0.b")));
    return relu(add_bias(matmul(h, p("expand.1.w")), p("expand.1.b")));
  }

  /// Decoder representation O.
  Tensor decode(const Tensor& e_tilde) const {
    check_rows(e_tilde, cfg_.latent_dim(), "decode");
    const std::size_t b = e_tilde.dim(0);
    Tensor memory = reshape(e_tilde, {b, cfg_.tokens(), cfg_.attn_dim});
    Tensor q = broadcast_to(p("dec.query"), {b, 1, cfg_.attn_dim});
    for (std::size_t l = 0; l < cfg_.decoder_layers; ++l) {
      const std::string pre = "dec.l" + std::to_string(l);
      q = add(q, attention(q, memory, pre + ".attn"));
      q = add(q, feed_forward(q, pre + ".ffn"));
    }
    return add_bias(matmul(reshape(q, {b, cfg_.attn_dim}), p("dec.out.w")), p("dec.out.b"));
  }

  /// sigmoid(O W_R + b_R)
  Tensor head(const Tensor& o) const {
    check_rows(o, cfg_.projection_dim, "head");
    return sigmoid(add_bias(matmul(o, p("head.w")), p("head.b")));
  }

  std::pair<Tensor, Tensor> decode_predict(const Tensor& e_tilde) const {
    Tensor o = decode(e_tilde);
    return {o, head(o)};
  }

  /// C -> Y^ : the map the smoothness penalty perturbs.
  Tensor predict_from_bottleneck(const Tensor& c) const { return head(decode(expand(c))); }

  LatentBundle forward(const Tensor& x) const {
    LatentBundle out;
    out.E = encode(x);
    out.C = squeeze(out.E);
    out.E_tilde = expand(out.C);
    std::tie(out.O, out.Y_hat) = decode_predict(out.E_tilde);
    return out;
  }

  /// Rebuilds the window from C, starting at the window's first time step and
  /// feeding each reconstructed step back in as the next input.
  Tensor reconstruct(const Tensor& c, const Tensor& x_first) const {
    check_rows(c, cfg_.bottleneck, "reconstruct");
    check_rows(x_first, cfg_.features, "reconstruct");
    const std::size_t b = c.dim(0);
    if (x_first.dim(0) != b) throw ShapeError("reconstruct: batch mismatch");
    Tensor h = sigmoid(add_bias(matmul(c, p("recon.init.w")), p("recon.init.b")));
    Tensor cell_state = Tensor::zeros({b, cfg_.recon_hidden});
    Tensor input = x_first;
    std::vector<Tensor> steps;
    steps.reserve(cfg_.window);
    for (std::size_t k = 0; k < cfg_.window; ++k) {
      h = recurrent_step(input, h, cell_state);
      input = add_bias(matmul(h, p("recon.out.w")), p("recon.out.b"));
      steps.push_back(reshape(input, {b, cfg_.features, 1}));
    }
    return steps.size() == 1 ? steps.front() : concat(steps, 2);
  }

  /// Logit of P(source | latent) for the adversarial baseline; the input is
  /// expected to have passed through gradient_reversal already.
  Tensor discriminate(const Tensor& latent) const {
    check_rows(latent, cfg_.bottleneck, "discriminate");
    Tensor h = relu(add_bias(matmul(latent, p("disc.0.w")), p("disc.0.b")));
    return add_bias(matmul(h, p("disc.1.w")), p("disc.1.b"));
  }

 private:
  const Tensor& p(const std::string& name) const { return params_[name]; }

  void check_input(const Tensor& x) const {
    if (x.rank() != 3 || x.dim(1) != cfg_.features || x.dim(2) != cfg_.window) {
      throw ShapeError("encode: expected (batch, " + std::to_string(cfg_.features) + ", " +
                       std::to_string(cfg_.window) + "), got " + to_string(x.shape()));
    }
  }

  static void check_rows(const Tensor& x, std::size_t width, const char* op) {
    if (x.rank() != 2 || x.dim(1) != width) {
      throw ShapeError(std::string(op) + ": expected (batch, " + std::to_string(width) + "), got " +
                       to_string(x.shape()));
    }
  }

  Tensor attention(const Tensor& q_in, const Tensor& kv_in, const std::string& pre) const {
    const Tensor q = add_bias(matmul(q_in, p(pre + ".q.w")), p(pre + ".q.b"));
    const Tensor k = add_bias(matmul(kv_in, p(pre + ".k.w")), p(pre + ".k.b"));
    const Tensor v = add_bias(matmul(kv_in, p(pre + ".v.w")), p(pre + ".v.b"));
    const std::size_t dh = cfg_.attn_dim / cfg_.heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Tensor> heads;
    heads.reserve(cfg_.heads);
    for (std::size_t h = 0; h < cfg_.heads; ++h) {
      const Tensor qh = slice(q, 2, h * dh, (h + 1) * dh);
      const Tensor kh = slice(k, 2, h * dh, (h + 1) * dh);
      const Tensor vh = slice(v, 2, h * dh, (h + 1) * dh);
      const Tensor weights = softmax(scale(matmul(qh, transpose(kh)), inv_sqrt), -1);
      heads.push_back(matmul(weights, vh));
    }
    const Tensor merged = heads.size() == 1 ? heads.front() : concat(heads, 2);
    return add_bias(matmul(merged, p(pre + ".o.w")), p(pre + ".o.b"));
  }

  Tensor feed_forward(const Tensor& x, const std::string& pre) const {
    const Tensor h = relu(add_bias(matmul(x, p(pre + ".0.w")), p(pre + ".0.b")));
    return add_bias(matmul(h, p(pre + ".1.w")), p(pre + ".1.b"));
  }

  Tensor encoder_layer(Tensor x, const std::string& pre) const {
    x = add(x, attention(x, x, pre + ".attn"));
    return add(x, feed_forward(x, pre + ".ffn"));
  }

  Tensor recurrent_step(const Tensor& x, const Tensor& h, Tensor& cell_state) const {
    const std::size_t H = cfg_.recon_hidden;
    const Tensor gi = add_bias(matmul(x, p("recon.cell.ih.w")), p("recon.cell.ih.b"));
    const Tensor gh = add_bias(matmul(h, p("recon.cell.hh.w")), p("recon.cell.hh.b"));
    auto part = [H](const Tensor& t, std::size_t i) { return slice(t, 1, i * H, (i + 1) * H); };
    switch (cfg_.recon_cell) {
      case ReconCell::gru: {
        const Tensor z = sigmoid(add(part(gi, 0), part(gh, 0)));
        const Tensor r = sigmoid(add(part(gi, 1), part(gh, 1)));
        const Tensor n = tanh(add(part(gi, 2), mul(r, part(gh, 2))));
        return add(n, mul(z, sub(h, n)));  // (1 - z) n + z h
      }
      case ReconCell::lstm: {
        const Tensor g = add(gi, gh);
        const Tensor i = sigmoid(part(g, 0));
        const Tensor f = sigmoid(part(g, 1));
        const Tensor cand = tanh(part(g, 2));
        const Tensor o = sigmoid(part(g, 3));
        cell_state = add(mul(f, cell_state), mul(i, cand));
        return mul(o, tanh(cell_state));
      }
      case ReconCell::rnn:
        return tanh(add(gi, gh));
    }
    throw std::logic_error("unreachable");
  }

  static std::size_t gate_count(ReconCell c) {
    return c == ReconCell::gru ? 3 : c == ReconCell::lstm ? 4 : 1;
  }

  // ---- initialization -----------------------------------------------------

  void linear(std::mt19937_64& rng, const std::string& pre, std::size_t in, std::size_t out) {
    params_.add(pre + ".w", {in, out}, glorot(rng, in, out, in * out));
    params_.add(pre + ".b", {out}, std::vector<double>(out, 0.0));
  }

  static std::vector<double> glorot(std::mt19937_64& rng, std::size_t fan_in, std::size_t fan_out, std::size_t n) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> u(-limit, limit);
    std::vector<double> v(n);
    for (auto& x : v) x = u(rng);
    return v;
  }

  void attention_block(std::mt19937_64& rng, const std::string& pre) {
    for (const char* m : {".q", ".k", ".v", ".o"}) linear(rng, pre + m, cfg_.attn_dim, cfg_.attn_dim);
  }

  void ffn_block(std::mt19937_64& rng, const std::string& pre) {
    linear(rng, pre + ".0", cfg_.attn_dim, cfg_.ffn_dim);
    linear(rng, pre + ".1", cfg_.ffn_dim, cfg_.attn_dim);
  }

  void build(std::mt19937_64& rng) {
    const std::size_t d = cfg_.attn_dim;
    linear(rng, "enc.sensor.in", cfg_.window, d);
    for (std::size_t l = 0; l < cfg_.encoder_layers; ++l) {
      attention_block(rng, "enc.sensor.l" + std::to_string(l) + ".attn");
      ffn_block(rng, "enc.sensor.l" + std::to_string(l) + ".ffn");
    }
    linear(rng, "enc.time.in", cfg_.features, d);
    {
      std::normal_distribution<double> n(0.0, 0.02);
      std::vector<double> pos(cfg_.window * d);
      for (auto& v : pos) v = n(rng);
      params_.add("enc.time.pos", {cfg_.window, d}, std::move(pos));
    }
    for (std::size_t l = 0; l < cfg_.encoder_layers; ++l) {
      attention_block(rng, "enc.time.l" + std::to_string(l) + ".attn");
      ffn_block(rng, "enc.time.l" + std::to_string(l) + ".ffn");
    }
    linear(rng, "enc.fuse", d, d);

    linear(rng, "squeeze.0", cfg_.latent_dim(), cfg_.squeeze_hidden);
    linear(rng, "squeeze.1", cfg_.squeeze_hidden, cfg_.bottleneck);
    linear(rng, "expand.0", cfg_.bottleneck, cfg_.squeeze_hidden);
    linear(rng, "expand.1", cfg_.squeeze_hidden, cfg_.latent_dim());

    {
      std::normal_distribution<double> n(0.0, 0.02);
      std::vector<double> query(d);
      for (auto& v : query) v = n(rng);
      params_.add("dec.query", {1, d}, std::move(query));
    }
    for (std::size_t l = 0; l < cfg_.decoder_layers; ++l) {
      attention_block(rng, "dec.l" + std::to_string(l) + ".attn");
      ffn_block(rng, "dec.l" + std::to_string(l) + ".ffn");
    }
    linear(rng, "dec.out", d, cfg_.projection_dim);
    linear(rng, "head", cfg_.projection_dim, 1);

    const std::size_t H = cfg_.recon_hidden, gates = gate_count(cfg_.recon_cell);
    linear(rng, "recon.init", cfg_.bottleneck, H);
    linear(rng, "recon.cell.ih", cfg_.features, gates * H);
    linear(rng, "recon.cell.hh", H, gates * H);
    linear(rng, "recon.out", H, cfg_.features);

    linear(rng, "disc.0", cfg_.bottleneck, cfg_.discriminator_hidden);
    linear(rng, "disc.1", cfg_.discriminator_hidden, 1);
  }

  ModelConfig cfg_;
  ParamStore params_;
};

/// Window batch (b, f, K) -> first time step (b, f), as a constant.
inline Tensor first_step(const Tensor& x) {
  const std::size_t b = x.dim(0), f = x.dim(1), K = x.dim(2);
  std::vector<double> out(b * f);
  const auto v = x.values();
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < f; ++j) out[i * f + j] = v[(i * f + j) * K];
  return Tensor::from({b, f}, std::move(out));
}

}  // namespace lamanet
