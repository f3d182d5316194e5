#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "gmvc/errors.hpp"
#include "gmvc/features/mel.hpp"
#include "gmvc/model/batch.hpp"
#include "gmvc/model/config.hpp"
#include "gmvc/nn/graph.hpp"
#include "gmvc/nn/init.hpp"
#include "gmvc/nn/layers.hpp"
#include "gmvc/nn/param_store.hpp"

namespace gmvc::model {

using nn::Var;

inline constexpr double kLogSigmaMin = -7.0;
inline constexpr double kLogSigmaMax = 2.0;

// Shared front end: two kernel-3 convolutions over each chunk's frames, mean
// pooling over time, then two fully connected layers; BN + ReLU after each.
struct FeatureExtractor {
  std::string prefix;
  std::size_t bands = features::kMelBands;
  std::size_t filters = 512;
  std::size_t hidden = 512;
  std::size_t bottleneck = 256;

  nn::Conv1d conv1() const { return {prefix + ".conv1", bands, filters, false}; }
  nn::Conv1d conv2() const { return {prefix + ".conv2", filters, filters, false}; }
  nn::Linear fc1() const { return {prefix + ".fc1", filters, hidden, false}; }
  nn::Linear fc2() const { return {prefix + ".fc2", hidden, bottleneck, false}; }
  nn::BatchNorm bn(int i, std::size_t c) const { return {prefix + ".bn" + std::to_string(i), c}; }

  template <typename T>
  void declare(nn::ParamStore<T>& s) const {
    conv1().declare(s);
    conv2().declare(s);
    fc1().declare(s);
    fc2().declare(s);
    bn(1, filters).declare(s);
    bn(2, filters).declare(s);
    bn(3, hidden).declare(s);
    bn(4, bottleneck).declare(s);
  }

  // frames: (M * 43) x bands  ->  M x bottleneck
  template <typename T>
  Var operator()(nn::Scope<T>& s, Var frames) const {
    auto& g = s.graph;
    const std::size_t T_ = features::kChunkFrames;
    Var h = g.relu(bn(1, filters)(s, conv1()(s, frames, T_)));
    h = g.relu(bn(2, filters)(s, conv2()(s, h, T_)));
    h = g.segment_mean(h, T_);
    h = g.relu(bn(3, hidden)(s, fc1()(s, h)));
    return g.relu(bn(4, bottleneck)(s, fc2()(s, h)));
  }
};

// Softmax-weighted pooling of a sequence: alpha_n = softmax_n f(x_n),
// c = sum_n alpha_n x_n, with f a learned D -> 1 map. Without the learned
// scorer the weights are uniform, 1/N.
struct AttentionPool {
  std::string prefix;
  std::size_t dim = 0;

  nn::Linear scorer() const { return {prefix + ".f", dim, 1, true}; }

  template <typename T>
  void declare(nn::ParamStore<T>& s) const {
    scorer().declare(s);
  }

  template <typename T>
  std::pair<Var, Var> operator()(nn::Scope<T>& s, Var seq, std::size_t steps, bool learned) const {
    auto& g = s.graph;
    Var alpha;
    if (learned) {
      alpha = g.segment_softmax(scorer()(s, seq), steps);
    } else {
      alpha = g.constant(nn::Mat<T>(g.value(seq).rows, 1, T(1) / static_cast<T>(steps)));
    }
    Var c = g.segment_sum(g.mul_rows(seq, alpha), steps);
    return {alpha, c};
  }
};

template <typename T>
struct ForwardOut {
  std::size_t recordings = 0;
  std::size_t steps = 0;
  nn::Mat<T> mu_s, log_sigma_s, z_s;  // (B*N) x D
  nn::Mat<T> mu_t, log_sigma_t, z_t;
  nn::Mat<T> recon;    // (B*N*43) x 96, decoder output before refinement
  nn::Mat<T> refined;  // after the refinement network
  nn::Mat<T> alpha_s, alpha_t;  // (B*N) x 1
  nn::Mat<T> logits_s;          // B x K_s
  nn::Mat<T> logits_t;          // B x K_t
};

enum class Mode { kTrain, kInfer };

// Singer / technique GMVAE with a joint decoder and refinement network.
//
// Train mode samples z = mu + sigma * eps from the supplied generator and uses
// batch statistics in every batch norm; infer mode sets eps = 0 (z = mu) and
// uses running statistics. Classifier inputs and attention scores are built
// from the posterior means.
template <typename T>
class Gmvae {
 public:
  struct Nodes {
    Var mu_s, log_sigma_s, z_s;
    Var mu_t, log_sigma_t, z_t;
    Var recon, refined;
    Var alpha_s, alpha_t;
    Var c_s, c_t;
    Var logits_s, logits_t;
  };

  Gmvae(ModelConfig cfg, std::uint64_t seed) : cfg_(cfg), store_(seed) {
    cfg_.validate();
    declare();
    nn::xavier_init(store_);
  }

  // Wraps an existing parameter store (e.g. a cast copy); it must contain
  // every entry this configuration declares.
  Gmvae(ModelConfig cfg, nn::ParamStore<T> store) : cfg_(cfg), store_(std::move(store)) {
    cfg_.validate();
    const auto before = store_.entries().size();
    declare();
    if (store_.entries().size() != before) throw ShapeError("parameter store does not match model configuration");
  }

  const ModelConfig& config() const { return cfg_; }
  nn::ParamStore<T>& params() { return store_; }
  const nn::ParamStore<T>& params() const { return store_; }

  FeatureExtractor fen() const {
    return {"fen", features::kMelBands, cfg_.conv_filters, cfg_.fen_hidden, cfg_.bottleneck};
  }
  nn::Blstm encoder_rnn(Attribute a) const { return {stream(a, "enc") + ".rnn", cfg_.bottleneck, cfg_.lstm_hidden}; }
  nn::Linear encoder_mu(Attribute a) const { return {stream(a, "enc") + ".mu", 2 * cfg_.lstm_hidden, cfg_.latent_dim}; }
  nn::Linear encoder_log_sigma(Attribute a) const {
    return {stream(a, "enc") + ".log_sigma", 2 * cfg_.lstm_hidden, cfg_.latent_dim};
  }
  AttentionPool attention(Attribute a) const { return {stream(a, "attn"), cfg_.latent_dim}; }
  nn::Linear classifier(Attribute a) const { return {stream(a, "cls"), cfg_.latent_dim, classes(a)}; }
  std::size_t classes(Attribute a) const { return a == Attribute::kSinger ? cfg_.k_singers : cfg_.k_techniques; }
  std::string prior_name(Attribute a) const { return stream(a, "prior") + ".means"; }

  nn::Mat<T> prior_means(Attribute a) const { return store_.matrix(prior_name(a)); }

  // ---- graph builders -----------------------------------------------------

  struct Posterior {
    Var mu, log_sigma, z;
  };

  Posterior encode(nn::Scope<T>& s, Var feats, std::size_t batch, std::size_t steps, Attribute a,
                   std::mt19937_64* rng) const {
    auto& g = s.graph;
    Var h = encoder_rnn(a)(s, feats, batch, steps);
    Var mu = encoder_mu(a)(s, h);
    Var ls = g.clamp(encoder_log_sigma(a)(s, h), static_cast<T>(kLogSigmaMin), static_cast<T>(kLogSigmaMax));
    if (!rng) return {mu, ls, mu};
    nn::Mat<T> eps(batch * steps, cfg_.latent_dim);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (auto& e : eps.data) e = static_cast<T>(normal(*rng));
    Var z = g.add(mu, g.mul(g.exp(ls), g.constant(std::move(eps))));
    return {mu, ls, z};
  }

  std::pair<Var, Var> decode(nn::Scope<T>& s, Var z_s, Var z_t, std::size_t batch, std::size_t steps) const {
    auto& g = s.graph;
    const auto& zs = g.value(z_s);
    const auto& zt = g.value(z_t);
    if (zs.rows != zt.rows) throw ShapeError("decode: singer and technique latents differ in chunk count");
    if (zs.cols != cfg_.latent_dim || zt.cols != cfg_.latent_dim) throw ShapeError("decode: latent width mismatch");
    const std::size_t F = features::kChunkFrames;
    Var h = decoder_rnn()(s, g.concat_cols({z_s, z_t}), batch, steps);
    h = g.relu(nn::BatchNorm{"dec.bn1", cfg_.conv_filters}(s, decoder_fc()(s, h)));
    h = g.repeat_rows(h, F);
    h = g.relu(nn::BatchNorm{"dec.bn2", cfg_.conv_filters}(s, decoder_conv1()(s, h, F)));
    Var recon = g.tanh(decoder_conv2()(s, h, F));

    Var r = g.relu(nn::BatchNorm{"refine.bn1", cfg_.refine_filters}(s, refine_conv(1)(s, recon, F)));
    r = g.relu(nn::BatchNorm{"refine.bn2", cfg_.refine_filters}(s, refine_conv(2)(s, r, F)));
    Var refined = g.tanh(g.add(recon, refine_conv(3)(s, r, F)));
    return {recon, refined};
  }

  Nodes build(nn::Graph<T>& g, const Batch<T>& batch, Mode mode, std::mt19937_64* rng = nullptr) {
    check_batch(batch);
    nn::Scope<T> s{g, store_, mode == Mode::kTrain};
    std::mt19937_64* noise = mode == Mode::kTrain ? rng : nullptr;
    const std::size_t B = batch.recordings;
    const std::size_t N = batch.steps;
    Var x = g.constant(batch.chunks);
    Var feats = fen()(s, x);
    Posterior ps = encode(s, feats, B, N, Attribute::kSinger, noise);
    Posterior pt = encode(s, feats, B, N, Attribute::kTechnique, noise);
    auto [recon, refined] = decode(s, ps.z, pt.z, B, N);
    auto [alpha_s, c_s] = attention(Attribute::kSinger)(s, ps.mu, N, cfg_.use_attention);
    auto [alpha_t, c_t] = attention(Attribute::kTechnique)(s, pt.mu, N, cfg_.use_attention);
    Var logits_s = classifier(Attribute::kSinger)(s, c_s);
    Var logits_t = classifier(Attribute::kTechnique)(s, c_t);
    return {ps.mu, ps.log_sigma, ps.z, pt.mu, pt.log_sigma, pt.z, recon, refined,
            alpha_s, alpha_t, c_s, c_t, logits_s, logits_t};
  }

  // ---- value-level entry points ------------------------------------------

  ForwardOut<T> forward(const Batch<T>& batch, Mode mode, std::mt19937_64* rng = nullptr) {
    nn::Graph<T> g;
    Nodes n = build(g, batch, mode, rng);
    ForwardOut<T> out;
    out.recordings = batch.recordings;
    out.steps = batch.steps;
    out.mu_s = g.value(n.mu_s);
    out.log_sigma_s = g.value(n.log_sigma_s);
    out.z_s = g.value(n.z_s);
    out.mu_t = g.value(n.mu_t);
    out.log_sigma_t = g.value(n.log_sigma_t);
    out.z_t = g.value(n.z_t);
    out.recon = g.value(n.recon);
    out.refined = g.value(n.refined);
    out.alpha_s = g.value(n.alpha_s);
    out.alpha_t = g.value(n.alpha_t);
    out.logits_s = g.value(n.logits_s);
    out.logits_t = g.value(n.logits_t);
    return out;
  }

  ForwardOut<T> infer(const Recording& r) { return forward(stack<T>(r), Mode::kInfer); }

  // Decodes latents with running statistics; returns (recon, refined).
  std::pair<nn::Mat<T>, nn::Mat<T>> decode_latents(const nn::Mat<T>& z_s, const nn::Mat<T>& z_t,
                                                   std::size_t batch, std::size_t steps) {
    if (z_s.rows != batch * steps || z_t.rows != batch * steps)
      throw ShapeError("decode: latent rows do not match batch x steps");
    nn::Graph<T> g;
    nn::Scope<T> s{g, store_, false};
    auto [recon, refined] = decode(s, g.constant(z_s), g.constant(z_t), batch, steps);
    return {g.value(recon), g.value(refined)};
  }

  // Per-chunk 256-d (bottleneck) features.
  nn::Mat<T> features(const nn::Mat<T>& frames, Mode mode) {
    nn::Graph<T> g;
    nn::Scope<T> s{g, store_, mode == Mode::kTrain};
    return g.value(fen()(s, g.constant(frames)));
  }

  // Attention weights and pooled vector for a latent sequence of one stream.
  std::pair<nn::Mat<T>, nn::Mat<T>> attend(const nn::Mat<T>& seq, std::size_t steps, Attribute a) {
    nn::Graph<T> g;
    nn::Scope<T> s{g, store_, false};
    auto [alpha, c] = attention(a)(s, g.constant(seq), steps, cfg_.use_attention);
    return {g.value(alpha), g.value(c)};
  }

  nn::Mat<T> classify(const nn::Mat<T>& c, Attribute a) {
    nn::Graph<T> g;
    nn::Scope<T> s{g, store_, false};
    return g.value(classifier(a)(s, g.constant(c)));
  }

 private:
  ModelConfig cfg_;
  nn::ParamStore<T> store_;

  static std::string stream(Attribute a, const char* what) {
    return std::string(what) + (a == Attribute::kSinger ? "_s" : "_t");
  }

  nn::Blstm decoder_rnn() const { return {"dec.rnn", 2 * cfg_.latent_dim, cfg_.lstm_hidden}; }
  nn::Linear decoder_fc() const { return {"dec.fc", 2 * cfg_.lstm_hidden, cfg_.conv_filters, false}; }
  nn::Conv1d decoder_conv1() const { return {"dec.conv1", cfg_.conv_filters, cfg_.conv_filters, false}; }
  nn::Conv1d decoder_conv2() const { return {"dec.conv2", cfg_.conv_filters, features::kMelBands, true}; }
  nn::Conv1d refine_conv(int i) const {
    const std::size_t in = i == 1 ? features::kMelBands : cfg_.refine_filters;
    const std::size_t out = i == 3 ? features::kMelBands : cfg_.refine_filters;
    return {"refine.conv" + std::to_string(i), in, out, i == 3};
  }

  void declare() {
    fen().declare(store_);
    for (Attribute a : {Attribute::kSinger, Attribute::kTechnique}) {
      encoder_rnn(a).declare(store_);
      encoder_mu(a).declare(store_);
      encoder_log_sigma(a).declare(store_);
      if (cfg_.use_attention) attention(a).declare(store_);
      classifier(a).declare(store_);
      store_.add(prior_name(a), {classes(a), cfg_.latent_dim}, nn::InitKind::kXavierRow);
      store_.add(stream(a, "prior") + ".variance", {classes(a), cfg_.latent_dim}, nn::InitKind::kConstant,
                 static_cast<T>(cfg_.fixed_variance));
    }
    decoder_rnn().declare(store_);
    decoder_fc().declare(store_);
    decoder_conv1().declare(store_);
    decoder_conv2().declare(store_);
    nn::BatchNorm{"dec.bn1", cfg_.conv_filters}.declare(store_);
    nn::BatchNorm{"dec.bn2", cfg_.conv_filters}.declare(store_);
    for (int i = 1; i <= 3; ++i) refine_conv(i).declare(store_);
    nn::BatchNorm{"refine.bn1", cfg_.refine_filters}.declare(store_);
    nn::BatchNorm{"refine.bn2", cfg_.refine_filters}.declare(store_);
  }

  void check_batch(const Batch<T>& b) const {
    if (b.recordings == 0 || b.steps == 0) throw ShapeError("model input: empty batch");
    if (b.chunks.cols != features::kMelBands)
      throw ShapeError("model input: expected " + std::to_string(features::kMelBands) + " mel bands, got " +
                       std::to_string(b.chunks.cols));
    if (b.chunks.rows != b.recordings * b.steps * features::kChunkFrames)
      throw ShapeError("model input: rows do not match recordings x chunks x 43 frames");
  }
};

}  // namespace gmvc::model
