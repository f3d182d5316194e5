#include <cmath>

#include <gtest/gtest.h>

#include "gmvc/model/gmvae.hpp"
#include "gmvc/training.hpp"
#include "test_util.hpp"

using namespace gmvc;
using namespace gmvc::model;
using gmvc::testing::tiny_config;

namespace {

Batch<double> batch(const ModelConfig& c, std::size_t b, std::size_t n, std::uint64_t seed) {
  return training::random_batch<double>(c, b, n, seed);
}

}  // namespace

TEST(Gmvae, ForwardShapes) {
  const auto cfg = tiny_config();
  Gmvae<double> m(cfg, 1);
  const auto out = m.forward(batch(cfg, 2, 3, 2), Mode::kInfer);
  EXPECT_EQ(out.recordings, 2u);
  EXPECT_EQ(out.steps, 3u);
  for (const auto* z : {&out.mu_s, &out.log_sigma_s, &out.z_s, &out.mu_t, &out.log_sigma_t, &out.z_t}) {
    EXPECT_EQ(z->rows, 6u);
    EXPECT_EQ(z->cols, 4u);
  }
  EXPECT_EQ(out.recon.rows, 2u * 3u * 43u);
  EXPECT_EQ(out.recon.cols, 96u);
  EXPECT_EQ(out.refined.rows, out.recon.rows);
  EXPECT_EQ(out.logits_s.rows, 2u);
  EXPECT_EQ(out.logits_s.cols, 3u);
  EXPECT_EQ(out.logits_t.cols, 2u);
  EXPECT_EQ(out.alpha_s.rows, 6u);
}

TEST(Gmvae, OutputRanges) {
  const auto cfg = tiny_config();
  Gmvae<double> m(cfg, 3);
  const auto out = m.forward(batch(cfg, 2, 2, 4), Mode::kInfer);
  for (double v : out.refined.data) ASSERT_TRUE(v >= -1.0 && v <= 1.0);
  for (double v : out.recon.data) ASSERT_TRUE(v >= -1.0 && v <= 1.0);
  for (double v : out.log_sigma_s.data) ASSERT_TRUE(v >= kLogSigmaMin && v <= kLogSigmaMax);
}

TEST(Gmvae, InferUsesPosteriorMean) {
  const auto cfg = tiny_config();
  Gmvae<double> m(cfg, 5);
  const auto out = m.forward(batch(cfg, 1, 3, 6), Mode::kInfer);
  EXPECT_EQ(out.z_s, out.mu_s);
  EXPECT_EQ(out.z_t, out.mu_t);
}

TEST(Gmvae, TrainSamplesWithReparameterization) {
  const auto cfg = tiny_config();
  Gmvae<double> m(cfg, 5);
  std::mt19937_64 rng(77), replay(77);
  const auto out = m.forward(batch(cfg, 2, 3, 6), Mode::kTrain, &rng);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i < out.z_s.size(); ++i)
    ASSERT_NEAR(out.z_s.data[i], out.mu_s.data[i] + std::exp(out.log_sigma_s.data[i]) * normal(replay), 1e-12);
  for (std::size_t i = 0; i < out.z_t.size(); ++i)
    ASSERT_NEAR(out.z_t.data[i], out.mu_t.data[i] + std::exp(out.log_sigma_t.data[i]) * normal(replay), 1e-12);
}

TEST(Gmvae, AttentionWeights) {
  auto cfg = tiny_config(1, 1, false);
  Gmvae<double> plain(cfg, 7);
  const auto u = plain.forward(batch(cfg, 2, 4, 8), Mode::kInfer);
  for (double a : u.alpha_s.data) EXPECT_EQ(a, 0.25);
  for (double a : u.alpha_t.data) EXPECT_EQ(a, 0.25);
  EXPECT_FALSE(plain.params().contains("attn_s.f.w"));

  cfg.use_attention = true;
  Gmvae<double> att(cfg, 7);
  EXPECT_TRUE(att.params().contains("attn_s.f.w"));
  const auto a = att.forward(batch(cfg, 2, 4, 8), Mode::kInfer);
  for (std::size_t b = 0; b < 2; ++b) {
    double s = 0.0, t = 0.0;
    for (std::size_t n = 0; n < 4; ++n) {
      s += a.alpha_s.data[b * 4 + n];
      t += a.alpha_t.data[b * 4 + n];
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
    EXPECT_NEAR(t, 1.0, 1e-12);
  }
}

TEST(Gmvae, ClassifierReadsPooledMeans) {
  const auto cfg = tiny_config();
  Gmvae<double> m(cfg, 9);
  const auto out = m.forward(batch(cfg, 1, 3, 10), Mode::kInfer);
  const auto [alpha, c] = m.attend(out.mu_s, 3, Attribute::kSinger);
  EXPECT_EQ(alpha, out.alpha_s);
  const auto logits = m.classify(c, Attribute::kSinger);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(logits.data[k], out.logits_s.data[k], 1e-12);
}

TEST(Gmvae, PriorsInitAndFixedVariance) {
  auto cfg = tiny_config();
  cfg.latent_dim = 8;
  Gmvae<double> m(cfg, 11);
  const double bound = std::sqrt(6.0 / 16.0);
  for (auto a : {Attribute::kSinger, Attribute::kTechnique}) {
    const auto means = m.prior_means(a);
    EXPECT_EQ(means.rows, m.classes(a));
    EXPECT_EQ(means.cols, 8u);
    double mx = 0.0;
    for (double v : means.data) mx = std::max(mx, std::abs(v));
    EXPECT_LE(mx, bound);
    EXPECT_GT(mx, 0.3 * bound);
  }
  const auto& var = m.params().at("prior_s.variance");
  EXPECT_FALSE(var.trainable());
  for (double v : var.value) EXPECT_DOUBLE_EQ(v, std::exp(-2.0));
}

TEST(Gmvae, InferenceIsPerRecording) {
  const auto cfg = tiny_config();
  Gmvae<double> m(cfg, 12);
  const auto both = batch(cfg, 2, 3, 13);
  const auto joint = m.forward(both, Mode::kInfer);
  const std::size_t rows = 3 * 43;
  for (std::size_t b = 0; b < 2; ++b) {
    Batch<double> one;
    one.recordings = 1;
    one.steps = 3;
    one.singer = {both.singer[b]};
    one.technique = {both.technique[b]};
    one.chunks = nn::Mat<double>(rows, 96);
    std::copy(both.chunks.row(b * rows), both.chunks.row(b * rows) + rows * 96, one.chunks.data.begin());
    const auto single = m.forward(one, Mode::kInfer);
    for (std::size_t i = 0; i < single.refined.size(); ++i)
      ASSERT_NEAR(single.refined.data[i], joint.refined.data[b * rows * 96 + i], 1e-12);
    for (std::size_t i = 0; i < single.mu_s.size(); ++i)
      ASSERT_NEAR(single.mu_s.data[i], joint.mu_s.data[b * 3 * 4 + i], 1e-12);
  }
}

TEST(Gmvae, DecodeLatentsReproducesReconstruction) {
  const auto cfg = tiny_config();
  Gmvae<float> m(cfg, 14);
  const auto b = training::random_batch<float>(cfg, 1, 4, 15);
  const auto out = m.forward(b, Mode::kInfer);
  const auto [recon, refined] = m.decode_latents(out.z_s, out.z_t, 1, 4);
  EXPECT_EQ(recon, out.recon);
  EXPECT_EQ(refined, out.refined);
  EXPECT_THROW(m.decode_latents(out.z_s, out.z_t, 1, 3), ShapeError);
}

TEST(Gmvae, RejectsBadInputAndConfig) {
  const auto cfg = tiny_config();
  Gmvae<double> m(cfg, 16);
  auto b = batch(cfg, 1, 2, 17);
  b.chunks = nn::Mat<double>(b.chunks.rows, 95);
  EXPECT_THROW(m.forward(b, Mode::kInfer), ShapeError);
  auto bad = cfg;
  bad.latent_dim = 0;
  EXPECT_THROW(Gmvae<double>(bad, 1), InvalidConfig);
}

TEST(Gmvae, WrapsMatchingStoreOnly) {
  const auto cfg = tiny_config();
  Gmvae<double> m(cfg, 18);
  Gmvae<float> wrapped(cfg, m.params().cast<float>());
  EXPECT_EQ(wrapped.params().entries().size(), m.params().entries().size());
  auto other = cfg;
  other.use_attention = false;
  Gmvae<double> small(other, 18);
  EXPECT_THROW(Gmvae<double>(cfg, small.params()), ShapeError);
}

TEST(Gmvae, SampledGradcheckM3) {
  nn::GradcheckOptions opt;
  opt.max_coords_per_param = 3;
  opt.seed = 4;
  const auto report = training::objective_gradcheck(tiny_config(), 2, 2, 21, opt);
  EXPECT_LT(nn::max_error(report), 1e-4) << report.front().name;
}
