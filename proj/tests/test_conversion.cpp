#include <random>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "gmvc/conversion.hpp"
#include "gmvc/training.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace gmvc;
using namespace gmvc::conversion;
using gmvc::testing::tiny_config;
using model::Attribute;

namespace {

struct Fixture {
  model::Gmvae<double> m;
  model::ForwardOut<double> fwd;
};

Fixture make(const model::ModelConfig& cfg, std::size_t steps, std::uint64_t seed) {
  model::Gmvae<double> m(cfg, seed);
  const auto b = training::random_batch<double>(cfg, 1, steps, seed + 1);
  auto fwd = m.forward(b, model::Mode::kInfer);
  return {std::move(m), std::move(fwd)};
}

std::vector<std::vector<double>> rows(const nn::Mat<double>& m) {
  std::vector<std::vector<double>> out(m.rows, std::vector<double>(m.cols));
  for (std::size_t r = 0; r < m.rows; ++r)
    for (std::size_t c = 0; c < m.cols; ++c) out[r][c] = m(r, c);
  return out;
}

}  // namespace

TEST(Selection, ChunkMatchesDensityArgmax) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    const std::size_t K = 2 + rng() % 5, D = 1 + rng() % 8;
    nn::Mat<double> means(K, D);
    for (auto& v : means.data) v = n(rng);
    std::vector<double> z(D);
    for (auto& v : z) v = 1.5 * n(rng);
    EXPECT_EQ(source_component_chunk<double>(z, means), oracle::density_argmax(z, rows(means), std::exp(-2.0)));
  }
}

TEST(Selection, TiesGoToLowestIndex) {
  nn::Mat<double> means(3, 1);
  means.data = {1.0, -1.0, 1.0};
  const std::vector<double> z{0.0};
  EXPECT_EQ(source_component_chunk<double>(z, means), 0u);
  const std::vector<double> logits{0.5, 2.0, 2.0};
  EXPECT_EQ(source_component_sequence<double>(logits), 1u);
  EXPECT_THROW(source_component_sequence<double>(std::vector<double>{}), InvalidInput);
  EXPECT_THROW(source_component_chunk<double>(std::vector<double>{0.0, 1.0}, means), ShapeError);
}

TEST(Conversion, TargetEqualToSourceIsIdentity) {
  auto f = make(tiny_config(), 1, 2);
  for (auto a : {Attribute::kSinger, Attribute::kTechnique}) {
    const auto& z = a == Attribute::kSinger ? f.fwd.z_s : f.fwd.z_t;
    const auto src = source_component_chunk<double>(std::span<const double>(z.row(0), z.cols), f.m.prior_means(a));
    const auto r = convert(f.m, f.fwd, {a, src, Strategy::kChunk, 1.0});
    EXPECT_EQ(r.refined, f.fwd.refined);
    const auto& logits = a == Attribute::kSinger ? f.fwd.logits_s : f.fwd.logits_t;
    const auto seq = argmax(std::span<const double>(logits.row(0), logits.cols));
    EXPECT_EQ(convert(f.m, f.fwd, {a, seq, Strategy::kSequence, 1.0}).refined, f.fwd.refined);
  }
}

TEST(Conversion, ZeroLambdaIsReconstruction) {
  auto f = make(tiny_config(), 3, 4);
  for (std::size_t t = 0; t < 3; ++t) {
    const auto r = convert(f.m, f.fwd, {Attribute::kSinger, t, Strategy::kChunk, 0.0});
    EXPECT_EQ(r.refined, f.fwd.refined);
  }
}

TEST(Conversion, OtherStreamUntouched) {
  auto f = make(tiny_config(), 3, 6);
  const auto rs = convert(f.m, f.fwd, {Attribute::kSinger, 2, Strategy::kChunk, 1.0});
  EXPECT_EQ(rs.z_t, f.fwd.z_t);
  EXPECT_NE(rs.z_s, f.fwd.z_s);
  const auto rt = convert(f.m, f.fwd, {Attribute::kTechnique, 1, Strategy::kSequence, 0.5});
  EXPECT_EQ(rt.z_s, f.fwd.z_s);
}

TEST(Conversion, ShiftsByMeanDifference) {
  auto f = make(tiny_config(), 3, 8);
  const auto means = f.m.prior_means(Attribute::kSinger);
  const auto r = convert(f.m, f.fwd, {Attribute::kSinger, 1, Strategy::kChunk, 0.5});
  ASSERT_EQ(r.source.size(), 3u);
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t j = 0; j < 4; ++j)
      EXPECT_NEAR(r.z_s(n, j), f.fwd.z_s(n, j) + 0.5 * (means(1, j) - means(r.source[n], j)), 1e-15);
}

TEST(Conversion, ChunkAndSequenceDifferOnMixedRecording) {
  auto f = make(tiny_config(), 3, 10);
  const auto means = f.m.prior_means(Attribute::kSinger);
  // Chunk latents sit on three different components; the sequence head says 2.
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t j = 0; j < 4; ++j) f.fwd.z_s(n, j) = f.fwd.mu_s(n, j) = means(n, j);
  f.fwd.logits_s.data = {0.0, 0.1, 3.0};
  const auto chunk = convert(f.m, f.fwd, {Attribute::kSinger, 0, Strategy::kChunk, 1.0});
  const auto seq = convert(f.m, f.fwd, {Attribute::kSinger, 0, Strategy::kSequence, 1.0});
  EXPECT_EQ(chunk.source, (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_EQ(seq.source, (std::vector<std::size_t>{2, 2, 2}));
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t j = 0; j < 4; ++j) {
      EXPECT_NEAR(chunk.z_s(n, j), means(0, j), 1e-15);
      EXPECT_NEAR(seq.z_s(n, j), means(n, j) + means(0, j) - means(2, j), 1e-15);
    }
}

TEST(Conversion, MorphIsCollinear) {
  auto f = make(tiny_config(), 2, 12);
  const auto series = morph_series(f.m, f.fwd, {Attribute::kTechnique, 1, Strategy::kChunk, 1.0}, 5);
  ASSERT_EQ(series.size(), 5u);
  EXPECT_EQ(series.front().refined, f.fwd.refined);
  const auto& z0 = series.front().z_t;
  const auto& z1 = series.back().z_t;
  for (std::size_t i = 0; i < 5; ++i) {
    const double lam = i / 4.0;
    for (std::size_t k = 0; k < z0.size(); ++k)
      EXPECT_NEAR(series[i].z_t.data[k] - z0.data[k], lam * (z1.data[k] - z0.data[k]), 1e-7);
  }
  EXPECT_THROW(morph_series(f.m, f.fwd, {Attribute::kTechnique, 1, Strategy::kChunk, 1.0}, 1), InvalidInput);
}

TEST(Conversion, RejectsInvalidRequests) {
  auto f = make(tiny_config(0, 0, false), 2, 14);
  EXPECT_THROW(convert(f.m, f.fwd, {Attribute::kSinger, 3, Strategy::kChunk, 1.0}), InvalidInput);
  EXPECT_THROW(convert(f.m, f.fwd, {Attribute::kSinger, 0, Strategy::kChunk, 1.5}), InvalidInput);
  EXPECT_THROW(convert(f.m, f.fwd, {Attribute::kSinger, 0, Strategy::kSequence, 1.0}), StrategyUnavailable);
  EXPECT_THROW(convert(f.m, f.fwd,
                       std::vector<ConversionRequest>{{Attribute::kSinger, 0, Strategy::kChunk, 1.0},
                                                      {Attribute::kSinger, 1, Strategy::kChunk, 1.0}}),
               InvalidInput);
  auto sampled = f.fwd;
  sampled.z_s.data[0] += 1.0;
  EXPECT_THROW(convert(f.m, sampled, {Attribute::kSinger, 0, Strategy::kChunk, 1.0}), InvalidInput);
  EXPECT_THROW(parse_strategy("chunky"), InvalidInput);
  EXPECT_EQ(parse_strategy("c-sequence"), Strategy::kSequence);
}

TEST(Conversion, BothStreamsInOneDecode) {
  auto f = make(tiny_config(), 2, 16);
  const auto both = convert(f.m, f.fwd,
                            std::vector<ConversionRequest>{{Attribute::kSinger, 1, Strategy::kChunk, 1.0},
                                                           {Attribute::kTechnique, 0, Strategy::kChunk, 1.0}});
  const auto s = convert(f.m, f.fwd, {Attribute::kSinger, 1, Strategy::kChunk, 1.0});
  const auto t = convert(f.m, f.fwd, {Attribute::kTechnique, 0, Strategy::kChunk, 1.0});
  EXPECT_EQ(both.z_s, s.z_s);
  EXPECT_EQ(both.z_t, t.z_t);
  EXPECT_EQ(both.refined, f.m.decode_latents(s.z_s, t.z_t, 1, 2).second);
}

TEST(Conversion, WritesMelAndSidecar) {
  const auto dir = gmvc::testing::temp_dir("convert_out");
  model::Gmvae<float> m(tiny_config(), 18);
  const auto b = training::random_batch<float>(tiny_config(), 1, 2, 19);
  const auto fwd = m.forward(b, model::Mode::kInfer);
  const ConversionRequest req{Attribute::kTechnique, 1, Strategy::kSequence, 0.25};
  const auto r = convert(m, fwd, req);
  write_conversion(dir / "x.mel", r, req, "rec7");
  const auto mel = features::read_mel(dir / "x.mel");
  EXPECT_EQ(mel.frames, r.refined);
  const auto j = nlohmann::json::parse(io::read_file(dir / "x.mel.json"));
  EXPECT_EQ(j["source_id"], "rec7");
  EXPECT_EQ(j["attribute"], "technique");
  EXPECT_EQ(j["strategy"], "C-sequence");
  EXPECT_EQ(j["target"], 1);
  EXPECT_EQ(j["lambda"], 0.25);
  EXPECT_EQ(j["source_per_chunk"].get<std::vector<std::size_t>>(), r.source);
}
