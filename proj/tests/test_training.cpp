#include <algorithm>
#include <set>

#include <gtest/gtest.h>

#include "gmvc/training.hpp"
#include "test_util.hpp"

using namespace gmvc;
using namespace gmvc::training;

namespace {

TrainConfig small_config(Variant v, const std::string& out) {
  auto c = make_config(v);
  c.model.latent_dim = 4;
  c.model.k_singers = 2;
  c.model.k_techniques = 2;
  c.model.conv_filters = 8;
  c.model.fen_hidden = 8;
  c.model.bottleneck = 8;
  c.model.lstm_hidden = 4;
  c.model.refine_filters = 8;
  c.batch_size = 3;
  c.lr = 1e-3;
  c.max_steps = 6;
  c.checkpoint_every = 3;
  c.seed = 5;
  c.out_dir = out;
  return c;
}

const std::vector<model::Recording>& corpus() {
  static const auto split = gmvc::testing::synthetic_split({3, 2, 2, 1, 2});
  return split.train;
}

}  // namespace

TEST(Batches, PartitionEveryRecordingOnce) {
  const std::vector<std::size_t> counts{4, 5, 4, 4, 6, 5, 4, 4, 4};
  const auto batches = make_batches(counts, 2, 1, 0);
  std::multiset<std::size_t> seen;
  for (const auto& b : batches) {
    ASSERT_FALSE(b.empty());
    EXPECT_LE(b.size(), 2u);
    for (auto i : b) {
      seen.insert(i);
      EXPECT_EQ(counts[i], counts[b.front()]);
    }
  }
  EXPECT_EQ(seen.size(), counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) EXPECT_EQ(seen.count(i), 1u);
  // ceil(6/2) + ceil(2/2) + ceil(1/2)
  EXPECT_EQ(batches.size(), 5u);
}

TEST(Batches, DependOnlyOnSeedAndEpoch) {
  const std::vector<std::size_t> counts(20, 4);
  EXPECT_EQ(make_batches(counts, 3, 7, 2), make_batches(counts, 3, 7, 2));
  EXPECT_NE(make_batches(counts, 3, 7, 2), make_batches(counts, 3, 7, 3));
  EXPECT_NE(make_batches(counts, 3, 7, 2), make_batches(counts, 3, 8, 2));
  EXPECT_THROW(make_batches({}, 3, 1), InvalidInput);
  EXPECT_THROW(make_batches(counts, 0, 1), InvalidInput);
}

TEST(Config, RoundTrip) {
  auto c = small_config(Variant::kM2, "runs/x");
  c.lr = 0.000123;
  const auto back = parse_run_config(encode_run_config(c));
  EXPECT_EQ(encode_run_config(back), encode_run_config(c));
  EXPECT_EQ(back.lr, c.lr);
  EXPECT_EQ(back.model.conv_filters, 8u);
}

TEST(Config, VariantDefaultsAndConflicts) {
  const auto m1 = parse_run_config("variant=M1\n");
  EXPECT_EQ(m1.model.beta, 0.0);
  EXPECT_FALSE(m1.model.use_attention);
  const auto m3 = parse_run_config("# comment\nvariant = M3\nlatent_dim=8 # trailing\n");
  EXPECT_TRUE(m3.model.use_attention);
  EXPECT_EQ(m3.model.latent_dim, 8u);
  EXPECT_THROW(parse_run_config("variant=M1\nbeta=1\n"), InvalidConfig);
  EXPECT_THROW(parse_run_config("variant=M2\nuse_attention=true\n"), InvalidConfig);
  EXPECT_THROW(parse_run_config("variant=M4\n"), InvalidConfig);
  EXPECT_THROW(parse_run_config("lr=-1\n"), InvalidConfig);
  EXPECT_THROW(parse_run_config("batch_size=two\n"), InvalidConfig);
  EXPECT_THROW(parse_run_config("colour=red\n"), InvalidConfig);
  EXPECT_THROW(parse_run_config("seed=1\nseed=2\n"), InvalidConfig);
  EXPECT_THROW(parse_run_config("seed\n"), InvalidConfig);
}

TEST(Trainer, RejectsBadData) {
  const auto dir = gmvc::testing::temp_dir("train_bad");
  EXPECT_THROW(Trainer(small_config(Variant::kM2, dir.string()), {}), InvalidInput);
  auto c = small_config(Variant::kM2, dir.string());
  c.model.k_singers = 1;
  EXPECT_THROW(Trainer(c, corpus()), InvalidLabel);
}

TEST(Trainer, ResumeMatchesUninterruptedRun) {
  const auto a = gmvc::testing::temp_dir("train_full");
  const auto b = gmvc::testing::temp_dir("train_resume");
  Trainer full(small_config(Variant::kM3, a.string()), corpus());
  const auto sa = train(full);
  EXPECT_EQ(sa.step, 6u);

  auto half_cfg = small_config(Variant::kM3, b.string());
  half_cfg.max_steps = 3;
  Trainer half(half_cfg, corpus());
  train(half);
  Trainer rest(small_config(Variant::kM3, b.string()), corpus());
  const auto sb = train(rest, {checkpoint_path(half_cfg), {}, true});
  EXPECT_EQ(sb.step, 6u);

  for (const auto& [name, e] : full.model().params().entries()) EXPECT_EQ(e.value, rest.model().params().at(name).value) << name;
  EXPECT_EQ(full.optimizer(), rest.optimizer());
  EXPECT_EQ(io::read_file(a / "checkpoint.gmvc"), io::read_file(b / "checkpoint.gmvc"));
  EXPECT_EQ(io::read_file(a / "train_log.csv"), io::read_file(b / "train_log.csv"));
}

TEST(Trainer, PriorMeansLearnVarianceFixed) {
  const auto dir = gmvc::testing::temp_dir("train_prior");
  Trainer t(small_config(Variant::kM2, dir.string()), corpus());
  const auto before = t.model().prior_means(model::Attribute::kSinger);
  const auto var = t.model().params().at("prior_s.variance").value;
  train(t, {std::nullopt, {}, false});
  EXPECT_NE(t.model().prior_means(model::Attribute::kSinger), before);
  EXPECT_EQ(t.model().params().at("prior_s.variance").value, var);
  EXPECT_FALSE(std::filesystem::exists(dir / "checkpoint.gmvc"));
}

TEST(Trainer, LogAndLoadModel) {
  const auto dir = gmvc::testing::temp_dir("train_files");
  Trainer t(small_config(Variant::kM1, dir.string()), corpus());
  std::vector<std::string> lines;
  train(t, {std::nullopt, [&](const std::string& l) { lines.push_back(l); }, true});
  ASSERT_EQ(lines.size(), 6u);
  EXPECT_EQ(lines.front().substr(0, 2), "1,");
  const auto log = io::read_file(dir / "train_log.csv");
  EXPECT_EQ(log.substr(0, log.find('\n')), kLogHeader);
  TrainConfig cfg;
  auto m = load_model(dir, &cfg);
  EXPECT_EQ(cfg.variant, Variant::kM1);
  for (const auto& [name, e] : t.model().params().entries()) EXPECT_EQ(e.value, m.params().at(name).value);
}

TEST(Checkpoint, RoundTripAndRejectsMismatch) {
  const auto dir = gmvc::testing::temp_dir("ckpt");
  auto cfg = gmvc::testing::tiny_config();
  model::Gmvae<float> m(cfg, 3);
  nn::AdamState<float> adam;
  adam.step = 17;
  adam.m["fen.conv1.w"] = std::vector<float>(m.params().at("fen.conv1.w").value.size(), 0.25f);
  adam.v["fen.conv1.w"] = std::vector<float>(m.params().at("fen.conv1.w").value.size(), 0.5f);
  nn::save_checkpoint(dir / "a.gmvc", m.params(), adam);
  EXPECT_EQ(io::read_file(dir / "a.gmvc").substr(0, 4), "GMVC");

  model::Gmvae<float> other(cfg, 99);
  const auto back = nn::load_checkpoint(dir / "a.gmvc", other.params());
  EXPECT_EQ(back, adam);
  for (const auto& [name, e] : m.params().entries()) EXPECT_EQ(e.value, other.params().at(name).value);

  auto wide = cfg;
  wide.latent_dim = 5;
  model::Gmvae<float> bad(wide, 1);
  EXPECT_THROW(nn::load_checkpoint(dir / "a.gmvc", bad.params()), ShapeError);
  io::write_atomic(dir / "b.gmvc", "GMVX1234");
  EXPECT_THROW(nn::load_checkpoint(dir / "b.gmvc", other.params()), FormatError);
}
