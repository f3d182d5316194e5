#include <random>

#include <gtest/gtest.h>

#include "gmvc/evaluation.hpp"
#include "reference_report.hpp"
#include "test_util.hpp"

using namespace gmvc;
using namespace gmvc::evaluation;

namespace {

EvalConfig small_eval(std::size_t classes, std::uint64_t seed = 1) {
  EvalConfig c;
  c.classes = classes;
  c.filters = 8;
  c.hidden = 8;
  c.bottleneck = 8;
  c.lstm_hidden = 4;
  c.steps = 4;
  c.batch_size = 4;
  c.lr = 1e-3;
  c.seed = seed;
  return c;
}

const gmvc::testing::Split& corpus() {
  static const auto s = gmvc::testing::synthetic_split({2, 2, 2, 1, 2});
  return s;
}

std::string golden(const char* name) { return io::read_file(std::filesystem::path(GMVC_GOLDEN_DIR) / name); }

}  // namespace

TEST(Accuracy, MatchesDirectCount) {
  std::mt19937_64 rng(4);
  std::vector<std::size_t> p(97), l(97);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = rng() % 3;
    l[i] = rng() % 3;
    if (p[i] == l[i]) ++hits;
  }
  EXPECT_DOUBLE_EQ(accuracy(p, l), hits * 100.0 / 97.0);
  EXPECT_EQ(accuracy({}, {}), 0.0);
  EXPECT_THROW(accuracy({1}, {}), ShapeError);
}

TEST(Report, GoldenCsvAndTable) {
  const auto r = gmvc::testing::reference_report();
  EXPECT_EQ(render_csv(r), golden("report.csv"));
  EXPECT_EQ(render_table(r), golden("report.txt"));
}

TEST(Report, GoldenHoldsReferenceValues) {
  const auto r = parse_report_csv(golden("report.csv"));
  ASSERT_EQ(r.rows.size(), 12u);
  EXPECT_EQ(r.rows[0].cells[0].before, 89.83);
  EXPECT_FALSE(r.rows[0].cells[0].after.has_value());
  const auto& m2 = r.rows[4];  // C-chunk M2, singer converted
  EXPECT_EQ(m2.strategy, "C-chunk");
  EXPECT_EQ(m2.variant, "M2");
  EXPECT_EQ(m2.converted, "singer");
  EXPECT_EQ(m2.cells[0].after, 76.95);
  EXPECT_EQ(r.rows[11].cells[1].after, 67.94);
}

TEST(Report, CsvRoundTripAndOrdering) {
  auto r = gmvc::testing::reference_report();
  std::reverse(r.rows.begin(), r.rows.end());
  const auto back = parse_report_csv(render_csv(r));
  EXPECT_EQ(back, gmvc::testing::reference_report());
  EXPECT_EQ(render_csv(AccuracyReport{}), std::string(kReportHeader) + "\n");
  EXPECT_TRUE(parse_report_csv(std::string(kReportHeader) + "\n").rows.empty());
}

TEST(Report, RejectsMalformedCsv) {
  const std::string h = std::string(kReportHeader) + "\n";
  EXPECT_THROW(parse_report_csv("strategy,variant\n"), FormatError);
  EXPECT_THROW(parse_report_csv(h + "C-chunk,M1,singer,singer,1,2\n"), FormatError);
  EXPECT_THROW(parse_report_csv(h + "C-chunk,M1,singer,vowel,1,2\nC-chunk,M1,singer,singer,1,2\n"
                                    "C-chunk,M1,singer,technique,1,2\n"),
               FormatError);
  EXPECT_THROW(parse_report_csv(h + "C-chunk,M1,singer,singer,x,2\nC-chunk,M1,singer,technique,1,2\n"
                                    "C-chunk,M1,singer,vowel,1,2\n"),
               FormatError);
}

TEST(Report, TableMarksConvertedAndMissing) {
  AccuracyReport r;
  r.rows.push_back({kBaselineStrategy, kBaselineVariant, "singer", {{{50, {}}, {60, {}}, {70, {}}}}});
  const auto t = render_table(r);
  EXPECT_NE(t.find("*Singer"), std::string::npos);
  EXPECT_NE(t.find("*Technique"), std::string::npos);
  const auto last = t.substr(t.rfind("M0") - 12);
  EXPECT_EQ(last.substr(0, 12), std::string(12, ' '));
  // the technique block has no row, so all six of its cells are NA
  std::size_t na = 0;
  for (auto p = last.find("NA"); p != std::string::npos; p = last.find("NA", p + 1)) ++na;
  EXPECT_EQ(na, 9u);
  EXPECT_NE(last.find("50.00"), std::string::npos);
}

TEST(EvalClassifier, SingleClassIsPerfect) {
  EvalClassifier c(Metric::kVowel, small_eval(1));
  const auto res = train_eval_classifier(c, corpus().train, corpus().test);
  EXPECT_EQ(res.holdout_accuracy, 100.0);
  EXPECT_EQ(res.losses.size(), 4u);
}

TEST(EvalClassifier, DeterministicAndPersistent) {
  const auto dir = gmvc::testing::temp_dir("evalclf");
  EvalClassifier a(Metric::kSinger, small_eval(2, 9)), b(Metric::kSinger, small_eval(2, 9));
  const auto ra = train_eval_classifier(a, corpus().train);
  const auto rb = train_eval_classifier(b, corpus().train);
  EXPECT_EQ(ra.losses, rb.losses);
  a.save(dir);
  EXPECT_TRUE(std::filesystem::exists(dir / "singer.gmvc"));
  const auto c = EvalClassifier::load(dir, Metric::kSinger);
  EXPECT_EQ(c.config().filters, 8u);
  for (const auto& r : corpus().test) {
    const auto frames = model::stack<float>(r).chunks;
    EXPECT_EQ(c.predict_logits(frames, 1, r.steps()), a.predict_logits(frames, 1, r.steps()));
  }
  EXPECT_THROW(a.predict(nn::Mat<float>(42, 96)), ShapeError);
}

TEST(EvalClassifier, RejectsBadTrainingSets) {
  EvalClassifier c(Metric::kTechnique, small_eval(1));
  EXPECT_THROW(train_eval_classifier(c, {}), InvalidManifest);
  EXPECT_THROW(train_eval_classifier(c, corpus().train), InvalidManifest);
}

TEST(Protocol, ConversionRowsAndParallelism) {
  const auto cfg = gmvc::testing::tiny_config(1, 1, true);
  auto mc = cfg;
  mc.k_singers = 2;
  mc.k_techniques = 2;
  model::Gmvae<float> m(mc, 3);
  ClassifierSet set;
  for (Metric k : kMetrics) set.by_metric.emplace_back(k, small_eval(2, 5));
  const auto& test = corpus().test;
  const auto base = baseline_rows(set, test);
  ASSERT_EQ(base.size(), 2u);
  EXPECT_FALSE(base[0].cells[0].after.has_value());
  ConversionSet keep;
  const auto row = evaluate_conversion(m, set, test, conversion::Strategy::kChunk, model::Attribute::kSinger, "M3", 1, &keep);
  EXPECT_EQ(row.strategy, "C-chunk");
  EXPECT_EQ(row.converted, "singer");
  EXPECT_EQ(keep.after.size(), 2 * test.size());
  EXPECT_EQ(keep.before.size(), test.size());
  for (std::size_t i = 0; i < keep.after_meta.size(); ++i) EXPECT_EQ(keep.after_meta[i].singer, i % 2);
  for (const auto& c : row.cells) ASSERT_TRUE(c.after.has_value());
  const auto par = evaluate_conversion(m, set, test, conversion::Strategy::kChunk, model::Attribute::kSinger, "M3", 3);
  EXPECT_EQ(par, row);
  EXPECT_THROW(evaluate_conversion(m, set, {}, conversion::Strategy::kChunk, model::Attribute::kSinger, "M3"),
               InvalidInput);
}

TEST(Pgm, LayoutAndScaling) {
  nn::Mat<float> a(3, 2), b(3, 2);
  a(0, 0) = -1.0f;  // first frame, lowest band
  a(2, 1) = 1.0f;   // last frame, highest band
  b.data.assign(6, 0.0f);
  const auto img = encode_pgm({{a, b}}, 1);
  const std::string head = "P5\n7 2\n255\n";
  ASSERT_EQ(img.substr(0, head.size()), head);
  const auto px = [&](std::size_t x, std::size_t y) { return static_cast<unsigned char>(img[head.size() + y * 7 + x]); };
  EXPECT_EQ(px(0, 1), 0);
  EXPECT_EQ(px(2, 0), 255);
  EXPECT_EQ(px(3, 0), 255);  // gap
  EXPECT_EQ(px(4, 0), 128);
  EXPECT_THROW(encode_pgm({}), InvalidInput);
}
