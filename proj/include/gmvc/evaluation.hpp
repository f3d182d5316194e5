#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "gmvc/conversion.hpp"
#include "gmvc/errors.hpp"
#include "gmvc/io.hpp"
#include "gmvc/model/batch.hpp"
#include "gmvc/model/gmvae.hpp"
#include "gmvc/nn/adam.hpp"
#include "gmvc/nn/checkpoint.hpp"
#include "gmvc/nn/init.hpp"
#include "gmvc/nn/layers.hpp"
#include "gmvc/training.hpp"

namespace gmvc::evaluation {

using nn::Mat;
using nn::Var;

enum class Metric { kSinger, kTechnique, kVowel };

inline constexpr std::array<Metric, 3> kMetrics = {Metric::kSinger, Metric::kTechnique, Metric::kVowel};

inline std::string to_string(Metric m) {
  switch (m) {
    case Metric::kSinger: return "singer";
    case Metric::kTechnique: return "technique";
    case Metric::kVowel: return "vowel";
  }
  return "?";
}

inline Metric parse_metric(const std::string& s) {
  for (Metric m : kMetrics)
    if (to_string(m) == s) return m;
  throw InvalidInput("unknown attribute '" + s + "' (expected singer, technique or vowel)");
}

inline Metric metric_of(model::Attribute a) {
  return a == model::Attribute::kSinger ? Metric::kSinger : Metric::kTechnique;
}

inline std::size_t label_of(const features::RecordingMeta& m, Metric a) {
  switch (a) {
    case Metric::kSinger: return m.singer;
    case Metric::kTechnique: return m.technique;
    case Metric::kVowel: return m.vowel;
  }
  return 0;
}

struct EvalConfig {
  std::size_t classes = 0;
  std::size_t filters = 512;
  std::size_t hidden = 512;
  std::size_t bottleneck = 256;
  std::size_t lstm_hidden = 256;
  std::size_t steps = 2000;
  std::size_t batch_size = 128;
  double lr = 1e-4;
  std::uint64_t seed = 0;
};

inline nlohmann::ordered_json to_json(Metric a, const EvalConfig& c) {
  return {{"attribute", to_string(a)}, {"classes", c.classes},   {"filters", c.filters},
          {"hidden", c.hidden},        {"bottleneck", c.bottleneck}, {"lstm_hidden", c.lstm_hidden},
          {"steps", c.steps},          {"batch_size", c.batch_size}, {"lr", c.lr},
          {"seed", c.seed}};
}

// Attribute classifier: FEN -> BLSTM -> attention pool -> FC.
class EvalClassifier {
 public:
  EvalClassifier(Metric attribute, EvalConfig cfg) : attr_(attribute), cfg_(cfg), store_(cfg.seed) {
    if (cfg_.classes == 0) throw InvalidConfig("eval classifier: classes must be >= 1");
    if (cfg_.batch_size == 0) throw InvalidConfig("eval classifier: batch_size must be >= 1");
    if (!(cfg_.lr > 0.0)) throw InvalidConfig("eval classifier: lr must be positive");
    fen().declare(store_);
    rnn().declare(store_);
    pool().declare(store_);
    out().declare(store_);
    nn::xavier_init(store_);
  }

  Metric attribute() const { return attr_; }
  const EvalConfig& config() const { return cfg_; }
  nn::ParamStore<float>& params() { return store_; }
  const nn::ParamStore<float>& params() const { return store_; }

  // frames: (B*N*43) x 96  ->  B x classes
  Var logits(nn::Scope<float>& s, Var frames, std::size_t batch, std::size_t steps) const {
    Var h = fen()(s, frames);
    Var seq = rnn()(s, h, batch, steps);
    auto [alpha, c] = pool()(s, seq, steps, true);
    (void)alpha;
    return out()(s, c);
  }

  Mat<float> predict_logits(const Mat<float>& frames, std::size_t batch, std::size_t steps) const {
    nn::Graph<float> g;
    nn::Scope<float> s{g, const_cast<nn::ParamStore<float>&>(store_), false};
    return g.value(logits(s, g.constant(frames), batch, steps));
  }

  // Predicted class for one recording given as (N*43) x 96 frames.
  std::size_t predict(const Mat<float>& frames) const {
    if (frames.rows == 0 || frames.rows % features::kChunkFrames != 0)
      throw ShapeError("predict: frame count must be a positive multiple of the chunk length");
    const auto l = predict_logits(frames, 1, frames.rows / features::kChunkFrames);
    return conversion::argmax(std::span<const float>(l.row(0), l.cols));
  }

  std::size_t predict(const model::Recording& r) const { return predict(model::stack<float>(r).chunks); }

  void save(const std::filesystem::path& dir) const {
    nn::save_checkpoint(dir / (to_string(attr_) + ".gmvc"), store_, nn::AdamState<float>{});
    io::write_atomic(dir / (to_string(attr_) + ".json"), to_json(attr_, cfg_).dump(2) + "\n");
  }

  static EvalClassifier load(const std::filesystem::path& dir, Metric attribute) {
    const auto j = nlohmann::json::parse(io::read_file(dir / (to_string(attribute) + ".json")), nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw FormatError("eval classifier metadata is not valid JSON");
    EvalConfig c;
    try {
      c.classes = j.at("classes");
      c.filters = j.at("filters");
      c.hidden = j.at("hidden");
      c.bottleneck = j.at("bottleneck");
      c.lstm_hidden = j.at("lstm_hidden");
      c.steps = j.at("steps");
      c.batch_size = j.at("batch_size");
      c.lr = j.at("lr");
      c.seed = j.at("seed");
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("eval classifier metadata: ") + e.what());
    }
    EvalClassifier clf(attribute, c);
    nn::load_checkpoint(dir / (to_string(attribute) + ".gmvc"), clf.store_);
    return clf;
  }

 private:
  Metric attr_;
  EvalConfig cfg_;
  nn::ParamStore<float> store_;

  model::FeatureExtractor fen() const {
    return {"fen", features::kMelBands, cfg_.filters, cfg_.hidden, cfg_.bottleneck};
  }
  nn::Blstm rnn() const { return {"rnn", cfg_.bottleneck, cfg_.lstm_hidden}; }
  model::AttentionPool pool() const { return {"attn", 2 * cfg_.lstm_hidden}; }
  nn::Linear out() const { return {"out", 2 * cfg_.lstm_hidden, cfg_.classes, true}; }
};

// Percentage of predictions equal to their labels.
inline double accuracy(const std::vector<std::size_t>& predicted, const std::vector<std::size_t>& labels) {
  if (predicted.size() != labels.size()) throw ShapeError("accuracy: length mismatch");
  if (predicted.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) hit += predicted[i] == labels[i];
  return 100.0 * static_cast<double>(hit) / static_cast<double>(predicted.size());
}

struct EvalTraining {
  std::vector<float> losses;  // mean cross-entropy per step
  double holdout_accuracy = 0.0;
};

// Cross-entropy training on unconverted recordings; holdout accuracy is
// measured on `holdout` (skipped when empty).
inline EvalTraining train_eval_classifier(EvalClassifier& clf, const std::vector<model::Recording>& train_set,
                                          const std::vector<model::Recording>& holdout = {},
                                          const std::function<void(std::size_t, float)>& on_step = {}) {
  const Metric a = clf.attribute();
  const auto& cfg = clf.config();
  if (train_set.empty()) throw InvalidManifest("eval classifier: no training recordings for " + to_string(a));
  for (const auto* set : {&train_set, &holdout})
    for (const auto& r : *set)
      if (label_of(r.meta, a) >= cfg.classes)
        throw InvalidManifest("recording '" + r.meta.id + "' has no valid " + to_string(a) + " label");
  const auto counts = training::chunk_counts(train_set);
  const std::size_t per_epoch = training::make_batches(counts, cfg.batch_size, cfg.seed, 0).size();
  nn::AdamState<float> adam;
  EvalTraining out;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const auto idx = training::make_batches(counts, cfg.batch_size, cfg.seed, step / per_epoch)[step % per_epoch];
    std::vector<const model::Recording*> recs;
    std::vector<std::size_t> labels;
    for (auto i : idx) {
      recs.push_back(&train_set[i]);
      labels.push_back(label_of(train_set[i].meta, a));
    }
    const auto batch = model::stack<float>(recs);
    nn::Graph<float> g;
    nn::Scope<float> s{g, clf.params(), true};
    Var logits = clf.logits(s, g.constant(batch.chunks), batch.recordings, batch.steps);
    Var loss = g.scale(g.sum(g.pick(g.log_softmax_rows(logits), labels)), -1.0f / static_cast<float>(labels.size()));
    const float l = g.value(loss).data[0];
    if (!std::isfinite(l)) throw NonFiniteLoss("eval classifier: non-finite cross-entropy");
    clf.params().zero_grad();
    g.backward(loss);
    nn::adam_step(clf.params(), adam, static_cast<float>(cfg.lr));
    out.losses.push_back(l);
    if (on_step) on_step(step + 1, l);
  }
  if (!holdout.empty()) {
    std::vector<std::size_t> pred, labels;
    for (const auto& r : holdout) {
      pred.push_back(clf.predict(r));
      labels.push_back(label_of(r.meta, a));
    }
    out.holdout_accuracy = accuracy(pred, labels);
  }
  return out;
}

// The three attribute classifiers, indexed by Metric.
struct ClassifierSet {
  std::vector<EvalClassifier> by_metric;

  const EvalClassifier& operator[](Metric m) const { return by_metric.at(static_cast<std::size_t>(m)); }

  static ClassifierSet load(const std::filesystem::path& dir) {
    ClassifierSet s;
    for (Metric m : kMetrics) s.by_metric.push_back(EvalClassifier::load(dir, m));
    return s;
  }
};

// ---- report -----------------------------------------------------------------

struct Cell {
  double before = 0.0;
  std::optional<double> after;  // absent for the unconverted baseline

  bool operator==(const Cell&) const = default;
};

// One (strategy, variant, converted attribute) row. The baseline row uses
// strategy "-" and variant "M0" and has no `after` values.
struct ReportRow {
  std::string strategy;
  std::string variant;
  std::string converted;  // "singer" or "technique"
  std::array<Cell, 3> cells;

  bool operator==(const ReportRow&) const = default;
};

struct AccuracyReport {
  std::vector<ReportRow> rows;

  bool operator==(const AccuracyReport&) const = default;
};

inline constexpr const char* kBaselineStrategy = "-";
inline constexpr const char* kBaselineVariant = "M0";
inline constexpr const char* kReportHeader = "strategy,variant,converted,metric,before,after";

namespace detail {

inline int strategy_rank(const std::string& s) {
  if (s == kBaselineStrategy) return 0;
  if (s == "C-chunk") return 1;
  if (s == "C-sequence") return 2;
  return 3;
}

inline std::string shortest(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline double parse_real(const std::string& s, std::size_t line) {
  double v = 0.0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw FormatError("report line " + std::to_string(line) + ": bad number '" + s + "'");
  return v;
}

template <typename T>
std::vector<std::size_t> predict_all(const EvalClassifier& clf, const std::vector<Mat<T>>& mels, std::size_t jobs);

}  // namespace detail

// Table order: baseline first, then C-chunk, then C-sequence; variants in
// name order; singer conversion before technique conversion.
inline void sort_rows(AccuracyReport& r) {
  std::stable_sort(r.rows.begin(), r.rows.end(), [](const ReportRow& a, const ReportRow& b) {
    const auto ka = std::make_tuple(detail::strategy_rank(a.strategy), a.strategy, a.variant, a.converted != "singer");
    const auto kb = std::make_tuple(detail::strategy_rank(b.strategy), b.strategy, b.variant, b.converted != "singer");
    return ka < kb;
  });
}

// Rows in table order, three lines (one per metric) each.
inline std::string render_csv(AccuracyReport report) {
  sort_rows(report);
  std::string out = std::string(kReportHeader) + "\n";
  for (const auto& row : report.rows)
    for (Metric m : kMetrics) {
      const auto& c = row.cells[static_cast<std::size_t>(m)];
      out += row.strategy + "," + row.variant + "," + row.converted + "," + to_string(m) + "," +
             detail::shortest(c.before) + "," + (c.after ? detail::shortest(*c.after) : "NA") + "\n";
    }
  return out;
}

inline AccuracyReport parse_report_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != kReportHeader) throw FormatError("report: missing or wrong header");
  AccuracyReport r;
  std::size_t lineno = 1;
  std::size_t filled = 3;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 6) throw FormatError("report line " + std::to_string(lineno) + ": expected 6 fields");
    const Metric m = parse_metric(f[3]);
    if (filled == 3) {
      r.rows.push_back({f[0], f[1], f[2], {}});
      filled = 0;
    }
    auto& row = r.rows.back();
    if (row.strategy != f[0] || row.variant != f[1] || row.converted != f[2] ||
        static_cast<std::size_t>(m) != filled)
      throw FormatError("report line " + std::to_string(lineno) + ": metrics must come in singer, technique, vowel order");
    auto& c = row.cells[filled++];
    c.before = detail::parse_real(f[4], lineno);
    if (f[5] != "NA") c.after = detail::parse_real(f[5], lineno);
  }
  if (filled != 3) throw FormatError("report: incomplete row");
  return r;
}

// Table with one line per (strategy, variant) and a block per converted
// attribute; `*` marks the converted attribute, NA an absent value.
inline std::string render_table(AccuracyReport report) {
  sort_rows(report);
  const char* kConv[2] = {"singer", "technique"};
  auto num = [](const std::optional<double>& v) {
    char buf[16];
    if (!v) return std::string("NA");
    std::snprintf(buf, sizeof buf, "%.2f", *v);
    return std::string(buf);
  };
  auto cell = [](const std::string& s, std::size_t w) { return s.size() >= w ? s : std::string(w - s.size(), ' ') + s; };
  auto left = [](const std::string& s, std::size_t w) { return s.size() >= w ? s : s + std::string(w - s.size(), ' '); };
  const std::size_t kW = 8;
  std::string out;
  out += left("Strategy", 12) + left("Model", 6);
  for (const char* c : kConv) out += " | " + left(std::string("Effect of ") + (c[0] == 's' ? "Singer" : "Technique") + " Conversion", 3 * (2 * kW + 2));
  out += "\n" + std::string(18, ' ');
  for (const char* c : kConv) {
    out += " | ";
    for (Metric m : kMetrics) {
      std::string name = to_string(m);
      name[0] = static_cast<char>(std::toupper(name[0]));
      if (to_string(m) == c) name = "*" + name;
      out += left(name, 2 * kW + 2);
    }
  }
  out += "\n" + std::string(18, ' ');
  for (int k = 0; k < 2; ++k) {
    out += " | ";
    for (int m = 0; m < 3; ++m) out += cell("Before", kW) + cell("After", kW) + "  ";
  }
  out += "\n";
  for (std::size_t i = 0; i < report.rows.size();) {
    const auto& head = report.rows[i];
    const ReportRow* block[2] = {nullptr, nullptr};
    std::size_t j = i;
    for (; j < report.rows.size() && report.rows[j].strategy == head.strategy && report.rows[j].variant == head.variant; ++j)
      block[report.rows[j].converted == "singer" ? 0 : 1] = &report.rows[j];
    out += left(head.strategy == kBaselineStrategy ? "" : head.strategy, 12) + left(head.variant, 6);
    for (auto* b : block) {
      out += " | ";
      for (std::size_t m = 0; m < 3; ++m) {
        if (!b) {
          out += cell("NA", kW) + cell("NA", kW) + "  ";
          continue;
        }
        out += cell(num(b->cells[m].before), kW) + cell(num(b->cells[m].after), kW) + "  ";
      }
    }
    out += "\n";
    i = j;
  }
  std::string trimmed;
  std::istringstream lines(out);
  for (std::string l; std::getline(lines, l);) trimmed += l.substr(0, l.find_last_not_of(' ') + 1) + "\n";
  return trimmed;
}

// ---- protocol ---------------------------------------------------------------

namespace detail {

// Runs f(i) for i in [0, n) on up to `jobs` threads.
inline void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& f) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(jobs);
  for (std::size_t t = 0; t < jobs; ++t)
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < n; i += jobs) f(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

template <typename T>
std::vector<std::size_t> predict_all(const EvalClassifier& clf, const std::vector<Mat<T>>& mels, std::size_t jobs) {
  std::vector<std::size_t> out(mels.size());
  parallel_for(mels.size(), jobs, [&](std::size_t i) { out[i] = clf.predict(mels[i].template cast<float>()); });
  return out;
}

}  // namespace detail

// Accuracy of the three classifiers on the given mels against their labels.
inline std::array<double, 3> score(const ClassifierSet& clf, const std::vector<Mat<float>>& mels,
                                   const std::vector<features::RecordingMeta>& metas, std::size_t jobs = 1) {
  std::array<double, 3> acc{};
  for (Metric m : kMetrics) {
    std::vector<std::size_t> labels;
    for (const auto& meta : metas) labels.push_back(label_of(meta, m));
    acc[static_cast<std::size_t>(m)] = accuracy(detail::predict_all(clf[m], mels, jobs), labels);
  }
  return acc;
}

// Baseline rows: the classifiers on unconverted test mels.
inline std::vector<ReportRow> baseline_rows(const ClassifierSet& clf, const std::vector<model::Recording>& test,
                                            std::size_t jobs = 1) {
  std::vector<Mat<float>> mels;
  std::vector<features::RecordingMeta> metas;
  for (const auto& r : test) {
    mels.push_back(model::stack<float>(r).chunks);
    metas.push_back(r.meta);
  }
  const auto acc = score(clf, mels, metas, jobs);
  std::vector<ReportRow> rows;
  for (const char* conv : {"singer", "technique"}) {
    ReportRow row{kBaselineStrategy, kBaselineVariant, conv, {}};
    for (std::size_t m = 0; m < 3; ++m) row.cells[m].before = acc[m];
    rows.push_back(row);
  }
  return rows;
}

// Converted mels with the labels each classifier is scored against.
struct ConversionSet {
  std::vector<Mat<float>> before;                 // model reconstructions, one per recording
  std::vector<features::RecordingMeta> before_meta;
  std::vector<Mat<float>> after;                  // one per (recording, target)
  std::vector<features::RecordingMeta> after_meta;  // converted attribute relabelled to the target
  std::vector<std::size_t> source_label;           // original label of the converted attribute
};

// Converts every test recording to every class of `attribute`.
inline ConversionSet convert_all(model::Gmvae<float>& m, const std::vector<model::Recording>& test,
                                 conversion::Strategy strategy, model::Attribute attribute, std::size_t jobs = 1) {
  const std::size_t K = m.classes(attribute);
  const std::size_t R = test.size();
  ConversionSet out;
  out.before.resize(R);
  out.after.resize(R * K);
  std::vector<model::ForwardOut<float>> fwd(R);
  detail::parallel_for(R, jobs, [&](std::size_t i) {
    fwd[i] = m.infer(test[i]);
    out.before[i] = fwd[i].refined;
  });
  detail::parallel_for(R * K, jobs, [&](std::size_t p) {
    const std::size_t i = p / K;
    conversion::ConversionRequest req{attribute, p % K, strategy, 1.0};
    out.after[p] = conversion::convert(m, fwd[i], req).refined;
  });
  for (std::size_t i = 0; i < R; ++i) {
    out.before_meta.push_back(test[i].meta);
    for (std::size_t k = 0; k < K; ++k) {
      auto meta = test[i].meta;
      if (attribute == model::Attribute::kSinger)
        meta.singer = k;
      else
        meta.technique = k;
      out.after_meta.push_back(meta);
      out.source_label.push_back(attribute == model::Attribute::kSinger ? test[i].meta.singer : test[i].meta.technique);
    }
  }
  return out;
}

// One report row: `before` on the model's reconstructions, `after` on all
// K * R conversions (converted attribute against the target, others against
// the original labels).
inline ReportRow evaluate_conversion(model::Gmvae<float>& m, const ClassifierSet& clf,
                                     const std::vector<model::Recording>& test, conversion::Strategy strategy,
                                     model::Attribute attribute, const std::string& variant, std::size_t jobs = 1,
                                     ConversionSet* keep = nullptr) {
  if (test.empty()) throw InvalidInput("evaluate: no test recordings");
  auto set = convert_all(m, test, strategy, attribute, jobs);
  const auto before = score(clf, set.before, set.before_meta, jobs);
  const auto after = score(clf, set.after, set.after_meta, jobs);
  ReportRow row{conversion::to_string(strategy), variant, model::to_string(attribute), {}};
  for (std::size_t k = 0; k < 3; ++k) row.cells[k] = {before[k], after[k]};
  if (keep) *keep = std::move(set);
  return row;
}

// ---- images -------------------------------------------------------------------

// Binary PGM of a grid of mel panels (frames x bands each). Time runs left to
// right, low bands at the bottom; values in [-1, 1] map to 0..255.
inline std::string encode_pgm(const std::vector<std::vector<Mat<float>>>& grid, std::size_t gap = 2) {
  if (grid.empty() || grid.front().empty()) throw InvalidInput("encode_pgm: empty grid");
  std::size_t panel_w = 0, panel_h = 0;
  for (const auto& row : grid)
    for (const auto& p : row) {
      panel_w = std::max(panel_w, p.rows);
      panel_h = std::max(panel_h, p.cols);
    }
  std::size_t cols = 0;
  for (const auto& row : grid) cols = std::max(cols, row.size());
  const std::size_t W = cols * panel_w + (cols - 1) * gap;
  const std::size_t H = grid.size() * panel_h + (grid.size() - 1) * gap;
  std::string img(W * H, static_cast<char>(255));
  for (std::size_t gr = 0; gr < grid.size(); ++gr)
    for (std::size_t gc = 0; gc < grid[gr].size(); ++gc) {
      const auto& p = grid[gr][gc];
      const std::size_t x0 = gc * (panel_w + gap), y0 = gr * (panel_h + gap);
      for (std::size_t t = 0; t < p.rows; ++t)
        for (std::size_t b = 0; b < p.cols; ++b) {
          const double v = std::clamp(static_cast<double>(p(t, b)), -1.0, 1.0);
          const auto px = static_cast<unsigned char>(std::lround((v + 1.0) * 127.5));
          img[(y0 + panel_h - 1 - b) * W + x0 + t] = static_cast<char>(px);
        }
    }
  return "P5\n" + std::to_string(W) + " " + std::to_string(H) + "\n255\n" + img;
}

inline void write_pgm(const std::filesystem::path& path, const std::vector<std::vector<Mat<float>>>& grid) {
  io::write_atomic(path, encode_pgm(grid));
}

}  // namespace gmvc::evaluation
