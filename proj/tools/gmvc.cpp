#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gmvc/conversion.hpp"
#include "gmvc/errors.hpp"
#include "gmvc/evaluation.hpp"
#include "gmvc/features/audio.hpp"
#include "gmvc/features/manifest.hpp"
#include "gmvc/features/mel.hpp"
#include "gmvc/features/mel_cache.hpp"
#include "gmvc/features/synthetic.hpp"
#include "gmvc/training.hpp"

namespace fs = std::filesystem;
using namespace gmvc;

namespace {

std::vector<model::Recording> load_split(const features::Manifest& m, std::optional<features::Split> split) {
  std::vector<model::Recording> out;
  for (const auto& e : m.entries)
    if (!split || e.split == *split) out.push_back(model::load_recording(m, e));
  return out;
}

// Manifest whose entries all point at mel cache files.
features::Manifest read_cached_manifest(const fs::path& path) {
  auto m = features::read_manifest(path);
  for (const auto& e : m.entries)
    if (fs::path(e.path).extension() != ".mel")
      throw InvalidInput("'" + e.path + "' is not a mel cache; run `gmvc prepare` on this manifest first");
  return m;
}

const features::ManifestEntry& find_entry(const features::Manifest& m, const std::string& id) {
  for (const auto& e : m.entries)
    if (e.meta.id == id) return e;
  throw InvalidInput("no recording with id '" + id + "' in the manifest");
}

model::Attribute parse_attribute(const std::string& s) {
  if (s == "singer") return model::Attribute::kSinger;
  if (s == "technique") return model::Attribute::kTechnique;
  throw InvalidInput("unknown attribute '" + s + "' (expected singer or technique)");
}

std::size_t max_label(const features::Manifest& m, evaluation::Metric a) {
  std::size_t k = 0;
  for (const auto& e : m.entries) k = std::max(k, evaluation::label_of(e.meta, a) + 1);
  return k;
}

void write_text(const fs::path& p, const std::string& s) { io::write_atomic(p, s); }

// ---- subcommands ------------------------------------------------------------

struct Common {
  std::uint64_t seed = 0;
  std::string out_dir = ".";
};

void add_common(CLI::App* c, Common& o) {
  c->add_option("--seed", o.seed, "Random seed")->capture_default_str();
  c->add_option("--out-dir", o.out_dir, "Directory for all outputs")->capture_default_str();
}

struct PrepareArgs {
  Common common;
  std::string manifest;
  std::size_t jobs = 1;
};

int run_prepare(const PrepareArgs& a) {
  const auto in = features::read_manifest(a.manifest);
  const fs::path out = a.common.out_dir;
  features::Manifest cached;
  cached.base_dir = out;
  cached.entries = in.entries;
  for (auto& e : cached.entries) e.path = "mels/" + e.meta.id + ".mel";
  evaluation::detail::parallel_for(in.entries.size(), a.jobs, [&](std::size_t i) {
    const auto mel = features::prepare_recording(features::read_wav(in.resolve(in.entries[i])));
    features::chunk(mel);
    features::write_mel(cached.resolve(cached.entries[i]), mel);
  });
  features::write_manifest(out / "manifest.csv", cached);
  std::cout << "prepared " << cached.entries.size() << " recordings into " << (out / "manifest.csv").string() << "\n";
  return 0;
}

struct SynthArgs {
  Common common;
  features::SyntheticSpec spec;
};

int run_synth(SynthArgs a) {
  a.spec.seed = a.common.seed;
  const auto m = features::write_synthetic_corpus(a.common.out_dir, a.spec);
  std::cout << "wrote " << m.entries.size() << " synthetic recordings to "
            << (fs::path(a.common.out_dir) / "manifest.csv").string() << "\n";
  return 0;
}

struct TrainArgs {
  Common common;
  std::string manifest;
  std::string config;
  std::map<std::string, std::string> overrides;
  bool resume = false;
  bool quiet = false;
};

training::TrainConfig resolve_train_config(const std::string& config_path,
                                           const std::map<std::string, std::string>& overrides) {
  std::map<std::string, std::string> kv;
  if (!config_path.empty()) kv = training::read_config_entries(io::read_file(config_path));
  for (const auto& [k, v] : overrides) kv[k] = v;
  return training::config_from_entries(kv);
}

int run_train(const TrainArgs& a) {
  auto overrides = a.overrides;
  overrides["out_dir"] = a.common.out_dir;
  auto cfg = resolve_train_config(a.config, overrides);
  const auto manifest = read_cached_manifest(a.manifest);
  auto data = load_split(manifest, features::Split::kTrain);
  training::Trainer trainer(cfg, std::move(data));
  training::TrainOptions opt;
  if (a.resume) {
    const auto ckpt = training::checkpoint_path(cfg);
    if (!fs::exists(ckpt)) throw InvalidInput("--resume: no checkpoint at " + ckpt.string());
    opt.resume_from = ckpt;
  }
  const std::size_t every = std::max<std::size_t>(1, cfg.max_steps / 20);
  if (!a.quiet)
    opt.on_log = [&](const std::string& line) {
      const auto step = std::stoull(line.substr(0, line.find(',')));
      if (step % every == 0 || step == cfg.max_steps) std::cout << line << std::endl;
    };
  if (!a.quiet) std::cout << training::kLogHeader << "\n";
  const auto state = training::train(trainer, opt);
  std::cout << "trained " << training::to_string(cfg.variant) << " to step " << state.step << "; checkpoint "
            << state.latest_checkpoint.string() << "\n";
  return 0;
}

struct TrainEvalArgs {
  Common common;
  std::string manifest;
  std::string attribute = "all";
  evaluation::EvalConfig cfg;
  bool quiet = false;
};

int run_train_eval(TrainEvalArgs a) {
  const auto manifest = read_cached_manifest(a.manifest);
  const auto train = load_split(manifest, features::Split::kTrain);
  const auto test = load_split(manifest, features::Split::kTest);
  std::vector<evaluation::Metric> which;
  if (a.attribute == "all")
    which.assign(evaluation::kMetrics.begin(), evaluation::kMetrics.end());
  else
    which.push_back(evaluation::parse_metric(a.attribute));
  const fs::path out = a.common.out_dir;
  std::string csv = "attribute,classes,holdout_accuracy\n";
  for (auto m : which) {
    auto c = a.cfg;
    c.seed = training::mix_seed(a.common.seed, static_cast<std::uint64_t>(m));
    c.classes = max_label(manifest, m);
    evaluation::EvalClassifier clf(m, c);
    const std::size_t every = std::max<std::size_t>(1, c.steps / 10);
    auto r = evaluation::train_eval_classifier(clf, train, test, [&](std::size_t step, float loss) {
      if (!a.quiet && (step % every == 0 || step == c.steps))
        std::cout << evaluation::to_string(m) << " step " << step << " loss " << loss << std::endl;
    });
    clf.save(out);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4f", r.holdout_accuracy);
    csv += evaluation::to_string(m) + "," + std::to_string(c.classes) + "," + buf + "\n";
    std::cout << evaluation::to_string(m) << " holdout accuracy " << buf << "% (" << test.size() << " recordings)\n";
  }
  write_text(out / "holdout.csv", csv);
  return 0;
}

struct ConvertArgs {
  Common common;
  std::string run;
  std::string manifest;
  std::string id;
  std::string attribute = "singer";
  std::size_t target = 0;
  std::string strategy = "c-chunk";
  double lambda = 1.0;
  std::size_t steps = 5;
  bool image = false;
};

std::string output_stem(const ConvertArgs& a) { return a.id + "_" + a.attribute + "-" + std::to_string(a.target); }

int run_convert(const ConvertArgs& a, bool morph) {
  auto m = training::load_model(a.run);
  const auto manifest = read_cached_manifest(a.manifest);
  const auto rec = model::load_recording(manifest, find_entry(manifest, a.id));
  const conversion::ConversionRequest req{parse_attribute(a.attribute), a.target,
                                          conversion::parse_strategy(a.strategy), a.lambda};
  const auto fwd = m.infer(rec);
  const fs::path out = a.common.out_dir;
  std::vector<nn::Mat<float>> panels{fwd.refined};
  if (!morph) {
    const auto r = conversion::convert(m, fwd, req);
    const auto path = out / (output_stem(a) + ".mel");
    conversion::write_conversion(path, r, req, a.id);
    panels.push_back(r.refined);
    std::cout << "wrote " << path.string() << "\n";
  } else {
    const auto series = conversion::morph_series(m, fwd, req, a.steps);
    for (std::size_t i = 0; i < series.size(); ++i) {
      auto step_req = req;
      step_req.lambda = a.lambda * static_cast<double>(i) / static_cast<double>(a.steps - 1);
      if (i + 1 == series.size()) step_req.lambda = a.lambda;
      const auto path = out / (output_stem(a) + "_morph" + std::to_string(i) + ".mel");
      conversion::write_conversion(path, series[i], step_req, a.id);
      if (i > 0) panels.push_back(series[i].refined);
    }
    std::cout << "wrote " << series.size() << " morph steps to " << out.string() << "\n";
  }
  if (a.image) evaluation::write_pgm(out / (output_stem(a) + (morph ? "_morph" : "") + ".pgm"), {panels});
  return 0;
}

struct EvaluateArgs {
  Common common;
  std::vector<std::string> runs;
  std::string classifiers;
  std::string manifest;
  std::string strategy = "all";
  std::string attribute = "all";
  std::size_t jobs = 1;
  std::size_t images = 0;
};

int run_evaluate(const EvaluateArgs& a) {
  const auto manifest = read_cached_manifest(a.manifest);
  const auto test = load_split(manifest, features::Split::kTest);
  if (test.empty()) throw InvalidManifest("evaluate: manifest has no test recordings");
  const auto clf = evaluation::ClassifierSet::load(a.classifiers);
  std::vector<conversion::Strategy> strategies;
  if (a.strategy == "all")
    strategies = {conversion::Strategy::kChunk, conversion::Strategy::kSequence};
  else
    strategies = {conversion::parse_strategy(a.strategy)};
  std::vector<model::Attribute> attributes;
  if (a.attribute == "all")
    attributes = {model::Attribute::kSinger, model::Attribute::kTechnique};
  else
    attributes = {parse_attribute(a.attribute)};

  const fs::path out = a.common.out_dir;
  evaluation::AccuracyReport report;
  report.rows = evaluation::baseline_rows(clf, test, a.jobs);
  for (const auto& run : a.runs) {
    training::TrainConfig cfg;
    auto m = training::load_model(run, &cfg);
    const auto variant = training::to_string(cfg.variant);
    for (auto s : strategies)
      for (auto attr : attributes) {
        if (s == conversion::Strategy::kSequence && !conversion::classifier_trained(cfg.model, attr)) {
          if (a.strategy == "all") {
            std::cerr << "skipping C-sequence for " << variant << ": classifier heads untrained\n";
            continue;
          }
          throw StrategyUnavailable("C-sequence is unavailable for " + variant + " (classifier heads untrained)");
        }
        evaluation::ConversionSet set;
        report.rows.push_back(evaluation::evaluate_conversion(m, clf, test, s, attr, variant, a.jobs, &set));
        const std::size_t K = m.classes(attr);
        for (std::size_t i = 0; i < std::min(a.images, test.size()); ++i) {
          std::vector<nn::Mat<float>> row{set.before[i]};
          for (std::size_t k = 0; k < K; ++k) row.push_back(set.after[i * K + k]);
          evaluation::write_pgm(out / "images" /
                                    (variant + "_" + conversion::to_string(s) + "_" + model::to_string(attr) + "_" +
                                     test[i].meta.id + ".pgm"),
                                {row});
        }
      }
  }
  evaluation::sort_rows(report);
  write_text(out / "report.csv", evaluation::render_csv(report));
  const auto table = evaluation::render_table(report);
  write_text(out / "report.txt", table);
  std::cout << table;
  return 0;
}

struct GradcheckArgs {
  Common common;
  std::string config;
  std::size_t recordings = 2;
  std::size_t chunks = 3;
  double eps = 1e-5;
  std::size_t coords = 16;
  double threshold = 1e-3;
};

int run_gradcheck(const GradcheckArgs& a) {
  const auto cfg = a.config.empty() ? training::make_config(training::Variant::kM3)
                                    : training::read_run_config(a.config);
  nn::GradcheckOptions opt;
  opt.eps = a.eps;
  opt.max_coords_per_param = a.coords;
  opt.seed = a.common.seed;
  const auto report = training::objective_gradcheck(cfg.model, a.recordings, a.chunks, a.common.seed, opt);
  std::string csv = "parameter,checked,max_rel_error,analytic,numeric\n";
  for (const auto& e : report) {
    char buf[160];
    std::snprintf(buf, sizeof buf, ",%zu,%.6e,%.9e,%.9e\n", e.checked, e.max_rel_error, e.analytic, e.numeric);
    csv += e.name + buf;
  }
  write_text(fs::path(a.common.out_dir) / "gradcheck.csv", csv);
  const double worst = nn::max_error(report);
  std::printf("max relative error %.6e over %zu parameters (%s)\n", worst, report.size(),
              report.empty() ? "-" : report.front().name.c_str());
  if (!(worst < a.threshold)) {
    std::fprintf(stderr, "gradient check failed: %.6e >= %.1e\n", worst, a.threshold);
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Singing voice conversion with a Gaussian-mixture VAE"};
  app.require_subcommand(1);

  PrepareArgs prep;
  auto* c_prep = app.add_subcommand("prepare", "Compute the mel cache for a manifest of audio files");
  add_common(c_prep, prep.common);
  c_prep->add_option("--manifest", prep.manifest, "Manifest of WAV files")->required();
  c_prep->add_option("--jobs", prep.jobs, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Write a synthetic mel corpus and manifest");
  add_common(c_synth, synth.common);
  c_synth->add_option("--singers", synth.spec.singers, "Singer classes")->capture_default_str();
  c_synth->add_option("--techniques", synth.spec.techniques, "Technique classes")->capture_default_str();
  c_synth->add_option("--vowels", synth.spec.vowels, "Vowel classes")->capture_default_str();
  c_synth->add_option("--per-class", synth.spec.per_class, "Recordings per combination")->capture_default_str();

  TrainArgs train;
  std::map<std::string, std::string> train_flags;
  auto* c_train = app.add_subcommand("train", "Train a model variant on the train split of a cached manifest");
  add_common(c_train, train.common);
  c_train->add_option("--manifest", train.manifest, "Cached manifest (from prepare or synth)")->required();
  c_train->add_option("--config", train.config, "Run config file (key=value)");
  for (const auto& key : training::config_keys()) {
    if (key == "out_dir" || key == "seed") continue;
    std::string flag = "--" + key;
    std::replace(flag.begin(), flag.end(), '_', '-');
    c_train->add_option(flag, train_flags[key], "Run config '" + key + "'");
  }
  c_train->add_flag("--resume", train.resume, "Continue from the checkpoint in --out-dir");
  c_train->add_flag("--quiet", train.quiet, "Only print the summary line");

  TrainEvalArgs te;
  auto* c_te = app.add_subcommand("train-eval", "Train the attribute classifiers used for evaluation");
  add_common(c_te, te.common);
  c_te->add_option("--manifest", te.manifest, "Cached manifest")->required();
  c_te->add_option("--attribute", te.attribute, "singer, technique, vowel or all")->capture_default_str();
  c_te->add_option("--steps", te.cfg.steps, "Training steps")->capture_default_str();
  c_te->add_option("--batch-size", te.cfg.batch_size, "Batch size")->capture_default_str();
  c_te->add_option("--lr", te.cfg.lr, "Adam learning rate")->capture_default_str();
  c_te->add_option("--filters", te.cfg.filters, "Convolution filters")->capture_default_str();
  c_te->add_option("--hidden", te.cfg.hidden, "Feature extractor hidden width")->capture_default_str();
  c_te->add_option("--bottleneck", te.cfg.bottleneck, "Feature width")->capture_default_str();
  c_te->add_option("--lstm-hidden", te.cfg.lstm_hidden, "LSTM hidden units per direction")->capture_default_str();
  c_te->add_flag("--quiet", te.quiet, "Only print holdout accuracies");

  ConvertArgs conv, morph;
  auto add_conv = [](CLI::App* c, ConvertArgs& a) {
    add_common(c, a.common);
    c->add_option("--run", a.run, "Training output directory")->required();
    c->add_option("--manifest", a.manifest, "Cached manifest")->required();
    c->add_option("--id", a.id, "Recording id")->required();
    c->add_option("--attribute", a.attribute, "singer or technique")->capture_default_str();
    c->add_option("--target", a.target, "Target class")->required();
    c->add_option("--strategy", a.strategy, "c-chunk or c-sequence")->capture_default_str();
    c->add_option("--lambda", a.lambda, "Conversion scale in [0, 1]")->capture_default_str();
    c->add_flag("--image", a.image, "Also write a PGM of the reconstruction and outputs");
  };
  auto* c_conv = app.add_subcommand("convert", "Convert one recording");
  add_conv(c_conv, conv);
  auto* c_morph = app.add_subcommand("morph", "Morph one recording from its reconstruction to a target");
  add_conv(c_morph, morph);
  c_morph->add_option("--steps", morph.steps, "Number of morph steps (>= 2)")->capture_default_str();

  EvaluateArgs ev;
  auto* c_ev = app.add_subcommand("evaluate", "Classifier-based conversion evaluation report");
  add_common(c_ev, ev.common);
  c_ev->add_option("--run", ev.runs, "Training output directory (repeatable)")->required();
  c_ev->add_option("--classifiers", ev.classifiers, "Directory written by train-eval")->required();
  c_ev->add_option("--manifest", ev.manifest, "Cached manifest")->required();
  c_ev->add_option("--strategy", ev.strategy, "c-chunk, c-sequence or all")->capture_default_str();
  c_ev->add_option("--attribute", ev.attribute, "singer, technique or all")->capture_default_str();
  c_ev->add_option("--jobs", ev.jobs, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);
  c_ev->add_option("--images", ev.images, "Spectrogram grids for the first N test recordings")->capture_default_str();

  GradcheckArgs gc;
  auto* c_gc = app.add_subcommand("gradcheck", "Finite-difference check of the training objective");
  add_common(c_gc, gc.common);
  c_gc->add_option("--config", gc.config, "Run config file (variant and model sizes)");
  c_gc->add_option("--recordings", gc.recordings, "Recordings in the random batch")->capture_default_str();
  c_gc->add_option("--chunks", gc.chunks, "Chunks per recording")->capture_default_str();
  c_gc->add_option("--eps", gc.eps, "Finite-difference step")->capture_default_str();
  c_gc->add_option("--coords", gc.coords, "Coordinates per parameter entry (0 = all)")->capture_default_str();
  c_gc->add_option("--threshold", gc.threshold, "Largest accepted relative error")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*c_prep) return run_prepare(prep);
    if (*c_synth) return run_synth(synth);
    if (*c_train) {
      for (const auto& [k, v] : train_flags) {
        std::string flag = "--" + k;
        std::replace(flag.begin(), flag.end(), '_', '-');
        if (c_train->count(flag) > 0) train.overrides[k] = v;
      }
      if (c_train->count("--seed") > 0 || train.config.empty()) train.overrides["seed"] = std::to_string(train.common.seed);
      return run_train(train);
    }
    if (*c_te) return run_train_eval(te);
    if (*c_conv) return run_convert(conv, false);
    if (*c_morph) return run_convert(morph, true);
    if (*c_ev) return run_evaluate(ev);
    if (*c_gc) return run_gradcheck(gc);
  } catch (const NonFiniteLoss& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
