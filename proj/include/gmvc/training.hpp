#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gmvc/errors.hpp"
#include "gmvc/io.hpp"
#include "gmvc/model/batch.hpp"
#include "gmvc/model/config.hpp"
#include "gmvc/model/gmvae.hpp"
#include "gmvc/nn/adam.hpp"
#include "gmvc/nn/checkpoint.hpp"
#include "gmvc/nn/gradcheck.hpp"
#include "gmvc/objective.hpp"

namespace gmvc::training {

enum class Variant { kM1, kM2, kM3 };

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::kM1: return "M1";
    case Variant::kM2: return "M2";
    case Variant::kM3: return "M3";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  if (s == "M1") return Variant::kM1;
  if (s == "M2") return Variant::kM2;
  if (s == "M3") return Variant::kM3;
  throw InvalidConfig("unknown variant '" + s + "' (expected M1, M2 or M3)");
}

struct TrainConfig {
  Variant variant = Variant::kM3;
  std::size_t batch_size = 128;
  double lr = 1e-4;
  std::size_t max_steps = 5000;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 1000;
  std::string out_dir = "run";
  model::ModelConfig model;
};

// beta, gamma and use_attention implied by a variant.
struct VariantSettings {
  double beta;
  double gamma;
  bool use_attention;
};

inline VariantSettings settings_for(Variant v) {
  switch (v) {
    case Variant::kM1: return {0.0, 0.0, false};
    case Variant::kM2: return {1.0, 1.0, false};
    case Variant::kM3: return {1.0, 1.0, true};
  }
  return {1.0, 1.0, true};
}

inline void validate(const TrainConfig& c) {
  c.model.validate();
  const auto want = settings_for(c.variant);
  if (c.model.beta != want.beta || c.model.gamma != want.gamma || c.model.use_attention != want.use_attention)
    throw InvalidConfig("variant " + to_string(c.variant) + " requires beta=" + std::to_string(want.beta) +
                        " gamma=" + std::to_string(want.gamma) +
                        " use_attention=" + (want.use_attention ? "true" : "false"));
  if (c.batch_size < 1) throw InvalidConfig("batch_size must be >= 1");
  if (!(c.lr > 0.0)) throw InvalidConfig("lr must be > 0");
  if (c.checkpoint_every < 1) throw InvalidConfig("checkpoint_every must be >= 1");
}

inline TrainConfig make_config(Variant v) {
  TrainConfig c;
  c.variant = v;
  const auto s = settings_for(v);
  c.model.beta = s.beta;
  c.model.gamma = s.gamma;
  c.model.use_attention = s.use_attention;
  return c;
}

// ---- run config file -------------------------------------------------------

// Keys accepted in a run config, in the order they are written.
inline const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = {
      "variant",     "batch_size",   "lr",          "max_steps",  "seed",         "latent_dim",
      "k_singers",   "k_techniques", "beta",        "gamma",      "use_attention", "checkpoint_every",
      "out_dir",     "conv_filters", "fen_hidden",  "bottleneck", "lstm_hidden",  "refine_filters"};
  return keys;
}

namespace detail {
inline std::size_t to_count(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  unsigned long long x = 0;
  try {
    x = std::stoull(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size() || v.front() == '-') throw InvalidConfig("'" + key + "' must be a non-negative integer");
  return static_cast<std::size_t>(x);
}

inline double to_real(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double x = 0;
  try {
    x = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size()) throw InvalidConfig("'" + key + "' must be a number");
  return x;
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw InvalidConfig("'" + key + "' must be true or false");
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::string format_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
}  // namespace detail

// Applies one key=value setting; unknown keys are an InvalidConfig.
inline void apply_setting(TrainConfig& c, const std::string& key, const std::string& value) {
  using namespace detail;
  if (key == "variant") c.variant = parse_variant(value);
  else if (key == "batch_size") c.batch_size = to_count(key, value);
  else if (key == "lr") c.lr = to_real(key, value);
  else if (key == "max_steps") c.max_steps = to_count(key, value);
  else if (key == "seed") c.seed = to_count(key, value);
  else if (key == "latent_dim") c.model.latent_dim = to_count(key, value);
  else if (key == "k_singers") c.model.k_singers = to_count(key, value);
  else if (key == "k_techniques") c.model.k_techniques = to_count(key, value);
  else if (key == "beta") c.model.beta = to_real(key, value);
  else if (key == "gamma") c.model.gamma = to_real(key, value);
  else if (key == "use_attention") c.model.use_attention = to_bool(key, value);
  else if (key == "checkpoint_every") c.checkpoint_every = to_count(key, value);
  else if (key == "out_dir") c.out_dir = value;
  else if (key == "conv_filters") c.model.conv_filters = to_count(key, value);
  else if (key == "fen_hidden") c.model.fen_hidden = to_count(key, value);
  else if (key == "bottleneck") c.model.bottleneck = to_count(key, value);
  else if (key == "lstm_hidden") c.model.lstm_hidden = to_count(key, value);
  else if (key == "refine_filters") c.model.refine_filters = to_count(key, value);
  else throw InvalidConfig("unknown config key '" + key + "'");
}

// key=value lines; '#' starts a comment. Duplicate keys are rejected.
inline std::map<std::string, std::string> read_config_entries(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw InvalidConfig("config line " + std::to_string(lineno) + ": expected key=value");
    const std::string key = detail::trim(line.substr(0, eq));
    if (kv.count(key)) throw InvalidConfig("config: duplicate key '" + key + "'");
    kv[key] = detail::trim(line.substr(eq + 1));
  }
  return kv;
}

// beta, gamma and use_attention default to the variant's values and, if
// given, must agree with them.
inline TrainConfig config_from_entries(const std::map<std::string, std::string>& kv) {
  const auto v = kv.find("variant");
  TrainConfig c = make_config(v != kv.end() ? parse_variant(v->second) : Variant::kM3);
  for (const auto& [k, val] : kv) apply_setting(c, k, val);
  validate(c);
  return c;
}

inline TrainConfig parse_run_config(const std::string& text) { return config_from_entries(read_config_entries(text)); }

inline TrainConfig read_run_config(const std::filesystem::path& path) {
  return parse_run_config(io::read_file(path));
}

inline std::string encode_run_config(const TrainConfig& c) {
  std::ostringstream os;
  os << "variant=" << to_string(c.variant) << '\n'
     << "batch_size=" << c.batch_size << '\n'
     << "lr=" << detail::format_real(c.lr) << '\n'
     << "max_steps=" << c.max_steps << '\n'
     << "seed=" << c.seed << '\n'
     << "latent_dim=" << c.model.latent_dim << '\n'
     << "k_singers=" << c.model.k_singers << '\n'
     << "k_techniques=" << c.model.k_techniques << '\n'
     << "beta=" << detail::format_real(c.model.beta) << '\n'
     << "gamma=" << detail::format_real(c.model.gamma) << '\n'
     << "use_attention=" << (c.model.use_attention ? "true" : "false") << '\n'
     << "checkpoint_every=" << c.checkpoint_every << '\n'
     << "out_dir=" << c.out_dir << '\n'
     << "conv_filters=" << c.model.conv_filters << '\n'
     << "fen_hidden=" << c.model.fen_hidden << '\n'
     << "bottleneck=" << c.model.bottleneck << '\n'
     << "lstm_hidden=" << c.model.lstm_hidden << '\n'
     << "refine_filters=" << c.model.refine_filters << '\n';
  return os.str();
}

// ---- batching -------------------------------------------------------------

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  // splitmix64 finalizer
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// One epoch of batches over recordings with the given chunk counts. Each
// batch holds indices of recordings with equal chunk count; every index
// appears exactly once. The order depends only on (seed, epoch).
inline std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& chunk_counts,
                                                          std::size_t batch_size, std::uint64_t seed,
                                                          std::uint64_t epoch = 0) {
  if (chunk_counts.empty()) throw InvalidInput("make_batches: no recordings");
  if (batch_size == 0) throw InvalidInput("make_batches: batch_size must be >= 1");
  std::mt19937_64 rng(mix_seed(seed, epoch));
  std::map<std::size_t, std::vector<std::size_t>> buckets;
  for (std::size_t i = 0; i < chunk_counts.size(); ++i) buckets[chunk_counts[i]].push_back(i);
  std::vector<std::vector<std::size_t>> batches;
  for (auto& [n, idx] : buckets) {
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t i = 0; i < idx.size(); i += batch_size)
      batches.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(i),
                           idx.begin() + static_cast<std::ptrdiff_t>(std::min(i + batch_size, idx.size())));
  }
  std::shuffle(batches.begin(), batches.end(), rng);
  return batches;
}

inline std::vector<std::size_t> chunk_counts(const std::vector<model::Recording>& recs) {
  std::vector<std::size_t> n;
  n.reserve(recs.size());
  for (const auto& r : recs) n.push_back(r.steps());
  return n;
}

// ---- training loop --------------------------------------------------------

inline constexpr const char* kLogHeader = "step,recon,kld_s,kld_t,ce_s,ce_t,total";

inline std::string format_log_line(std::uint64_t step, const objective::LossBreakdown& l) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%llu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g", static_cast<unsigned long long>(step), l.recon,
                l.kld_s, l.kld_t, l.ce_s, l.ce_t, l.total);
  return buf;
}

struct TrainState {
  std::uint64_t step = 0;
  std::vector<std::string> log;  // CSV lines (without header), one per step
  std::vector<objective::LossBreakdown> losses;
  std::filesystem::path latest_checkpoint;
};

// Owns the model, optimizer state and training data for one run.
class Trainer {
 public:
  Trainer(TrainConfig cfg, std::vector<model::Recording> train_set)
      : cfg_(std::move(cfg)), data_(std::move(train_set)), model_(cfg_.model, cfg_.seed) {
    validate(cfg_);
    if (data_.empty()) throw InvalidInput("train: empty training set");
    for (const auto& r : data_) {
      if (r.meta.singer >= cfg_.model.k_singers) throw InvalidLabel("train: singer label exceeds k_singers");
      if (r.meta.technique >= cfg_.model.k_techniques) throw InvalidLabel("train: technique label exceeds k_techniques");
    }
    counts_ = chunk_counts(data_);
    batches_per_epoch_ = make_batches(counts_, cfg_.batch_size, cfg_.seed, 0).size();
  }

  const TrainConfig& config() const { return cfg_; }
  model::Gmvae<float>& model() { return model_; }
  const nn::AdamState<float>& optimizer() const { return adam_; }
  std::uint64_t step() const { return adam_.step; }

  // Batch used for the update that advances the optimizer from `step` to step + 1.
  std::vector<std::size_t> batch_for(std::uint64_t step) const {
    const std::uint64_t epoch = step / batches_per_epoch_;
    return make_batches(counts_, cfg_.batch_size, cfg_.seed, epoch)[step % batches_per_epoch_];
  }

  // One forward/backward/Adam update. Throws NonFiniteLoss without touching
  // the parameters when any term is not finite.
  objective::LossBreakdown step_once() {
    const auto idx = batch_for(adam_.step);
    std::vector<const model::Recording*> recs;
    for (auto i : idx) recs.push_back(&data_[i]);
    const auto batch = model::stack<float>(recs);
    std::mt19937_64 noise(mix_seed(cfg_.seed ^ 0x6E6F697365ull, adam_.step));
    model_.params().zero_grad();
    const auto loss = objective::evaluate(model_, batch, noise, true);
    nn::adam_step(model_.params(), adam_, cfg_.lr);
    return loss;
  }

  void save(const std::filesystem::path& path) const { nn::save_checkpoint(path, model_.params(), adam_); }

  void load(const std::filesystem::path& path) { adam_ = nn::load_checkpoint(path, model_.params()); }

 private:
  TrainConfig cfg_;
  std::vector<model::Recording> data_;
  std::vector<std::size_t> counts_;
  std::size_t batches_per_epoch_ = 1;
  model::Gmvae<float> model_;
  nn::AdamState<float> adam_;
};

inline std::filesystem::path checkpoint_path(const TrainConfig& c) {
  return std::filesystem::path(c.out_dir) / "checkpoint.gmvc";
}
inline std::filesystem::path log_path(const TrainConfig& c) { return std::filesystem::path(c.out_dir) / "train_log.csv"; }
inline std::filesystem::path config_path(const TrainConfig& c) { return std::filesystem::path(c.out_dir) / "run.cfg"; }

struct TrainOptions {
  std::optional<std::filesystem::path> resume_from;
  std::function<void(const std::string&)> on_log;  // called with each CSV line
  bool write_files = true;
};

// Runs the trainer up to cfg.max_steps, writing run.cfg, train_log.csv and
// checkpoint.gmvc under cfg.out_dir. Checkpoints are written every
// checkpoint_every steps and at the end; a non-finite loss aborts the run and
// leaves the last checkpoint in place.
inline TrainState train(Trainer& trainer, const TrainOptions& opt = {}) {
  const auto& cfg = trainer.config();
  TrainState state;
  if (opt.resume_from) {
    trainer.load(*opt.resume_from);
    if (opt.write_files && std::filesystem::exists(log_path(cfg))) {
      std::istringstream is(io::read_file(log_path(cfg)));
      std::string line;
      std::getline(is, line);
      while (std::getline(is, line)) {
        if (line.empty()) continue;
        if (std::stoull(line.substr(0, line.find(','))) > trainer.step()) break;
        state.log.push_back(line);
      }
    }
  }
  state.latest_checkpoint = checkpoint_path(cfg);
  if (opt.write_files) io::write_atomic(config_path(cfg), encode_run_config(cfg));

  auto flush_log = [&] {
    if (!opt.write_files) return;
    std::string text = std::string(kLogHeader) + "\n";
    for (const auto& l : state.log) text += l + "\n";
    io::write_atomic(log_path(cfg), text);
  };

  while (trainer.step() < cfg.max_steps) {
    const auto loss = trainer.step_once();
    const auto line = format_log_line(trainer.step(), loss);
    state.log.push_back(line);
    state.losses.push_back(loss);
    if (opt.on_log) opt.on_log(line);
    if (opt.write_files && (trainer.step() % cfg.checkpoint_every == 0 || trainer.step() == cfg.max_steps)) {
      trainer.save(checkpoint_path(cfg));
      flush_log();
    }
  }
  if (opt.write_files && !std::filesystem::exists(checkpoint_path(cfg))) {
    trainer.save(checkpoint_path(cfg));
    flush_log();
  }
  state.step = trainer.step();
  return state;
}

// Rebuilds a trained model from a run directory (run.cfg + checkpoint.gmvc).
inline model::Gmvae<float> load_model(const std::filesystem::path& run_dir, TrainConfig* cfg_out = nullptr) {
  TrainConfig cfg = read_run_config(run_dir / "run.cfg");
  model::Gmvae<float> m(cfg.model, cfg.seed);
  nn::load_checkpoint(run_dir / "checkpoint.gmvc", m.params());
  if (cfg_out) *cfg_out = cfg;
  return m;
}

// ---- gradient check ---------------------------------------------------------

// Random batch of `recordings` recordings with `steps` chunks each, values
// uniform in [-1, 1] and labels uniform over the model's classes.
template <typename T>
model::Batch<T> random_batch(const model::ModelConfig& cfg, std::size_t recordings, std::size_t steps,
                             std::uint64_t seed) {
  if (recordings == 0 || steps == 0) throw InvalidInput("random batch: recordings and steps must be >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<model::Recording> recs(recordings);
  for (auto& r : recs) {
    for (std::size_t n = 0; n < steps; ++n) {
      features::MelChunk c(features::kChunkFrames, features::kMelBands);
      for (auto& v : c.data) v = static_cast<float>(u(rng));
      r.chunks.push_back(std::move(c));
    }
    r.meta.singer = rng() % cfg.k_singers;
    r.meta.technique = rng() % cfg.k_techniques;
  }
  std::vector<const model::Recording*> ptrs;
  for (const auto& r : recs) ptrs.push_back(&r);
  return model::stack<T>(ptrs);
}

// Finite-difference check of the full training objective: analytic
// gradients at 64-bit precision against central differences evaluated in
// extended precision, over the trainable parameters of a freshly initialized
// model. The reparameterization noise is redrawn from the same seed at every
// evaluation so the loss is a deterministic function of the parameters.
inline std::vector<nn::GradcheckEntry> objective_gradcheck(const model::ModelConfig& cfg, std::size_t recordings,
                                                           std::size_t steps, std::uint64_t seed,
                                                           const nn::GradcheckOptions& opt = {}) {
  using Wide = long double;
  model::Gmvae<double> m(cfg, seed);
  const auto batch = random_batch<double>(cfg, recordings, steps, mix_seed(seed, 1));
  m.params().zero_grad();
  {
    std::mt19937_64 noise(mix_seed(seed, 2));
    objective::evaluate(m, batch, noise, true);
  }
  model::Gmvae<Wide> wide(cfg, m.params().cast<Wide>());
  const auto wide_batch = random_batch<Wide>(cfg, recordings, steps, mix_seed(seed, 1));
  auto loss = [&](nn::ParamStore<Wide>&, bool) {
    std::mt19937_64 noise(mix_seed(seed, 2));
    nn::Graph<Wide> g;
    auto nodes = wide.build(g, wide_batch, model::Mode::kTrain, &noise);
    nn::Var ps = g.param(wide.params(), wide.prior_name(model::Attribute::kSinger));
    nn::Var pt = g.param(wide.params(), wide.prior_name(model::Attribute::kTechnique));
    auto obj = objective::build_objective(g, nodes, wide_batch, cfg, ps, pt);
    return g.value(obj.total).data[0];
  };
  auto report = nn::compare_gradients(m.params(), wide.params(), loss, opt);
  m.params().zero_grad();
  return report;
}

}  // namespace gmvc::training
