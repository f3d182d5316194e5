#pragma once

#include <cmath>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gmvc/errors.hpp"
#include "gmvc/features/chunk.hpp"
#include "gmvc/features/mel_cache.hpp"
#include "gmvc/io.hpp"
#include "gmvc/model/batch.hpp"
#include "gmvc/model/gmvae.hpp"

namespace gmvc::conversion {

using model::Attribute;
using nn::Mat;

enum class Strategy { kChunk, kSequence };

inline std::string to_string(Strategy s) { return s == Strategy::kChunk ? "C-chunk" : "C-sequence"; }

inline Strategy parse_strategy(const std::string& s) {
  if (s == "c-chunk" || s == "C-chunk") return Strategy::kChunk;
  if (s == "c-sequence" || s == "C-sequence") return Strategy::kSequence;
  throw InvalidInput("unknown strategy '" + s + "' (expected c-chunk or c-sequence)");
}

struct ConversionRequest {
  Attribute attribute = Attribute::kSinger;
  std::size_t target = 0;
  Strategy strategy = Strategy::kChunk;
  double lambda = 1.0;
};

// Index of the largest value; ties go to the lowest index.
template <typename T>
std::size_t argmax(std::span<const T> v) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < v.size(); ++k)
    if (v[k] > v[best]) best = k;
  return best;
}

// Most likely mixture component for one chunk latent under equal component
// weights and the shared isotropic variance. With equal variances this is
// the nearest mean in Euclidean distance.
template <typename T>
std::size_t source_component_chunk(std::span<const T> z, const Mat<T>& prior_means) {
  if (prior_means.rows == 0) throw InvalidInput("source_component_chunk: empty prior");
  if (z.size() != prior_means.cols) throw ShapeError("source_component_chunk: latent width mismatch");
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < prior_means.rows; ++k) {
    double d = 0.0;
    for (std::size_t j = 0; j < z.size(); ++j) {
      const double diff = static_cast<double>(z[j]) - static_cast<double>(prior_means(k, j));
      d += diff * diff;
    }
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

// Class predicted by the sequence-level classifier head.
template <typename T>
std::size_t source_component_sequence(std::span<const T> logits) {
  if (logits.empty()) throw InvalidInput("source_component_sequence: empty logits");
  return argmax(logits);
}

// Whether the model's classifier head for `a` received a training signal.
inline bool classifier_trained(const model::ModelConfig& cfg, Attribute a) {
  return (a == Attribute::kSinger ? cfg.beta : cfg.gamma) > 0.0;
}

template <typename T>
struct ConversionResult {
  std::vector<std::size_t> source;  // detected source component per chunk
  Mat<T> z_s, z_t;                  // latents fed to the decoder
  Mat<T> refined;                   // (N*43) x 96 output mel
};

namespace detail {

template <typename T>
void check_request(const model::Gmvae<T>& m, const ConversionRequest& req) {
  if (req.target >= m.classes(req.attribute))
    throw InvalidInput(std::string("target class out of range for ") + model::to_string(req.attribute));
  if (!(req.lambda >= 0.0 && req.lambda <= 1.0)) throw InvalidInput("lambda must lie in [0, 1]");
  if (req.strategy == Strategy::kSequence && !classifier_trained(m.config(), req.attribute))
    throw StrategyUnavailable(std::string("C-sequence needs a trained ") + model::to_string(req.attribute) +
                              " classifier (model has zero weight on that objective)");
}

template <typename T>
std::vector<std::size_t> detect_sources(model::Gmvae<T>& m, const model::ForwardOut<T>& fwd,
                                        const ConversionRequest& req) {
  const auto& z = req.attribute == Attribute::kSinger ? fwd.z_s : fwd.z_t;
  const auto means = m.prior_means(req.attribute);
  std::vector<std::size_t> src(z.rows);
  if (req.strategy == Strategy::kChunk) {
    for (std::size_t n = 0; n < z.rows; ++n) src[n] = source_component_chunk(std::span<const T>(z.row(n), z.cols), means);
  } else {
    const auto& logits = req.attribute == Attribute::kSinger ? fwd.logits_s : fwd.logits_t;
    std::fill(src.begin(), src.end(), source_component_sequence(std::span<const T>(logits.row(0), logits.cols)));
  }
  return src;
}

}  // namespace detail

// z_hat_n = z_n + lambda * (mu_target - mu_source_n) on each requested stream,
// then one decode. Requests must name distinct attributes; the result's
// `source` holds the detections of the first request.
template <typename T>
ConversionResult<T> convert(model::Gmvae<T>& m, const model::ForwardOut<T>& fwd,
                            const std::vector<ConversionRequest>& requests) {
  if (fwd.recordings != 1) throw InvalidInput("convert: expects the forward pass of a single recording");
  if (fwd.z_s != fwd.mu_s || fwd.z_t != fwd.mu_t)
    throw InvalidInput("convert: expects an inference-mode forward pass (z equal to the posterior mean)");
  ConversionResult<T> out;
  out.z_s = fwd.z_s;
  out.z_t = fwd.z_t;
  bool seen[2] = {false, false};
  for (const auto& req : requests) {
    detail::check_request(m, req);
    const int slot = req.attribute == Attribute::kSinger ? 0 : 1;
    if (seen[slot]) throw InvalidInput("convert: attribute requested twice");
    seen[slot] = true;
    const auto src = detail::detect_sources(m, fwd, req);
    if (out.source.empty()) out.source = src;
    const auto means = m.prior_means(req.attribute);
    auto& z = req.attribute == Attribute::kSinger ? out.z_s : out.z_t;
    const T lambda = static_cast<T>(req.lambda);
    for (std::size_t n = 0; n < z.rows; ++n)
      for (std::size_t j = 0; j < z.cols; ++j) {
        const T dmu = means(req.target, j) - means(src[n], j);
        z(n, j) = z(n, j) + lambda * dmu;
      }
  }
  out.refined = m.decode_latents(out.z_s, out.z_t, 1, fwd.steps).second;
  return out;
}

template <typename T>
ConversionResult<T> convert(model::Gmvae<T>& m, const model::ForwardOut<T>& fwd, const ConversionRequest& req) {
  return convert(m, fwd, std::vector<ConversionRequest>{req});
}

// `steps` conversions with lambda_i = req.lambda * i / (steps - 1), from the
// reconstruction (lambda 0) to the full conversion.
template <typename T>
std::vector<ConversionResult<T>> morph_series(model::Gmvae<T>& m, const model::ForwardOut<T>& fwd,
                                              ConversionRequest req, std::size_t steps) {
  if (steps < 2) throw InvalidInput("morph_series: steps must be >= 2");
  const double full = req.lambda;
  std::vector<ConversionResult<T>> out;
  out.reserve(steps);
  for (std::size_t i = 0; i < steps; ++i) {
    req.lambda = i + 1 == steps ? full : full * static_cast<double>(i) / static_cast<double>(steps - 1);
    out.push_back(convert(m, fwd, req));
  }
  return out;
}

// Converted mel in the MEL1 cache format plus a JSON sidecar (<path>.json).
template <typename T>
void write_conversion(const std::filesystem::path& mel_path, const ConversionResult<T>& r,
                      const ConversionRequest& req, const std::string& source_id) {
  features::MelSpectrogram mel;
  mel.frames = r.refined.template cast<float>();
  features::write_mel(mel_path, mel);
  nlohmann::ordered_json j;
  j["source_id"] = source_id;
  j["attribute"] = model::to_string(req.attribute);
  j["strategy"] = to_string(req.strategy);
  j["target"] = req.target;
  j["lambda"] = req.lambda;
  j["source_per_chunk"] = r.source;
  auto side = mel_path;
  side += ".json";
  io::write_atomic(side, j.dump(2) + "\n");
}

}  // namespace gmvc::conversion
