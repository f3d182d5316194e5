#pragma once

#include <cmath>
#include <cstddef>

#include "gmvc/errors.hpp"

namespace gmvc::model {

struct ModelConfig {
  std::size_t latent_dim = 16;
  std::size_t k_singers = 20;
  std::size_t k_techniques = 6;
  double beta = 1.0;
  double gamma = 1.0;
  bool use_attention = true;
  double fixed_variance = std::exp(-2.0);

  // Layer widths. Defaults are the full-size architecture; desk-scale runs
  // shrink them.
  std::size_t conv_filters = 512;
  std::size_t fen_hidden = 512;
  std::size_t bottleneck = 256;
  std::size_t lstm_hidden = 256;
  std::size_t refine_filters = 512;

  void validate() const {
    if (latent_dim < 1) throw InvalidConfig("latent_dim must be >= 1");
    if (k_singers < 1 || k_techniques < 1) throw InvalidConfig("mixture component counts must be >= 1");
    if (!(beta >= 0.0) || !(gamma >= 0.0)) throw InvalidConfig("beta and gamma must be >= 0");
    if (!(fixed_variance > 0.0)) throw InvalidConfig("fixed_variance must be > 0");
    if (conv_filters < 1 || fen_hidden < 1 || bottleneck < 1 || lstm_hidden < 1 || refine_filters < 1)
      throw InvalidConfig("layer widths must be >= 1");
  }
};

// The two latent streams.
enum class Attribute { kSinger, kTechnique };

inline const char* to_string(Attribute a) { return a == Attribute::kSinger ? "singer" : "technique"; }

}  // namespace gmvc::model
