#pragma once

#include <cmath>
#include <random>

#include "gmvc/nn/param_store.hpp"

namespace gmvc::nn {

inline double xavier_bound(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

// Fills every trainable entry according to its InitKind. Entries are visited
// in name order from a single stream seeded with store.seed(), so the result
// depends only on the seed and the registered shapes.
template <typename T>
void xavier_init(ParamStore<T>& store) {
  std::mt19937_64 rng(store.seed());
  for (auto& [name, e] : store.entries()) {
    switch (e.init) {
      case InitKind::kXavier: {
        std::uniform_real_distribution<double> dist(-1.0, 1.0);
        const double bound = xavier_bound(e.fan_in(), e.fan_out());
        for (auto& v : e.value) v = static_cast<T>(bound * dist(rng));
        break;
      }
      case InitKind::kXavierRow: {
        std::uniform_real_distribution<double> dist(-1.0, 1.0);
        const double bound = xavier_bound(e.cols(), e.cols());
        for (auto& v : e.value) v = static_cast<T>(bound * dist(rng));
        break;
      }
      case InitKind::kZero:
        std::fill(e.value.begin(), e.value.end(), T(0));
        break;
      case InitKind::kOne:
        std::fill(e.value.begin(), e.value.end(), T(1));
        break;
      case InitKind::kLstmBias: {
        const std::size_t h = e.value.size() / 4;
        std::fill(e.value.begin(), e.value.end(), T(0));
        std::fill(e.value.begin() + h, e.value.begin() + 2 * h, T(1));
        break;
      }
      case InitKind::kBuffer:
      case InitKind::kConstant:
        std::fill(e.value.begin(), e.value.end(), e.fill);
        break;
    }
    std::fill(e.grad.begin(), e.grad.end(), T(0));
  }
}

}  // namespace gmvc::nn
