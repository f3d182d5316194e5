#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "gmvc/nn/param_store.hpp"

namespace gmvc::nn {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  std::uint64_t step = 0;
  std::map<std::string, std::vector<T>> m;
  std::map<std::string, std::vector<T>> v;

  bool operator==(const AdamState&) const = default;
};

// One bias-corrected Adam update of every trainable entry, then zeroes all
// gradients. Buffers and constants are never touched.
template <typename T>
void adam_step(ParamStore<T>& store, AdamState<T>& state, double lr, const AdamConfig& cfg = {}) {
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  const T b1 = static_cast<T>(cfg.beta1);
  const T b2 = static_cast<T>(cfg.beta2);
  for (auto& [name, e] : store.entries()) {
    if (!e.trainable()) continue;
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.size() != e.value.size()) m.assign(e.value.size(), T(0));
    if (v.size() != e.value.size()) v.assign(e.value.size(), T(0));
    for (std::size_t i = 0; i < e.value.size(); ++i) {
      const T g = e.grad[i];
      m[i] = b1 * m[i] + (T(1) - b1) * g;
      v[i] = b2 * v[i] + (T(1) - b2) * g * g;
      const double mhat = static_cast<double>(m[i]) / c1;
      const double vhat = static_cast<double>(v[i]) / c2;
      e.value[i] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
  }
  store.zero_grad();
}

}  // namespace gmvc::nn
