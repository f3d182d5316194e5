#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "gmvc/errors.hpp"
#include "gmvc/nn/param_store.hpp"

namespace gmvc::nn {

struct GradcheckOptions {
  double eps = 1e-5;
  // 0 checks every coordinate; otherwise a seeded random subset per entry.
  std::size_t max_coords_per_param = 0;
  std::uint64_t seed = 0;
  // Denominator floor of the relative error, so that two gradients that are
  // both ~0 do not report a huge relative error.
  double floor = 1e-6;
};

struct GradcheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  // Gradients at the worst coordinate.
  double analytic = 0.0;
  double numeric = 0.0;
};

inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Compares the analytic gradients held in `analytic.grad` with central
// differences (f(theta+eps) - f(theta-eps)) / (2 eps) of `loss` evaluated on
// `probe`, a store with the same entries, possibly of a wider scalar type.
// The report is sorted by decreasing error.
template <typename T, typename U, typename Loss>
std::vector<GradcheckEntry> compare_gradients(const ParamStore<T>& analytic, ParamStore<U>& probe, Loss&& loss,
                                              const GradcheckOptions& opt = {}) {
  if (!(opt.eps > 0.0) || !std::isfinite(opt.eps)) throw InvalidInput("gradcheck: eps must be positive");
  auto eval = [&] {
    const double f = static_cast<double>(loss(probe, false));
    if (!std::isfinite(f)) throw NonFiniteLoss("gradcheck: loss is not finite");
    return f;
  };
  auto eval_wide = [&] {
    const U f = loss(probe, false);
    if (!std::isfinite(static_cast<double>(f))) throw NonFiniteLoss("gradcheck: loss is not finite");
    return f;
  };
  eval();
  std::mt19937_64 rng(opt.seed);
  std::vector<GradcheckEntry> report;
  for (const auto& [name, a] : analytic.entries()) {
    if (!a.trainable()) continue;
    auto& e = probe.at(name);
    if (e.value.size() != a.value.size()) throw ShapeError("gradcheck: entry '" + name + "' differs between stores");
    std::vector<std::size_t> coords(e.value.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (opt.max_coords_per_param > 0 && coords.size() > opt.max_coords_per_param) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(opt.max_coords_per_param);
      std::sort(coords.begin(), coords.end());
    }
    GradcheckEntry entry{name, 0.0, coords.size(), 0.0, 0.0};
    const U eps = static_cast<U>(opt.eps);
    for (std::size_t i : coords) {
      const U saved = e.value[i];
      e.value[i] = saved + eps;
      const U up = eval_wide();
      e.value[i] = saved - eps;
      const U down = eval_wide();
      e.value[i] = saved;
      const double numeric = static_cast<double>((up - down) / (U(2) * eps));
      const double g = static_cast<double>(a.grad[i]);
      const double err = relative_error(g, numeric, opt.floor);
      if (err >= entry.max_rel_error) {
        entry.max_rel_error = err;
        entry.analytic = g;
        entry.numeric = numeric;
      }
    }
    report.push_back(entry);
  }
  std::stable_sort(report.begin(), report.end(),
                   [](const auto& a, const auto& b) { return a.max_rel_error > b.max_rel_error; });
  return report;
}

// Analytic gradients and central differences from the same store.
//
// `loss` is called as loss(store, with_grad) and must be a deterministic
// function of the parameter values. With with_grad set it must also
// accumulate d loss / d theta into the store's gradient buffers.
template <typename T, typename Loss>
std::vector<GradcheckEntry> gradcheck(ParamStore<T>& store, Loss&& loss, const GradcheckOptions& opt = {}) {
  if (!(opt.eps > 0.0) || !std::isfinite(opt.eps)) throw InvalidInput("gradcheck: eps must be positive");
  store.zero_grad();
  if (!std::isfinite(static_cast<double>(loss(store, true)))) throw NonFiniteLoss("gradcheck: loss is not finite");
  ParamStore<T> analytic = store;
  store.zero_grad();
  return compare_gradients(analytic, store, loss, opt);
}

inline double max_error(const std::vector<GradcheckEntry>& report) {
  double m = 0.0;
  for (const auto& e : report) m = std::max(m, e.max_rel_error);
  return m;
}

}  // namespace gmvc::nn
