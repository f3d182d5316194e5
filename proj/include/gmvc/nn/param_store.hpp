#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "gmvc/errors.hpp"
#include "gmvc/nn/mat.hpp"

namespace gmvc::nn {

// How an entry is filled by xavier_init and whether the optimizer touches it.
enum class InitKind {
  kXavier,      // uniform +-sqrt(6/(fan_in+fan_out))
  kXavierRow,   // same bound with fan_in = fan_out = row width (mixture means)
  kZero,        // biases, BN shift
  kOne,         // BN scale
  kLstmBias,    // zero except the forget-gate block, which is 1
  kBuffer,      // non-trainable state (BN running stats); keeps its value
  kConstant,    // non-trainable, fixed at registration (prior variance)
};

template <typename T>
struct ParamEntry {
  std::vector<std::size_t> shape;
  std::vector<T> value;
  std::vector<T> grad;
  InitKind init = InitKind::kXavier;
  T fill = T(0);  // used by kBuffer / kConstant

  bool trainable() const { return init != InitKind::kBuffer && init != InitKind::kConstant; }

  std::size_t rows() const {
    if (shape.size() < 2) return 1;
    return std::accumulate(shape.begin(), shape.end() - 1, std::size_t{1}, std::multiplies<>());
  }
  std::size_t cols() const { return shape.empty() ? 1 : shape.back(); }

  // Receptive-field-aware fans: for shape {k, in, out} fan_in = k*in, fan_out = k*out.
  std::size_t fan_in() const {
    if (shape.size() < 2) return shape.empty() ? 1 : shape[0];
    return rows();
  }
  std::size_t fan_out() const {
    if (shape.size() < 2) return shape.empty() ? 1 : shape[0];
    std::size_t receptive = 1;
    for (std::size_t i = 0; i + 2 < shape.size(); ++i) receptive *= shape[i];
    return receptive * shape.back();
  }
};

// Named parameters with paired gradient buffers. Ordered by name so that
// iteration, initialization and serialization are deterministic.
template <typename T>
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed = 0) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }
  void set_seed(std::uint64_t s) { seed_ = s; }

  // Registers (or returns the already registered) entry. Re-registering
  // with a different shape is a ShapeError.
  ParamEntry<T>& add(const std::string& name, std::vector<std::size_t> shape, InitKind init,
                     T fill = T(0)) {
    if (shape.empty() || std::any_of(shape.begin(), shape.end(), [](std::size_t d) { return d == 0; }))
      throw ShapeError("parameter '" + name + "' has an empty dimension");
    auto it = entries_.find(name);
    if (it != entries_.end()) {
      if (it->second.shape != shape) throw ShapeError("parameter '" + name + "' re-registered with another shape");
      return it->second;
    }
    ParamEntry<T> e;
    std::size_t n = std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
    e.shape = std::move(shape);
    e.init = init;
    e.fill = fill;
    e.value.assign(n, (init == InitKind::kBuffer || init == InitKind::kConstant) ? fill : T(0));
    e.grad.assign(n, T(0));
    return entries_.emplace(name, std::move(e)).first->second;
  }

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }

  ParamEntry<T>& at(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw InvalidInput("unknown parameter '" + name + "'");
    return it->second;
  }
  const ParamEntry<T>& at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw InvalidInput("unknown parameter '" + name + "'");
    return it->second;
  }

  Mat<T> matrix(const std::string& name) const {
    const auto& e = at(name);
    return Mat<T>(e.rows(), e.cols(), e.value);
  }

  std::map<std::string, ParamEntry<T>>& entries() { return entries_; }
  const std::map<std::string, ParamEntry<T>>& entries() const { return entries_; }

  void zero_grad() {
    for (auto& [_, e] : entries_) std::fill(e.grad.begin(), e.grad.end(), T(0));
  }

  std::size_t trainable_count() const {
    std::size_t n = 0;
    for (const auto& [_, e] : entries_)
      if (e.trainable()) n += e.value.size();
    return n;
  }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out(seed_);
    for (const auto& [name, e] : entries_) {
      auto& d = out.add(name, e.shape, e.init, static_cast<U>(e.fill));
      for (std::size_t i = 0; i < e.value.size(); ++i) d.value[i] = static_cast<U>(e.value[i]);
    }
    return out;
  }

 private:
  std::uint64_t seed_;
  std::map<std::string, ParamEntry<T>> entries_;
};

}  // namespace gmvc::nn
