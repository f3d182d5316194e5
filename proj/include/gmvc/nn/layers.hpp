#pragma once

#include <string>
#include <vector>

#include "gmvc/errors.hpp"
#include "gmvc/nn/graph.hpp"
#include "gmvc/nn/param_store.hpp"

namespace gmvc::nn {

// Everything a layer needs to emit nodes for one forward pass.
template <typename T>
struct Scope {
  Graph<T>& graph;
  ParamStore<T>& store;
  bool training;
};

namespace detail {
template <typename T>
void expect_cols(const Graph<T>& g, Var x, std::size_t cols, const std::string& layer) {
  const auto& v = g.value(x);
  if (v.cols != cols)
    throw ShapeError("layer '" + layer + "': expected " + std::to_string(cols) + " input features, got " +
                     std::to_string(v.cols));
}
}  // namespace detail

struct Linear {
  std::string name;
  std::size_t in = 0;
  std::size_t out = 0;
  bool bias = true;

  template <typename T>
  void declare(ParamStore<T>& store) const {
    store.add(name + ".w", {in, out}, InitKind::kXavier);
    if (bias) store.add(name + ".b", {out}, InitKind::kZero);
  }

  template <typename T>
  Var operator()(Scope<T>& s, Var x) const {
    detail::expect_cols(s.graph, x, in, name);
    Var y = s.graph.matmul(x, s.graph.param(s.store, name + ".w"), name.c_str());
    return bias ? s.graph.add_bias(y, s.graph.param(s.store, name + ".b")) : y;
  }
};

// Kernel 3, stride 1, same padding; rows are grouped into independent
// sequences of `seg_len` frames (one per chunk).
struct Conv1d {
  std::string name;
  std::size_t in = 0;
  std::size_t out = 0;
  bool bias = true;

  static constexpr std::size_t kKernel = 3;

  template <typename T>
  void declare(ParamStore<T>& store) const {
    store.add(name + ".w", {kKernel, in, out}, InitKind::kXavier);
    if (bias) store.add(name + ".b", {out}, InitKind::kZero);
  }

  template <typename T>
  Var operator()(Scope<T>& s, Var x, std::size_t seg_len) const {
    detail::expect_cols(s.graph, x, in, name);
    Var cols = s.graph.im2col3(x, seg_len);
    Var y = s.graph.matmul(cols, s.graph.param(s.store, name + ".w"), name.c_str());
    return bias ? s.graph.add_bias(y, s.graph.param(s.store, name + ".b")) : y;
  }
};

struct BatchNorm {
  std::string name;
  std::size_t channels = 0;

  template <typename T>
  void declare(ParamStore<T>& store) const {
    store.add(name + ".gamma", {channels}, InitKind::kOne);
    store.add(name + ".beta", {channels}, InitKind::kZero);
    store.add(name + ".running_mean", {channels}, InitKind::kBuffer, T(0));
    store.add(name + ".running_var", {channels}, InitKind::kBuffer, T(1));
  }

  template <typename T>
  Var operator()(Scope<T>& s, Var x) const {
    detail::expect_cols(s.graph, x, channels, name);
    BatchNormBuffers<T> buf{&s.store.at(name + ".running_mean").value, &s.store.at(name + ".running_var").value};
    return s.graph.batch_norm(x, s.graph.param(s.store, name + ".gamma"), s.graph.param(s.store, name + ".beta"), buf,
                              s.training, name.c_str());
  }
};

// Bidirectional LSTM over `steps` time steps for `batch` sequences. Input and
// output rows are ordered sequence-major (row = b * steps + n); the output is
// [forward | backward] hidden states, 2 * hidden wide. Gate order i, f, g, o.
struct Blstm {
  std::string name;
  std::size_t in = 0;
  std::size_t hidden = 0;

  std::size_t out_dim() const { return 2 * hidden; }

  template <typename T>
  void declare(ParamStore<T>& store) const {
    for (const char* dir : {".fwd", ".bwd"}) {
      store.add(name + dir + ".wx", {in, 4 * hidden}, InitKind::kXavier);
      store.add(name + dir + ".wh", {hidden, 4 * hidden}, InitKind::kXavier);
      store.add(name + dir + ".b", {4 * hidden}, InitKind::kLstmBias);
    }
  }

  template <typename T>
  Var operator()(Scope<T>& s, Var x, std::size_t batch, std::size_t steps) const {
    detail::expect_cols(s.graph, x, in, name);
    if (s.graph.value(x).rows != batch * steps)
      throw ShapeError("layer '" + name + "': " + std::to_string(s.graph.value(x).rows) + " rows for " +
                       std::to_string(batch) + " sequences of " + std::to_string(steps) + " steps");
    Var fwd = direction(s, x, batch, steps, ".fwd", false);
    Var bwd = direction(s, x, batch, steps, ".bwd", true);
    return s.graph.concat_cols({fwd, bwd});
  }

 private:
  template <typename T>
  Var direction(Scope<T>& s, Var x, std::size_t batch, std::size_t steps, const std::string& dir,
                bool reverse) const {
    auto& g = s.graph;
    const std::string p = name + dir;
    Var projected = g.matmul(x, g.param(s.store, p + ".wx"), p.c_str());
    Var wh = g.param(s.store, p + ".wh");
    Var bias = g.param(s.store, p + ".b");
    const std::size_t H = hidden;

    std::vector<Var> outputs(steps);
    Var h{}, c{};
    for (std::size_t k = 0; k < steps; ++k) {
      const std::size_t n = reverse ? steps - 1 - k : k;
      std::vector<std::size_t> rows(batch);
      for (std::size_t b = 0; b < batch; ++b) rows[b] = b * steps + n;
      Var gates = g.gather_rows(projected, rows);
      if (k > 0) gates = g.add(gates, g.matmul(h, wh));
      gates = g.add_bias(gates, bias);
      Var i = g.sigmoid(g.slice_cols(gates, 0, H));
      Var f = g.sigmoid(g.slice_cols(gates, H, H));
      Var cand = g.tanh(g.slice_cols(gates, 2 * H, H));
      Var o = g.sigmoid(g.slice_cols(gates, 3 * H, H));
      c = k > 0 ? g.add(g.mul(f, c), g.mul(i, cand)) : g.mul(i, cand);
      h = g.mul(o, g.tanh(c));
      outputs[n] = h;
    }
    // concat_rows yields row n * batch + b; reorder to b * steps + n.
    Var stacked = g.concat_rows(outputs);
    std::vector<std::size_t> order(batch * steps);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t n = 0; n < steps; ++n) order[b * steps + n] = n * batch + b;
    return g.gather_rows(stacked, order);
  }
};

}  // namespace gmvc::nn
