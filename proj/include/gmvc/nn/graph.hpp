#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "gmvc/errors.hpp"
#include "gmvc/nn/mat.hpp"
#include "gmvc/nn/param_store.hpp"

namespace gmvc::nn {

struct Var {
  std::size_t id = 0;
};

// Running statistics a batch-norm node reads (inference) or updates (training).
template <typename T>
struct BatchNormBuffers {
  std::vector<T>* running_mean = nullptr;
  std::vector<T>* running_var = nullptr;
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.9;

// Reverse-mode tape over 2-D matrices. Nodes are appended in evaluation order,
// so reverse iteration over the tape is a valid topological order for the
// backward sweep. A graph is built once per forward pass and discarded.
template <typename T>
class Graph {
 public:
  using Backward = std::function<void(Graph&, std::size_t)>;

  struct Node {
    Mat<T> value;
    Mat<T> grad;
    bool needs_grad = false;
    Backward backward;
    ParamEntry<T>* param = nullptr;
  };

  // ---- leaves -------------------------------------------------------------

  Var constant(Mat<T> m) { return push(std::move(m), false, {}); }

  // A differentiable leaf not backed by a parameter (gradient readable via grad()).
  Var variable(Mat<T> m) { return push(std::move(m), true, {}); }

  // Leaf bound to a store entry; backward() accumulates into entry.grad.
  Var param(ParamStore<T>& store, const std::string& name) {
    auto& e = store.at(name);
    Var v = push(Mat<T>(e.rows(), e.cols(), e.value), e.trainable(), {});
    nodes_[v.id].param = &e;
    return v;
  }

  const Mat<T>& value(Var v) const { return nodes_[v.id].value; }
  const Mat<T>& grad(Var v) const { return nodes_[v.id].grad; }
  std::size_t size() const { return nodes_.size(); }

  // ---- backward -----------------------------------------------------------

  void backward(Var out) {
    const auto& v = nodes_[out.id].value;
    if (v.size() != 1) throw ShapeError("backward() without upstream needs a scalar output");
    backward(out, Mat<T>(1, 1, T(1)));
  }

  void backward(Var out, const Mat<T>& upstream) {
    auto& root = nodes_[out.id];
    if (upstream.rows != root.value.rows || upstream.cols != root.value.cols)
      throw ShapeError("upstream gradient shape does not match output");
    for (auto& n : nodes_)
      if (n.needs_grad) n.grad = Mat<T>(n.value.rows, n.value.cols);
    if (!root.needs_grad) return;
    root.grad = upstream;
    for (std::size_t i = out.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (n.needs_grad && n.backward) n.backward(*this, i);
    }
    for (auto& n : nodes_) {
      if (n.param && n.needs_grad) {
        auto& g = n.param->grad;
        for (std::size_t k = 0; k < g.size(); ++k) g[k] += n.grad.data[k];
      }
    }
  }

  // ---- linear algebra -----------------------------------------------------

  Var matmul(Var a, Var b, const char* where = "matmul") {
    const auto& A = value(a);
    const auto& B = value(b);
    if (A.cols != B.rows)
      throw ShapeError(std::string(where) + ": " + dims(A) + " x " + dims(B));
    Mat<T> C(A.rows, B.cols);
    as_eigen(C).noalias() = as_eigen(A) * as_eigen(B);
    return push(std::move(C), any(a, b), [a, b](Graph& g, std::size_t self) {
      const auto& dC = g.nodes_[self].grad;
      if (g.nodes_[a.id].needs_grad)
        as_eigen(g.nodes_[a.id].grad).noalias() += as_eigen(dC) * as_eigen(g.value(b)).transpose();
      if (g.nodes_[b.id].needs_grad)
        as_eigen(g.nodes_[b.id].grad).noalias() += as_eigen(g.value(a)).transpose() * as_eigen(dC);
    });
  }

  // a (R x C) + bias (1 x C) broadcast over rows.
  Var add_bias(Var a, Var bias) {
    const auto& A = value(a);
    const auto& b = value(bias);
    if (b.rows != 1 || b.cols != A.cols) throw ShapeError("add_bias: bias " + dims(b) + " for " + dims(A));
    Mat<T> out = A;
    for (std::size_t r = 0; r < out.rows; ++r)
      for (std::size_t c = 0; c < out.cols; ++c) out(r, c) += b.data[c];
    return push(std::move(out), any(a, bias), [a, bias](Graph& g, std::size_t self) {
      const auto& d = g.nodes_[self].grad;
      if (g.nodes_[a.id].needs_grad) accumulate(g.nodes_[a.id].grad, d);
      if (g.nodes_[bias.id].needs_grad) {
        auto& gb = g.nodes_[bias.id].grad;
        for (std::size_t r = 0; r < d.rows; ++r)
          for (std::size_t c = 0; c < d.cols; ++c) gb.data[c] += d(r, c);
      }
    });
  }

  // ---- elementwise --------------------------------------------------------

  Var add(Var a, Var b) {
    same_shape(a, b, "add");
    Mat<T> out = value(a);
    const auto& B = value(b);
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += B.data[i];
    return push(std::move(out), any(a, b), [a, b](Graph& g, std::size_t self) {
      const auto& d = g.nodes_[self].grad;
      if (g.nodes_[a.id].needs_grad) accumulate(g.nodes_[a.id].grad, d);
      if (g.nodes_[b.id].needs_grad) accumulate(g.nodes_[b.id].grad, d);
    });
  }

  Var sub(Var a, Var b) {
    same_shape(a, b, "sub");
    Mat<T> out = value(a);
    const auto& B = value(b);
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= B.data[i];
    return push(std::move(out), any(a, b), [a, b](Graph& g, std::size_t self) {
      const auto& d = g.nodes_[self].grad;
      if (g.nodes_[a.id].needs_grad) accumulate(g.nodes_[a.id].grad, d);
      if (g.nodes_[b.id].needs_grad) {
        auto& gb = g.nodes_[b.id].grad;
        for (std::size_t i = 0; i < d.size(); ++i) gb.data[i] -= d.data[i];
      }
    });
  }

  Var mul(Var a, Var b) {
    same_shape(a, b, "mul");
    Mat<T> out = value(a);
    const auto& B = value(b);
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= B.data[i];
    return push(std::move(out), any(a, b), [a, b](Graph& g, std::size_t self) {
      const auto& d = g.nodes_[self].grad;
      if (g.nodes_[a.id].needs_grad) {
        auto& ga = g.nodes_[a.id].grad;
        const auto& vb = g.value(b);
        for (std::size_t i = 0; i < d.size(); ++i) ga.data[i] += d.data[i] * vb.data[i];
      }
      if (g.nodes_[b.id].needs_grad) {
        auto& gb = g.nodes_[b.id].grad;
        const auto& va = g.value(a);
        for (std::size_t i = 0; i < d.size(); ++i) gb.data[i] += d.data[i] * va.data[i];
      }
    });
  }

  Var scale(Var a, T factor) {
    Mat<T> out = value(a);
    for (auto& x : out.data) x *= factor;
    return push(std::move(out), any(a), [a, factor](Graph& g, std::size_t self) {
      const auto& d = g.nodes_[self].grad;
      auto& ga = g.nodes_[a.id].grad;
      for (std::size_t i = 0; i < d.size(); ++i) ga.data[i] += d.data[i] * factor;
    });
  }

  Var add_scalar(Var a, T offset) {
    Mat<T> out = value(a);
    for (auto& x : out.data) x += offset;
    return push(std::move(out), any(a), [a](Graph& g, std::size_t self) {
      accumulate(g.nodes_[a.id].grad, g.nodes_[self].grad);
    });
  }

  Var relu(Var a) {
    return unary(a, [](T x) { return x > T(0) ? x : T(0); },
                 [](T x, T) { return x > T(0) ? T(1) : T(0); });
  }
  Var tanh(Var a) {
    return unary(a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
  }
  Var sigmoid(Var a) {
    return unary(a, [](T x) { return T(1) / (T(1) + std::exp(-x)); }, [](T, T y) { return y * (T(1) - y); });
  }
  Var exp(Var a) {
    return unary(a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
  }
  Var square(Var a) {
    return unary(a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
  }
  // Gradient is zero where the input is outside [lo, hi].
  Var clamp(Var a, T lo, T hi) {
    return unary(a, [lo, hi](T x) { return std::clamp(x, lo, hi); },
                 [lo, hi](T x, T) { return (x >= lo && x <= hi) ? T(1) : T(0); });
  }

  // ---- reductions ---------------------------------------------------------

  Var sum(Var a) {
    T s = T(0);
    for (T x : value(a).data) s += x;
    return push(Mat<T>(1, 1, s), any(a), [a](Graph& g, std::size_t self) {
      const T d = g.nodes_[self].grad.data[0];
      for (auto& x : g.nodes_[a.id].grad.data) x += d;
    });
  }

  Var row_sum(Var a) {
    const auto& A = value(a);
    Mat<T> out(A.rows, 1);
    for (std::size_t r = 0; r < A.rows; ++r) {
      T s = T(0);
      for (std::size_t c = 0; c < A.cols; ++c) s += A(r, c);
      out.data[r] = s;
    }
    return push(std::move(out), any(a), [a](Graph& g, std::size_t self) {
      const auto& d = g.nodes_[self].grad;
      auto& ga = g.nodes_[a.id].grad;
      for (std::size_t r = 0; r < ga.rows; ++r)
        for (std::size_t c = 0; c < ga.cols; ++c) ga(r, c) += d.data[r];
    });
  }

  // ---- layout -------------------------------------------------------------

  Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    const std::size_t rows = value(parts[0]).rows;
    std::size_t cols = 0;
    bool ng = false;
    for (Var p : parts) {
      if (value(p).rows != rows) throw ShapeError("concat_cols: row mismatch");
      cols += value(p).cols;
      ng = ng || nodes_[p.id].needs_grad;
    }
    Mat<T> out(rows, cols);
    std::size_t off = 0;
    for (Var p : parts) {
      const auto& P = value(p);
      for (std::size_t r = 0; r < rows; ++r) std::copy(P.row(r), P.row(r) + P.cols, out.row(r) + off);
      off += P.cols;
    }
    return push(std::move(out), ng, [parts](Graph& g, std::size_t self) {
      const auto& d = g.nodes_[self].grad;
      std::size_t off = 0;
      for (Var p : parts) {
        auto& n = g.nodes_[p.id];
        const std::size_t c = n.value.cols;
        if (n.needs_grad)
          for (std::size_t r = 0; r < d.rows; ++r)
            for (std::size_t k = 0; k < c; ++k) n.grad(r, k) += d(r, off + k);
        off += c;
      }
    });
  }

  Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no inputs");
    const std::size_t cols = value(parts[0]).cols;
    std::size_t rows = 0;
    bool ng = false;
    for (Var p : parts) {
      if (value(p).cols != cols) throw ShapeError("concat_rows: column mismatch");
      rows += value(p).rows;
      ng = ng || nodes_[p.id].needs_grad;
    }
    Mat<T> out(rows, cols);
    auto it = out.data.begin();
    for (Var p : parts) it = std::copy(value(p).data.begin(), value(p).data.end(), it);
    return push(std::move(out), ng, [parts](Graph& g, std::size_t self) {
      const auto& d = g.nodes_[self].grad;
      std::size_t off = 0;
      for (Var p : parts) {
        auto& n = g.nodes_[p.id];
        if (n.needs_grad)
          for (std::size_t i = 0; i < n.grad.size(); ++i) n.grad.data[i] += d.data[off + i];
        off += n.value.size();
      }
    });
  }

  Var slice_cols(Var a, std::size_t start, std::size_t count) {
    const auto& A = value(a);
    if (start + count > A.cols) throw ShapeError("slice_cols: out of range");
    Mat<T> out(A.rows, count);
    for (std::size_t r = 0; r < A.rows; ++r) std::copy(A.row(r) + start, A.row(r) + start + count, out.row(r));
    return push(std::move(out), any(a), [a, start, count](Graph& g, std::size_t self) {
      const auto& d = g.nodes_[self].grad;
      auto& ga = g.nodes_[a.id].grad;
      for (std::size_t r = 0; r < d.rows; ++r)
        for (std::size_t k = 0; k < count; ++k) ga(r, start + k) += d(r, k);
    });
  }

  // out.row(i) = a.row(index[i]); backward scatter-adds.
  Var gather_rows(Var a, std::vector<std::size_t> index) {
    const auto& A = value(a);
    Mat<T> out(index.size(), A.cols);
    for (std::size_t i = 0; i < index.size(); ++i) {
      if (index[i] >= A.rows) throw ShapeError("gather_rows: index out of range");
      std::copy(A.row(index[i]), A.row(index[i]) + A.cols, out.row(i));
    }
    return push(std::move(out), any(a), [a, index = std::move(index)](Graph& g, std::size_t self) {
      const auto& d = g.nodes_[self].grad;
      auto& ga = g.nodes_[a.id].grad;
      for (std::size_t i = 0; i < index.size(); ++i)
        for (std::size_t c = 0; c < d.cols; ++c) ga(index[i], c) += d(i, c);
    });
  }

  // Rows are grouped into segments of seg_len consecutive rows. Each output
  // row is [x(t-1) | x(t) | x(t+1)] with zeros past the segment edges, the
  // im2col form of a kernel-3, stride-1, same-padded 1-D convolution.
  Var im2col3(Var a, std::size_t seg_len) {
    const auto& A = value(a);
    check_segments(A.rows, seg_len, "im2col3");
    const std::size_t C = A.cols;
    Mat<T> out(A.rows, 3 * C);
    for (std::size_t r = 0; r < A.rows; ++r) {
      const std::size_t t = r % seg_len;
      T* o = out.row(r);
      if (t > 0) std::copy(A.row(r - 1), A.row(r - 1) + C, o);
      std::copy(A.row(r), A.row(r) + C, o + C);
      if (t + 1 < seg_len) std::copy(A.row(r + 1), A.row(r + 1) + C, o + 2 * C);
    }
    return push(std::move(out), any(a), [a, seg_len](Graph& g, std::size_t self) {
      const auto& d = g.nodes_[self].grad;
      auto& ga = g.nodes_[a.id].grad;
      const std::size_t C = ga.cols;
      for (std::size_t r = 0; r < d.rows; ++r) {
        const std::size_t t = r % seg_len;
        const T* dr = d.row(r);
        if (t > 0)
          for (std::size_t c = 0; c < C; ++c) ga(r - 1, c) += dr[c];
        for (std::size_t c = 0; c < C; ++c) ga(r, c) += dr[C + c];
        if (t + 1 < seg_len)
          for (std::size_t c = 0; c < C; ++c) ga(r + 1, c) += dr[2 * C + c];
      }
    });
  }

  Var segment_mean(Var a, std::size_t seg_len) {
    const auto& A = value(a);
    check_segments(A.rows, seg_len, "segment_mean");
    const std::size_t segs = A.rows / seg_len;
    Mat<T> out(segs, A.cols);
    const T inv = T(1) / static_cast<T>(seg_len);
    for (std::size_t s = 0; s < segs; ++s) {
      for (std::size_t t = 0; t < seg_len; ++t) {
        const T* ar = A.row(s * seg_len + t);
        for (std::size_t c = 0; c < A.cols; ++c) out(s, c) += ar[c];
      }
      for (std::size_t c = 0; c < A.cols; ++c) out(s, c) *= inv;
    }
    return push(std::move(out), any(a), [a, seg_len, inv](Graph& g, std::size_t self) {
      const auto& d = g.nodes_[self].grad;
      auto& ga = g.nodes_[a.id].grad;
      for (std::size_t r = 0; r < ga.rows; ++r)
        for (std::size_t c = 0; c < ga.cols; ++c) ga(r, c) += d(r / seg_len, c) * inv;
    });
  }

  Var segment_sum(Var a, std::size_t seg_len) {
    const auto& A = value(a);
    check_segments(A.rows, seg_len, "segment_sum");
    Mat<T> out(A.rows / seg_len, A.cols);
    for (std::size_t r = 0; r < A.rows; ++r)
      for (std::size_t c = 0; c < A.cols; ++c) out(r / seg_len, c) += A(r, c);
    return push(std::move(out), any(a), [a, seg_len](Graph& g, std::size_t self) {
      const auto& d = g.nodes_[self].grad;
      auto& ga = g.nodes_[a.id].grad;
      for (std::size_t r = 0; r < ga.rows; ++r)
        for (std::size_t c = 0; c < ga.cols; ++c) ga(r, c) += d(r / seg_len, c);
    });
  }

  // Each row repeated `times` times.
  Var repeat_rows(Var a, std::size_t times) {
    const auto& A = value(a);
    Mat<T> out(A.rows * times, A.cols);
    for (std::size_t r = 0; r < out.rows; ++r) std::copy(A.row(r / times), A.row(r / times) + A.cols, out.row(r));
    return push(std::move(out), any(a), [a, times](Graph& g, std::size_t self) {
      const auto& d = g.nodes_[self].grad;
      auto& ga = g.nodes_[a.id].grad;
      for (std::size_t r = 0; r < d.rows; ++r)
        for (std::size_t c = 0; c < d.cols; ++c) ga(r / times, c) += d(r, c);
    });
  }

  // a (R x C) scaled row-wise by s (R x 1).
  Var mul_rows(Var a, Var s) {
    const auto& A = value(a);
    const auto& S = value(s);
    if (S.cols != 1 || S.rows != A.rows) throw ShapeError("mul_rows: " + dims(S) + " for " + dims(A));
    Mat<T> out = A;
    for (std::size_t r = 0; r < A.rows; ++r)
      for (std::size_t c = 0; c < A.cols; ++c) out(r, c) *= S.data[r];
    return push(std::move(out), any(a, s), [a, s](Graph& g, std::size_t self) {
      const auto& d = g.nodes_[self].grad;
      const auto& A = g.value(a);
      const auto& S = g.value(s);
      if (g.nodes_[a.id].needs_grad) {
        auto& ga = g.nodes_[a.id].grad;
        for (std::size_t r = 0; r < A.rows; ++r)
          for (std::size_t c = 0; c < A.cols; ++c) ga(r, c) += d(r, c) * S.data[r];
      }
      if (g.nodes_[s.id].needs_grad) {
        auto& gs = g.nodes_[s.id].grad;
        for (std::size_t r = 0; r < A.rows; ++r)
          for (std::size_t c = 0; c < A.cols; ++c) gs.data[r] += d(r, c) * A(r, c);
      }
    });
  }

  // ---- probability --------------------------------------------------------

  // Softmax of a column vector within consecutive segments of seg_len rows.
  Var segment_softmax(Var a, std::size_t seg_len) {
    const auto& A = value(a);
    if (A.cols != 1) throw ShapeError("segment_softmax expects a column vector, got " + dims(A));
    check_segments(A.rows, seg_len, "segment_softmax");
    Mat<T> out(A.rows, 1);
    for (std::size_t s = 0; s < A.rows; s += seg_len) {
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t i = 0; i < seg_len; ++i) mx = std::max(mx, A.data[s + i]);
      T z = T(0);
      for (std::size_t i = 0; i < seg_len; ++i) z += (out.data[s + i] = std::exp(A.data[s + i] - mx));
      for (std::size_t i = 0; i < seg_len; ++i) out.data[s + i] /= z;
    }
    return push(std::move(out), any(a), [a, seg_len](Graph& g, std::size_t self) {
      const auto& y = g.nodes_[self].value;
      const auto& d = g.nodes_[self].grad;
      auto& ga = g.nodes_[a.id].grad;
      for (std::size_t s = 0; s < y.rows; s += seg_len) {
        T dot = T(0);
        for (std::size_t i = 0; i < seg_len; ++i) dot += y.data[s + i] * d.data[s + i];
        for (std::size_t i = 0; i < seg_len; ++i) ga.data[s + i] += y.data[s + i] * (d.data[s + i] - dot);
      }
    });
  }

  Var log_softmax_rows(Var a) {
    const auto& A = value(a);
    Mat<T> out(A.rows, A.cols);
    for (std::size_t r = 0; r < A.rows; ++r) {
      const T* ar = A.row(r);
      T mx = *std::max_element(ar, ar + A.cols);
      T z = T(0);
      for (std::size_t c = 0; c < A.cols; ++c) z += std::exp(ar[c] - mx);
      const T lse = mx + std::log(z);
      for (std::size_t c = 0; c < A.cols; ++c) out(r, c) = ar[c] - lse;
    }
    return push(std::move(out), any(a), [a](Graph& g, std::size_t self) {
      const auto& y = g.nodes_[self].value;
      const auto& d = g.nodes_[self].grad;
      auto& ga = g.nodes_[a.id].grad;
      for (std::size_t r = 0; r < y.rows; ++r) {
        T s = T(0);
        for (std::size_t c = 0; c < y.cols; ++c) s += d(r, c);
        for (std::size_t c = 0; c < y.cols; ++c) ga(r, c) += d(r, c) - std::exp(y(r, c)) * s;
      }
    });
  }

  // out[r] = a(r, column[r]).
  Var pick(Var a, std::vector<std::size_t> column) {
    const auto& A = value(a);
    if (column.size() != A.rows) throw ShapeError("pick: one column index per row required");
    Mat<T> out(A.rows, 1);
    for (std::size_t r = 0; r < A.rows; ++r) {
      if (column[r] >= A.cols) throw InvalidLabel("pick: column index out of range");
      out.data[r] = A(r, column[r]);
    }
    return push(std::move(out), any(a), [a, column = std::move(column)](Graph& g, std::size_t self) {
      const auto& d = g.nodes_[self].grad;
      auto& ga = g.nodes_[a.id].grad;
      for (std::size_t r = 0; r < column.size(); ++r) ga(r, column[r]) += d.data[r];
    });
  }

  // ---- normalization ------------------------------------------------------

  // Per-column normalization over all rows. Training mode uses biased batch
  // statistics and, when buffers are given, updates the running averages.
  Var batch_norm(Var x, Var gamma, Var beta, BatchNormBuffers<T> buffers, bool training,
                 const char* where = "batch_norm") {
    const auto& X = value(x);
    const auto& G = value(gamma);
    const auto& B = value(beta);
    if (G.rows != 1 || G.cols != X.cols || B.rows != 1 || B.cols != X.cols)
      throw ShapeError(std::string(where) + ": scale/shift do not match " + dims(X));
    const std::size_t m = X.rows;
    const std::size_t C = X.cols;
    const T eps = static_cast<T>(kBatchNormEps);
    std::vector<T> mean(C, T(0)), inv_std(C, T(0));
    if (training) {
      if (m == 0) throw ShapeError(std::string(where) + ": empty batch");
      std::vector<T> var(C, T(0));
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < C; ++c) mean[c] += X(r, c);
      for (auto& v : mean) v /= static_cast<T>(m);
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < C; ++c) {
          const T dlt = X(r, c) - mean[c];
          var[c] += dlt * dlt;
        }
      for (std::size_t c = 0; c < C; ++c) {
        var[c] /= static_cast<T>(m);
        inv_std[c] = T(1) / std::sqrt(var[c] + eps);
      }
      if (buffers.running_mean && buffers.running_var) {
        const T mom = static_cast<T>(kBatchNormMomentum);
        for (std::size_t c = 0; c < C; ++c) {
          (*buffers.running_mean)[c] = mom * (*buffers.running_mean)[c] + (T(1) - mom) * mean[c];
          (*buffers.running_var)[c] = mom * (*buffers.running_var)[c] + (T(1) - mom) * var[c];
        }
      }
    } else {
      if (!buffers.running_mean || !buffers.running_var)
        throw ShapeError(std::string(where) + ": inference needs running statistics");
      for (std::size_t c = 0; c < C; ++c) {
        mean[c] = (*buffers.running_mean)[c];
        inv_std[c] = T(1) / std::sqrt((*buffers.running_var)[c] + eps);
      }
    }
    Mat<T> xhat(m, C), out(m, C);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < C; ++c) {
        const T h = (X(r, c) - mean[c]) * inv_std[c];
        xhat(r, c) = h;
        out(r, c) = G.data[c] * h + B.data[c];
      }
    return push(std::move(out), any(x, gamma, beta),
                [x, gamma, beta, training, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph& g,
                                                                                                  std::size_t self) {
                  const auto& d = g.nodes_[self].grad;
                  const auto& G = g.value(gamma);
                  const std::size_t m = d.rows;
                  const std::size_t C = d.cols;
                  std::vector<T> sum_d(C, T(0)), sum_dh(C, T(0));
                  for (std::size_t r = 0; r < m; ++r)
                    for (std::size_t c = 0; c < C; ++c) {
                      sum_d[c] += d(r, c);
                      sum_dh[c] += d(r, c) * xhat(r, c);
                    }
                  if (g.nodes_[gamma.id].needs_grad)
                    for (std::size_t c = 0; c < C; ++c) g.nodes_[gamma.id].grad.data[c] += sum_dh[c];
                  if (g.nodes_[beta.id].needs_grad)
                    for (std::size_t c = 0; c < C; ++c) g.nodes_[beta.id].grad.data[c] += sum_d[c];
                  if (!g.nodes_[x.id].needs_grad) return;
                  auto& gx = g.nodes_[x.id].grad;
                  if (!training) {
                    for (std::size_t r = 0; r < m; ++r)
                      for (std::size_t c = 0; c < C; ++c) gx(r, c) += d(r, c) * G.data[c] * inv_std[c];
                    return;
                  }
                  const T inv_m = T(1) / static_cast<T>(m);
                  for (std::size_t r = 0; r < m; ++r)
                    for (std::size_t c = 0; c < C; ++c) {
                      const T k = G.data[c] * inv_std[c];
                      gx(r, c) += k * (d(r, c) - inv_m * sum_d[c] - xhat(r, c) * inv_m * sum_dh[c]);
                    }
                });
  }

 private:
  std::vector<Node> nodes_;

  Var push(Mat<T> value, bool needs_grad, Backward bw) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    if (needs_grad) n.backward = std::move(bw);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  template <typename... Vs>
  bool any(Vs... vs) const {
    return (nodes_[vs.id].needs_grad || ...);
  }

  template <typename F, typename D>
  Var unary(Var a, F f, D df) {
    Mat<T> out = value(a);
    for (auto& x : out.data) x = f(x);
    return push(std::move(out), any(a), [a, df](Graph& g, std::size_t self) {
      const auto& y = g.nodes_[self].value;
      const auto& d = g.nodes_[self].grad;
      const auto& x = g.value(a);
      auto& ga = g.nodes_[a.id].grad;
      for (std::size_t i = 0; i < d.size(); ++i) ga.data[i] += d.data[i] * df(x.data[i], y.data[i]);
    });
  }

  static void accumulate(Mat<T>& into, const Mat<T>& from) {
    for (std::size_t i = 0; i < from.size(); ++i) into.data[i] += from.data[i];
  }

  void same_shape(Var a, Var b, const char* where) const {
    const auto& A = value(a);
    const auto& B = value(b);
    if (A.rows != B.rows || A.cols != B.cols)
      throw ShapeError(std::string(where) + ": " + dims(A) + " vs " + dims(B));
  }

  static void check_segments(std::size_t rows, std::size_t seg_len, const char* where) {
    if (seg_len == 0 || rows % seg_len != 0)
      throw ShapeError(std::string(where) + ": " + std::to_string(rows) + " rows not divisible into segments of " +
                       std::to_string(seg_len));
  }

  static std::string dims(const Mat<T>& m) { return std::to_string(m.rows) + "x" + std::to_string(m.cols); }
};

}  // namespace gmvc::nn
