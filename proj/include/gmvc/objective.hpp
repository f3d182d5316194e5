#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "gmvc/errors.hpp"
#include "gmvc/model/batch.hpp"
#include "gmvc/model/config.hpp"
#include "gmvc/model/gmvae.hpp"
#include "gmvc/nn/graph.hpp"

namespace gmvc::objective {

using nn::Mat;
using nn::Var;

// Terms of the training objective. `recon` is a log-likelihood (<= 0), the
// other terms are nonnegative costs; `total` is the quantity minimized:
//   total = -recon + kld_s + kld_t + beta * ce_s + gamma * ce_t.
// Every term is averaged over the recordings of the batch.
struct LossBreakdown {
  double recon = 0.0;
  double kld_s = 0.0;
  double kld_t = 0.0;
  double ce_s = 0.0;
  double ce_t = 0.0;
  double total = 0.0;
};

// log N(target; mu_x, I) with the constant dropped, divided by `batch`.
template <typename T>
double recon_loglik(const Mat<T>& target, const Mat<T>& mu_x, std::size_t batch = 1) {
  if (target.rows != mu_x.rows || target.cols != mu_x.cols)
    throw ShapeError("recon_loglik: target and reconstruction shapes differ");
  if (batch == 0) throw InvalidInput("recon_loglik: batch must be >= 1");
  double s = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    const double d = static_cast<double>(target.data[i]) - static_cast<double>(mu_x.data[i]);
    s += d * d;
  }
  return -0.5 * s / static_cast<double>(batch);
}

// KL( N(mu_q, diag(exp(log_sigma_q))^2) || N(mu_p, prior_var I) ).
template <typename T>
double kld_diag_gauss(std::span<const T> mu_q, std::span<const T> log_sigma_q, std::span<const T> mu_p,
                      double prior_var) {
  if (!(prior_var > 0.0)) throw InvalidInput("kld_diag_gauss: prior variance must be positive");
  if (mu_q.size() != log_sigma_q.size() || mu_q.size() != mu_p.size())
    throw ShapeError("kld_diag_gauss: dimension mismatch");
  const double log_sigma_p = 0.5 * std::log(prior_var);
  double kl = 0.0;
  for (std::size_t d = 0; d < mu_q.size(); ++d) {
    const double ls = static_cast<double>(log_sigma_q[d]);
    const double diff = static_cast<double>(mu_q[d]) - static_cast<double>(mu_p[d]);
    kl += log_sigma_p - ls + (std::exp(2.0 * ls) + diff * diff) / (2.0 * prior_var) - 0.5;
  }
  return kl;
}

template <typename T>
std::span<const T> row_span(const Mat<T>& m, std::size_t r) {
  return {m.row(r), m.cols};
}

// sum_n alpha_n * KL(q_n || N(means[label], prior_var I)) for one recording.
template <typename T>
double weighted_kld(const Mat<T>& mu, const Mat<T>& log_sigma, std::span<const T> alpha, const Mat<T>& prior_means,
                    double prior_var, std::size_t label) {
  if (label >= prior_means.rows)
    throw InvalidLabel("weighted_kld: label " + std::to_string(label) + " outside " +
                       std::to_string(prior_means.rows) + " components");
  if (alpha.size() != mu.rows || mu.rows != log_sigma.rows) throw ShapeError("weighted_kld: length mismatch");
  double s = 0.0;
  for (std::size_t n = 0; n < mu.rows; ++n)
    s += static_cast<double>(alpha[n]) *
         kld_diag_gauss(row_span(mu, n), row_span(log_sigma, n), row_span(prior_means, label), prior_var);
  return s;
}

// -log softmax(logits)[label]
template <typename T>
double cross_entropy(std::span<const T> logits, std::size_t label) {
  if (label >= logits.size()) throw InvalidLabel("cross_entropy: label out of range");
  double mx = -INFINITY;
  for (T v : logits) mx = std::max(mx, static_cast<double>(v));
  double z = 0.0;
  for (T v : logits) z += std::exp(static_cast<double>(v) - mx);
  return -(static_cast<double>(logits[label]) - mx - std::log(z));
}

inline void check_finite(const LossBreakdown& l) {
  const std::pair<const char*, double> terms[] = {
      {"recon", l.recon}, {"kld_s", l.kld_s}, {"kld_t", l.kld_t}, {"ce_s", l.ce_s}, {"ce_t", l.ce_t}, {"total", l.total}};
  for (const auto& [name, v] : terms)
    if (!std::isfinite(v)) throw NonFiniteLoss(std::string("non-finite loss term '") + name + "'");
}

namespace detail {
template <typename T>
Mat<T> rows_of(const Mat<T>& m, std::size_t first, std::size_t count) {
  Mat<T> out(count, m.cols);
  std::copy(m.row(first), m.row(first) + count * m.cols, out.data.begin());
  return out;
}
}  // namespace detail

// Value-level objective from a forward pass, for reporting and as an
// independent check of the graph-level objective.
template <typename T>
LossBreakdown total_objective(const model::ForwardOut<T>& fwd, const model::Batch<T>& target,
                              const model::ModelConfig& cfg, const Mat<T>& prior_means_s,
                              const Mat<T>& prior_means_t) {
  const std::size_t B = fwd.recordings;
  const std::size_t N = fwd.steps;
  if (target.recordings != B || target.steps != N) throw ShapeError("total_objective: target batch mismatch");
  LossBreakdown l;
  l.recon = recon_loglik(target.chunks, fwd.refined, B) + recon_loglik(target.chunks, fwd.recon, B);
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t first = b * N;
    std::span<const T> as(fwd.alpha_s.data.data() + first, N);
    std::span<const T> at(fwd.alpha_t.data.data() + first, N);
    l.kld_s += weighted_kld(detail::rows_of(fwd.mu_s, first, N), detail::rows_of(fwd.log_sigma_s, first, N), as,
                            prior_means_s, cfg.fixed_variance, target.singer.at(b));
    l.kld_t += weighted_kld(detail::rows_of(fwd.mu_t, first, N), detail::rows_of(fwd.log_sigma_t, first, N), at,
                            prior_means_t, cfg.fixed_variance, target.technique.at(b));
    l.ce_s += cross_entropy(row_span(fwd.logits_s, b), target.singer.at(b));
    l.ce_t += cross_entropy(row_span(fwd.logits_t, b), target.technique.at(b));
  }
  l.kld_s /= static_cast<double>(B);
  l.kld_t /= static_cast<double>(B);
  l.ce_s /= static_cast<double>(B);
  l.ce_t /= static_cast<double>(B);
  l.total = -l.recon + l.kld_s + l.kld_t + cfg.beta * l.ce_s + cfg.gamma * l.ce_t;
  check_finite(l);
  return l;
}

// ---- graph-level objective ----------------------------------------------

struct ObjectiveNodes {
  Var recon, kld_s, kld_t, ce_s, ce_t, total;
};

// Per-row KL(q || N(prior_means[label_row], prior_var I)) as an R x 1 column.
template <typename T>
Var kld_rows(nn::Graph<T>& g, Var mu, Var log_sigma, Var prior_means, const std::vector<std::size_t>& row_labels,
             double prior_var) {
  Var mp = g.gather_rows(prior_means, row_labels);
  Var diff = g.sub(mu, mp);
  Var var_q = g.exp(g.scale(log_sigma, T(2)));
  Var quad = g.scale(g.add(var_q, g.square(diff)), static_cast<T>(1.0 / (2.0 * prior_var)));
  Var per_dim = g.add_scalar(g.sub(quad, log_sigma), static_cast<T>(0.5 * std::log(prior_var) - 0.5));
  return g.row_sum(per_dim);
}

template <typename T>
ObjectiveNodes build_objective(nn::Graph<T>& g, const typename model::Gmvae<T>::Nodes& n,
                               const model::Batch<T>& batch, const model::ModelConfig& cfg, Var prior_means_s,
                               Var prior_means_t) {
  const std::size_t B = batch.recordings;
  const std::size_t N = batch.steps;
  for (std::size_t b = 0; b < B; ++b) {
    if (batch.singer.at(b) >= cfg.k_singers) throw InvalidLabel("singer label out of range");
    if (batch.technique.at(b) >= cfg.k_techniques) throw InvalidLabel("technique label out of range");
  }
  const T inv_b = T(1) / static_cast<T>(B);
  Var x = g.constant(batch.chunks);
  Var sq_refined = g.sum(g.square(g.sub(x, n.refined)));
  Var sq_recon = g.sum(g.square(g.sub(x, n.recon)));
  Var recon = g.scale(g.add(sq_refined, sq_recon), T(-0.5) * inv_b);

  std::vector<std::size_t> rows_s(B * N), rows_t(B * N);
  for (std::size_t r = 0; r < B * N; ++r) {
    rows_s[r] = batch.singer[r / N];
    rows_t[r] = batch.technique[r / N];
  }
  Var kld_s = g.scale(g.sum(g.mul(kld_rows(g, n.mu_s, n.log_sigma_s, prior_means_s, rows_s, cfg.fixed_variance),
                                  n.alpha_s)),
                      inv_b);
  Var kld_t = g.scale(g.sum(g.mul(kld_rows(g, n.mu_t, n.log_sigma_t, prior_means_t, rows_t, cfg.fixed_variance),
                                  n.alpha_t)),
                      inv_b);
  Var ce_s = g.scale(g.sum(g.pick(g.log_softmax_rows(n.logits_s), batch.singer)), -inv_b);
  Var ce_t = g.scale(g.sum(g.pick(g.log_softmax_rows(n.logits_t), batch.technique)), -inv_b);

  Var total = g.add(g.add(g.scale(recon, T(-1)), kld_s), kld_t);
  if (cfg.beta != 0.0) total = g.add(total, g.scale(ce_s, static_cast<T>(cfg.beta)));
  if (cfg.gamma != 0.0) total = g.add(total, g.scale(ce_t, static_cast<T>(cfg.gamma)));
  return {recon, kld_s, kld_t, ce_s, ce_t, total};
}

template <typename T>
LossBreakdown read_breakdown(const nn::Graph<T>& g, const ObjectiveNodes& o) {
  auto v = [&](Var x) { return static_cast<double>(g.value(x).data[0]); };
  LossBreakdown l{v(o.recon), v(o.kld_s), v(o.kld_t), v(o.ce_s), v(o.ce_t), v(o.total)};
  check_finite(l);
  return l;
}

// One training-mode forward pass plus the objective; with `backward` set the
// gradient of `total` is accumulated into the model's parameter store.
template <typename T>
LossBreakdown evaluate(model::Gmvae<T>& m, const model::Batch<T>& batch, std::mt19937_64& rng, bool backward) {
  nn::Graph<T> g;
  auto nodes = m.build(g, batch, model::Mode::kTrain, &rng);
  Var ps = g.param(m.params(), m.prior_name(model::Attribute::kSinger));
  Var pt = g.param(m.params(), m.prior_name(model::Attribute::kTechnique));
  auto obj = build_objective(g, nodes, batch, m.config(), ps, pt);
  auto l = read_breakdown(g, obj);
  if (backward) g.backward(obj.total);
  return l;
}

}  // namespace gmvc::objective
