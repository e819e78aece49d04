#pragma once

// Semi-supervised contrastive objective. Embeddings arrive as 2B rows where
// row i and row i+B are the two views of sample i; labels carry -1 for
// unlabeled rows. Both terms share one similarity matrix and one
// all-but-self denominator.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "facegcd/autograd.hpp"
#include "facegcd/common.hpp"

namespace facegcd {

struct LossConfig {
  float temperature = 1.0f;
  float lambda = 0.35f;  // weight on the supervised term

  void validate() const {
    if (!(temperature > 0.0f)) throw ConfigError("loss: temperature must be positive");
    if (lambda < 0.0f || lambda > 1.0f) throw ConfigError("loss: lambda must lie in [0,1]");
  }
};

struct LossBreakdown {
  ag::Var total;
  ag::Var unsup;
  ag::Var sup;

  float total_value() const { return total.val()[0]; }
  float unsup_value() const { return unsup.val()[0]; }
  float sup_value() const { return sup.val()[0]; }
};

namespace detail {

inline void check_view_batch(const ag::Var& z) {
  if (!z.defined() || z.shape().size() != 2) throw ShapeError("loss: embeddings must be (2B,e)");
  if (z.dim(0) < 2) throw ConfigError("loss: need at least one sample (two views)");
  if (z.dim(0) % 2 != 0) throw ShapeError("loss: view count must be even");
}

// Similarities over all view pairs, temperature applied, (N,N).
inline ag::Var view_similarities(const ag::Var& z, float temperature) {
  return ag::scale(ag::matmul_nt(z, z), 1.0f / temperature);
}

inline std::vector<std::uint8_t> all_but_self_mask(int n) {
  std::vector<std::uint8_t> mask(static_cast<size_t>(n) * static_cast<size_t>(n), 1);
  for (int i = 0; i < n; ++i) mask[static_cast<size_t>(i) * n + i] = 0;
  return mask;
}

}  // namespace detail

// Mean over all 2B anchors of -log p(paired view | anchor), denominator over
// the 2B-1 other views.
inline ag::Var unsupervised_contrastive(const ag::Var& z, float temperature) {
  detail::check_view_batch(z);
  const int n = z.dim(0), b = n / 2;
  ag::Var sim = detail::view_similarities(z, temperature);
  ag::Var lse = ag::row_logsumexp_masked(sim, detail::all_but_self_mask(n));
  std::vector<int> pair_idx(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) pair_idx[static_cast<size_t>(i)] = (i + b) % n;
  ag::Var pos = ag::select_cols(sim, pair_idx);
  std::vector<float> w(static_cast<size_t>(n), 1.0f / static_cast<float>(n));
  return ag::weighted_mean(ag::sub(lse, pos), w);
}

// Supervised term over labeled anchors: positives are every other labeled
// view of the same class; anchors with no positives drop out of the average.
// labels[i] is the class of view row i, or -1 when unlabeled.
inline ag::Var supervised_contrastive(const ag::Var& z, const std::vector<int>& labels,
                                      float temperature) {
  detail::check_view_batch(z);
  const int n = z.dim(0);
  if (static_cast<int>(labels.size()) != n) throw ShapeError("loss: labels size mismatch");

  std::vector<float> pos_w(static_cast<size_t>(n) * static_cast<size_t>(n), 0.0f);
  std::vector<float> anchor_w(static_cast<size_t>(n), 0.0f);
  int contributing = 0;
  for (int i = 0; i < n; ++i) {
    if (labels[static_cast<size_t>(i)] < 0) continue;
    int count = 0;
    for (int p = 0; p < n; ++p)
      if (p != i && labels[static_cast<size_t>(p)] == labels[static_cast<size_t>(i)]) ++count;
    if (count == 0) continue;
    for (int p = 0; p < n; ++p)
      if (p != i && labels[static_cast<size_t>(p)] == labels[static_cast<size_t>(i)])
        pos_w[static_cast<size_t>(i) * n + p] = 1.0f / static_cast<float>(count);
    anchor_w[static_cast<size_t>(i)] = 1.0f;
    ++contributing;
  }
  if (contributing == 0) return ag::Var::constant(Tensor({1}, {0.0f}));
  for (float& w : anchor_w) w /= static_cast<float>(contributing);

  ag::Var sim = detail::view_similarities(z, temperature);
  ag::Var lse = ag::row_logsumexp_masked(sim, detail::all_but_self_mask(n));
  ag::Var pos_mean = ag::weighted_row_sum(sim, pos_w);
  return ag::weighted_mean(ag::sub(lse, pos_mean), anchor_w);
}

// (1 - lambda) * unsupervised + lambda * supervised.
inline LossBreakdown total_loss(const ag::Var& z, const std::vector<int>& labels,
                                const LossConfig& cfg) {
  cfg.validate();
  LossBreakdown out;
  out.unsup = unsupervised_contrastive(z, cfg.temperature);
  out.sup = supervised_contrastive(z, labels, cfg.temperature);
  out.total = ag::add(ag::scale(out.unsup, 1.0f - cfg.lambda), ag::scale(out.sup, cfg.lambda));
  return out;
}

}  // namespace facegcd
