#pragma once

// Clustering accuracy via one optimal cluster->class assignment over all
// rows, split into All/Known/Novel, plus nearest-neighbor consistency and
// parameter accounting.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "facegcd/common.hpp"
#include "facegcd/model.hpp"
#include "facegcd/tensor.hpp"

namespace facegcd {

struct ParamCounts {
  std::int64_t additional = 0;
  std::int64_t trainable = 0;
  std::int64_t total = 0;
};

struct AccuracyBreakdown {
  double all = 0.0;  // percentages in [0,100]
  double known = 0.0;
  double novel = 0.0;
  int n_all = 0;
  int n_known = 0;
  int n_novel = 0;
  std::map<int, int> mapping;  // cluster id -> class id, injective
};

struct EvalResult {
  AccuracyBreakdown acc;
  double nnc = 0.0;
  ParamCounts params;
};

namespace detail {

// Minimum-cost square assignment via shortest augmenting paths with row and
// column potentials. Returns match[col] = row.
inline std::vector<int> solve_min_assignment(const std::vector<std::vector<double>>& cost) {
  const int n = static_cast<int>(cost.size());
  const double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<size_t>(n) + 1, 0.0), v(static_cast<size_t>(n) + 1, 0.0);
  std::vector<int> p(static_cast<size_t>(n) + 1, 0), way(static_cast<size_t>(n) + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<size_t>(n) + 1, kInf);
    std::vector<char> used(static_cast<size_t>(n) + 1, 0);
    do {
      used[static_cast<size_t>(j0)] = 1;
      const int i0 = p[static_cast<size_t>(j0)];
      int j1 = -1;
      double delta = kInf;
      for (int j = 1; j <= n; ++j)
        if (!used[static_cast<size_t>(j)]) {
          const double cur = cost[static_cast<size_t>(i0) - 1][static_cast<size_t>(j) - 1] -
                             u[static_cast<size_t>(i0)] - v[static_cast<size_t>(j)];
          if (cur < minv[static_cast<size_t>(j)]) {
            minv[static_cast<size_t>(j)] = cur;
            way[static_cast<size_t>(j)] = j0;
          }
          if (minv[static_cast<size_t>(j)] < delta) {
            delta = minv[static_cast<size_t>(j)];
            j1 = j;
          }
        }
      for (int j = 0; j <= n; ++j)
        if (used[static_cast<size_t>(j)]) {
          u[static_cast<size_t>(p[static_cast<size_t>(j)])] += delta;
          v[static_cast<size_t>(j)] -= delta;
        } else {
          minv[static_cast<size_t>(j)] -= delta;
        }
      j0 = j1;
    } while (p[static_cast<size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<size_t>(j0)];
      p[static_cast<size_t>(j0)] = p[static_cast<size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> match(static_cast<size_t>(n));
  for (int j = 1; j <= n; ++j) match[static_cast<size_t>(j) - 1] = p[static_cast<size_t>(j)] - 1;
  return match;
}

inline std::unordered_map<int, int> dense_index(const std::vector<int>& ids) {
  std::vector<int> sorted = ids;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  std::unordered_map<int, int> idx;
  for (size_t i = 0; i < sorted.size(); ++i) idx[sorted[i]] = static_cast<int>(i);
  return idx;
}

}  // namespace detail

// One assignment over the full contingency matrix; per-subset accuracies
// reuse it, so a cluster can only ever claim one identity.
inline AccuracyBreakdown hungarian_accuracy(const std::vector<int>& pred,
                                            const std::vector<int>& truth,
                                            const std::set<int>& known_ids = {}) {
  if (pred.empty()) throw DataError("hungarian_accuracy: no rows");
  if (pred.size() != truth.size()) throw ShapeError("hungarian_accuracy: row count mismatch");
  const int n_rows = static_cast<int>(pred.size());

  std::unordered_map<int, int> cidx = detail::dense_index(pred);
  std::unordered_map<int, int> kidx = detail::dense_index(truth);
  const int nc = static_cast<int>(cidx.size());
  const int nk = static_cast<int>(kidx.size());
  const int n = std::max(nc, nk);

  std::vector<std::vector<double>> cost(static_cast<size_t>(n),
                                        std::vector<double>(static_cast<size_t>(n), 0.0));
  for (int r = 0; r < n_rows; ++r) {
    const int c = cidx[pred[static_cast<size_t>(r)]];
    const int k = kidx[truth[static_cast<size_t>(r)]];
    cost[static_cast<size_t>(c)][static_cast<size_t>(k)] -= 1.0;
  }
  std::vector<int> row_of_col = detail::solve_min_assignment(cost);

  // invert the dense maps to recover original identifiers
  std::vector<int> cluster_ids(static_cast<size_t>(nc)), class_ids(static_cast<size_t>(nk));
  for (const auto& [id, i] : cidx) cluster_ids[static_cast<size_t>(i)] = id;
  for (const auto& [id, i] : kidx) class_ids[static_cast<size_t>(i)] = id;

  AccuracyBreakdown out;
  std::vector<int> class_of_cluster(static_cast<size_t>(nc), -1);
  for (int j = 0; j < n; ++j) {
    const int i = row_of_col[static_cast<size_t>(j)];
    if (i < nc && j < nk) {
      class_of_cluster[static_cast<size_t>(i)] = j;
      out.mapping[cluster_ids[static_cast<size_t>(i)]] = class_ids[static_cast<size_t>(j)];
    }
  }

  int correct_all = 0, correct_known = 0, correct_novel = 0;
  for (int r = 0; r < n_rows; ++r) {
    const int c = cidx[pred[static_cast<size_t>(r)]];
    const int k = kidx[truth[static_cast<size_t>(r)]];
    const bool correct = class_of_cluster[static_cast<size_t>(c)] == k;
    const bool is_known = known_ids.count(truth[static_cast<size_t>(r)]) != 0;
    ++out.n_all;
    if (is_known) ++out.n_known; else ++out.n_novel;
    if (correct) {
      ++correct_all;
      if (is_known) ++correct_known; else ++correct_novel;
    }
  }
  out.all = 100.0 * correct_all / out.n_all;
  out.known = out.n_known > 0 ? 100.0 * correct_known / out.n_known : 0.0;
  out.novel = out.n_novel > 0 ? 100.0 * correct_novel / out.n_novel : 0.0;
  return out;
}

// Shorthand used by clustering grid searches.
inline double hungarian_acc_all(const std::vector<int>& pred, const std::vector<int>& truth) {
  return hungarian_accuracy(pred, truth).all;
}

// Mean same-label fraction over the k Euclidean nearest neighbors of each
// row, self excluded, distance ties broken by row index. Returns a percent.
inline double nnc(const Tensor& embeddings, const std::vector<int>& labels, int k) {
  if (embeddings.ndim() != 2) throw ShapeError("nnc: embeddings must be (N,e)");
  const int n = embeddings.dim(0), e = embeddings.dim(1);
  if (static_cast<int>(labels.size()) != n) throw ShapeError("nnc: labels size mismatch");
  if (k < 1 || k >= n) throw ConfigError("nnc: need 1 <= k < N");

  double total = 0.0;
  std::vector<std::pair<double, int>> cand(static_cast<size_t>(n) - 1);
  for (int i = 0; i < n; ++i) {
    size_t w = 0;
    const float* xi = embeddings.data() + static_cast<std::int64_t>(i) * e;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      const float* xj = embeddings.data() + static_cast<std::int64_t>(j) * e;
      double d = 0.0;
      for (int c = 0; c < e; ++c) {
        const double diff = static_cast<double>(xi[c]) - static_cast<double>(xj[c]);
        d += diff * diff;
      }
      cand[w++] = {d, j};
    }
    std::partial_sort(cand.begin(), cand.begin() + k, cand.end());
    int same = 0;
    for (int t = 0; t < k; ++t)
      if (labels[static_cast<size_t>(cand[static_cast<size_t>(t)].second)] ==
          labels[static_cast<size_t>(i)])
        ++same;
    total += static_cast<double>(same) / k;
  }
  return 100.0 * total / n;
}

// Table-3 style accounting: "additional" covers only the prefix mechanism,
// i.e. everything outside the two encoders and the projection head.
inline bool is_base_param(const std::string& name) {
  return name.rfind("backbone.", 0) == 0 || name.rfind("static.", 0) == 0 ||
         name.rfind("head.", 0) == 0;
}

inline ParamCounts count_params(const ModelConfig& cfg) {
  ParamCounts out;
  for (const PlannedParam& p : parameter_plan(cfg)) {
    std::int64_t numel = 1;
    for (int d : p.shape) numel *= d;
    out.total += numel;
    if (p.trainable) out.trainable += numel;
    if (!is_base_param(p.name)) out.additional += numel;
  }
  return out;
}

inline ParamCounts count_params(const ParamStore& ps) {
  ParamCounts out;
  for (size_t i = 0; i < ps.size(); ++i) {
    const std::int64_t numel = ps.at(i).val().numel();
    out.total += numel;
    if (ps.at(i).requires_grad()) out.trainable += numel;
    if (!is_base_param(ps.name_at(i))) out.additional += numel;
  }
  return out;
}

}  // namespace facegcd
