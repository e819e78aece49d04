#pragma once

// Clustering backends for discovery: semi-supervised k-means with anchored
// class centroids, plain k-means, and DBSCAN / agglomerative grid searches
// that pick their hyperparameters by clustering accuracy.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "facegcd/common.hpp"
#include "facegcd/metrics.hpp"
#include "facegcd/tensor.hpp"

namespace facegcd {

struct ClusterConfig {
  int max_iter = 500;
  int n_init = 10;
  double tol = 1e-4;  // total squared centroid movement below this stops
  std::uint64_t seed = 0;
};

struct ClusterInput {
  Tensor embeddings;                      // (N,e)
  std::vector<std::uint8_t> labeled_mask; // per row
  std::vector<int> labels;                // class id where mask is set
  int k = 0;                              // target cluster count
};

inline ClusterConfig kmeans_defaults() {
  ClusterConfig cfg;
  cfg.max_iter = 300;
  return cfg;
}

struct Assignment {
  std::vector<int> cluster_of;
  int k = 0;
  Tensor centroids;  // (k,e) for the centroid methods, empty otherwise
  double wcss = 0.0;
  std::vector<double> wcss_trace;      // winning restart, one entry per iteration
  std::map<int, int> anchor_of_class;  // labeled class -> centroid index
  std::string method;
  std::map<std::string, std::string> hyperparams;
};

namespace detail {

inline double sq_dist(const float* a, const float* b, int e) {
  double acc = 0.0;
  for (int c = 0; c < e; ++c) {
    const double d = static_cast<double>(a[c]) - static_cast<double>(b[c]);
    acc += d * d;
  }
  return acc;
}

inline const float* row_ptr(const Tensor& x, int r) {
  return x.data() + static_cast<std::int64_t>(r) * x.dim(1);
}

// k-means++ over the candidate rows; returns chosen row indices.
inline std::vector<int> kmeanspp_rows(const Tensor& x, const std::vector<int>& candidates,
                                      int n_seeds, Rng& rng) {
  const int e = x.dim(1);
  std::vector<int> chosen;
  if (n_seeds <= 0 || candidates.empty()) return chosen;
  std::uniform_int_distribution<size_t> first(0, candidates.size() - 1);
  chosen.push_back(candidates[first(rng)]);
  std::vector<double> d2(candidates.size());
  while (static_cast<int>(chosen.size()) < n_seeds) {
    double total = 0.0;
    for (size_t i = 0; i < candidates.size(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (int c : chosen)
        best = std::min(best, sq_dist(row_ptr(x, candidates[i]), row_ptr(x, c), e));
      d2[i] = best;
      total += best;
    }
    int pick = -1;
    if (total > 0.0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double target = u(rng), run = 0.0;
      for (size_t i = 0; i < candidates.size(); ++i) {
        run += d2[i];
        if (run >= target) {
          pick = candidates[i];
          break;
        }
      }
      if (pick < 0) pick = candidates.back();
    } else {
      // all candidates coincide with chosen seeds; reuse the lowest row
      pick = candidates.front();
    }
    chosen.push_back(pick);
  }
  return chosen;
}

struct LloydResult {
  std::vector<int> assign;
  Tensor centroids;
  double wcss = 0.0;
  std::vector<double> trace;
};

// Lloyd iterations with optional per-row locks (lock[r] = centroid index or
// -1). Locked rows never move but still pull their centroid's mean.
inline LloydResult lloyd(const Tensor& x, Tensor centroids, const std::vector<int>& lock,
                         int max_iter, double tol) {
  const int n = x.dim(0), e = x.dim(1);
  const int k = centroids.dim(0);
  LloydResult res;
  res.assign.assign(static_cast<size_t>(n), 0);
  for (int iter = 0; iter < max_iter; ++iter) {
    double wcss = 0.0;
    for (int r = 0; r < n; ++r) {
      int best = lock[static_cast<size_t>(r)];
      if (best < 0) {
        double bd = std::numeric_limits<double>::infinity();
        for (int c = 0; c < k; ++c) {
          const double d = sq_dist(row_ptr(x, r), centroids.data() + static_cast<std::int64_t>(c) * e, e);
          if (d < bd) {
            bd = d;
            best = c;
          }
        }
        wcss += bd;
      } else {
        wcss += sq_dist(row_ptr(x, r), centroids.data() + static_cast<std::int64_t>(best) * e, e);
      }
      res.assign[static_cast<size_t>(r)] = best;
    }
    res.trace.push_back(wcss);
    res.wcss = wcss;

    Tensor next = Tensor::zeros({k, e});
    std::vector<int> count(static_cast<size_t>(k), 0);
    for (int r = 0; r < n; ++r) {
      const int c = res.assign[static_cast<size_t>(r)];
      float* dst = next.data() + static_cast<std::int64_t>(c) * e;
      const float* src = row_ptr(x, r);
      for (int j = 0; j < e; ++j) dst[j] += src[j];
      ++count[static_cast<size_t>(c)];
    }
    double moved = 0.0;
    for (int c = 0; c < k; ++c) {
      float* dst = next.data() + static_cast<std::int64_t>(c) * e;
      float* old = centroids.data() + static_cast<std::int64_t>(c) * e;
      if (count[static_cast<size_t>(c)] == 0) {
        // empty cluster keeps its previous position
        for (int j = 0; j < e; ++j) dst[j] = old[j];
      } else {
        for (int j = 0; j < e; ++j) dst[j] /= static_cast<float>(count[static_cast<size_t>(c)]);
      }
      moved += sq_dist(dst, old, e);
    }
    centroids = next;
    if (moved < tol) break;
  }
  // final assignment against the settled centroids, so wcss matches them
  double wcss = 0.0;
  for (int r = 0; r < n; ++r) {
    int best = lock[static_cast<size_t>(r)];
    if (best < 0) {
      double bd = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        const double d = sq_dist(row_ptr(x, r), centroids.data() + static_cast<std::int64_t>(c) * e, e);
        if (d < bd) {
          bd = d;
          best = c;
        }
      }
      wcss += bd;
    } else {
      wcss += sq_dist(row_ptr(x, r), centroids.data() + static_cast<std::int64_t>(best) * e, e);
    }
    res.assign[static_cast<size_t>(r)] = best;
  }
  res.trace.push_back(wcss);
  res.wcss = wcss;
  res.centroids = std::move(centroids);
  return res;
}

inline void check_matrix(const Tensor& x) {
  if (x.ndim() != 2 || x.dim(0) < 1 || x.dim(1) < 1)
    throw ShapeError("clustering: expected a nonempty (N,e) matrix");
}

}  // namespace detail

// Semi-supervised k-means: one anchored centroid per distinct labeled class
// (ascending class order), the rest seeded by k-means++ over unlabeled rows.
// labels[i] < 0 marks row i unlabeled.
inline Assignment ssk_cluster(const Tensor& x, const std::vector<int>& labels, int k,
                              const ClusterConfig& cfg = {}) {
  detail::check_matrix(x);
  const int n = x.dim(0), e = x.dim(1);
  if (static_cast<int>(labels.size()) != n) throw ShapeError("ssk: labels size mismatch");
  if (k < 1 || k > n) throw ConfigError("ssk: need 1 <= k <= N");

  std::set<int> class_set;
  for (int l : labels)
    if (l >= 0) class_set.insert(l);
  const int n_classes = static_cast<int>(class_set.size());
  if (k < n_classes) throw ConfigError("ssk: k smaller than distinct labeled classes");

  std::map<int, int> anchor;
  int next_idx = 0;
  for (int c : class_set) anchor[c] = next_idx++;

  std::vector<int> lock(static_cast<size_t>(n), -1);
  std::vector<int> unlabeled;
  for (int r = 0; r < n; ++r) {
    if (labels[static_cast<size_t>(r)] >= 0)
      lock[static_cast<size_t>(r)] = anchor[labels[static_cast<size_t>(r)]];
    else
      unlabeled.push_back(r);
  }

  // anchored centroids start at their class means
  Tensor anchored = Tensor::zeros({n_classes, e});
  std::vector<int> anchored_count(static_cast<size_t>(n_classes), 0);
  for (int r = 0; r < n; ++r) {
    const int c = lock[static_cast<size_t>(r)];
    if (c < 0) continue;
    float* dst = anchored.data() + static_cast<std::int64_t>(c) * e;
    const float* src = detail::row_ptr(x, r);
    for (int j = 0; j < e; ++j) dst[j] += src[j];
    ++anchored_count[static_cast<size_t>(c)];
  }
  for (int c = 0; c < n_classes; ++c) {
    float* dst = anchored.data() + static_cast<std::int64_t>(c) * e;
    for (int j = 0; j < e; ++j) dst[j] /= static_cast<float>(anchored_count[static_cast<size_t>(c)]);
  }

  std::vector<int> seed_pool = unlabeled;
  if (seed_pool.empty()) {
    seed_pool.resize(static_cast<size_t>(n));
    for (int r = 0; r < n; ++r) seed_pool[static_cast<size_t>(r)] = r;
  }

  Assignment best;
  best.method = "ssk";
  bool have_best = false;
  for (int restart = 0; restart < cfg.n_init; ++restart) {
    Rng rng = make_rng(cfg.seed, "cluster-restart", static_cast<std::uint64_t>(restart));
    std::vector<int> seeds = detail::kmeanspp_rows(x, seed_pool, k - n_classes, rng);
    Tensor centroids({k, e});
    for (int c = 0; c < n_classes; ++c)
      std::copy_n(anchored.data() + static_cast<std::int64_t>(c) * e, e,
                  centroids.data() + static_cast<std::int64_t>(c) * e);
    for (size_t s = 0; s < seeds.size(); ++s)
      std::copy_n(detail::row_ptr(x, seeds[s]), e,
                  centroids.data() + static_cast<std::int64_t>(n_classes + static_cast<int>(s)) * e);
    detail::LloydResult run = detail::lloyd(x, std::move(centroids), lock, cfg.max_iter, cfg.tol);
    if (!have_best || run.wcss < best.wcss) {
      have_best = true;
      best.cluster_of = std::move(run.assign);
      best.centroids = std::move(run.centroids);
      best.wcss = run.wcss;
      best.wcss_trace = std::move(run.trace);
      best.hyperparams["restart"] = std::to_string(restart);
    }
  }
  best.k = k;
  best.anchor_of_class = std::move(anchor);
  best.hyperparams["n_init"] = std::to_string(cfg.n_init);
  best.hyperparams["max_iter"] = std::to_string(cfg.max_iter);
  return best;
}

inline Assignment ssk_cluster(const ClusterInput& inp, const ClusterConfig& cfg = {}) {
  if (inp.embeddings.ndim() != 2) throw ShapeError("ssk: embeddings must be (N,e)");
  const int n = inp.embeddings.dim(0);
  if (static_cast<int>(inp.labeled_mask.size()) != n ||
      static_cast<int>(inp.labels.size()) != n)
    throw ShapeError("ssk: mask/labels size mismatch");
  std::vector<int> labels(static_cast<size_t>(n), -1);
  for (int r = 0; r < n; ++r)
    if (inp.labeled_mask[static_cast<size_t>(r)]) labels[static_cast<size_t>(r)] = inp.labels[static_cast<size_t>(r)];
  return ssk_cluster(inp.embeddings, labels, inp.k, cfg);
}

// Nearest-centroid assignment for held-out rows (ties -> lowest centroid).
inline std::vector<int> assign_nearest(const Tensor& centroids, const Tensor& x) {
  detail::check_matrix(centroids);
  detail::check_matrix(x);
  if (centroids.dim(1) != x.dim(1)) throw ShapeError("assign_nearest: width mismatch");
  const int n = x.dim(0), k = centroids.dim(0), e = x.dim(1);
  std::vector<int> out(static_cast<size_t>(n), 0);
  for (int r = 0; r < n; ++r) {
    double bd = std::numeric_limits<double>::infinity();
    int best = 0;
    for (int c = 0; c < k; ++c) {
      const double d = detail::sq_dist(detail::row_ptr(x, r),
                                       centroids.data() + static_cast<std::int64_t>(c) * e, e);
      if (d < bd) {
        bd = d;
        best = c;
      }
    }
    out[static_cast<size_t>(r)] = best;
  }
  return out;
}

inline Assignment kmeans_cluster(const Tensor& x, int k, const ClusterConfig& cfg = kmeans_defaults()) {
  detail::check_matrix(x);
  if (k < 1 || k > x.dim(0)) throw ConfigError("kmeans: need 1 <= k <= N");
  Assignment out = ssk_cluster(x, std::vector<int>(static_cast<size_t>(x.dim(0)), -1), k, cfg);
  out.method = "kmeans";
  out.anchor_of_class.clear();
  return out;
}

// Single DBSCAN run; noise rows become trailing singleton clusters.
inline Assignment dbscan_cluster(const Tensor& x, double eps, int min_samples) {
  detail::check_matrix(x);
  if (eps <= 0.0 || min_samples < 1) throw ConfigError("dbscan: bad eps/min_samples");
  const int n = x.dim(0), e = x.dim(1);
  const double eps2 = eps * eps;

  std::vector<std::vector<int>> neigh(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j)
      if (detail::sq_dist(detail::row_ptr(x, i), detail::row_ptr(x, j), e) <= eps2)
        neigh[static_cast<size_t>(i)].push_back(j);  // includes i itself
  }
  std::vector<bool> core(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i)
    core[static_cast<size_t>(i)] = static_cast<int>(neigh[static_cast<size_t>(i)].size()) >= min_samples;

  Assignment out;
  out.method = "dbscan";
  out.cluster_of.assign(static_cast<size_t>(n), -1);
  int next_cluster = 0;
  std::vector<int> stack;
  for (int i = 0; i < n; ++i) {
    if (!core[static_cast<size_t>(i)] || out.cluster_of[static_cast<size_t>(i)] >= 0) continue;
    const int cid = next_cluster++;
    out.cluster_of[static_cast<size_t>(i)] = cid;
    stack.assign(1, i);
    while (!stack.empty()) {
      const int p = stack.back();
      stack.pop_back();
      if (!core[static_cast<size_t>(p)]) continue;
      for (int q : neigh[static_cast<size_t>(p)]) {
        if (out.cluster_of[static_cast<size_t>(q)] >= 0) continue;
        out.cluster_of[static_cast<size_t>(q)] = cid;
        stack.push_back(q);
      }
    }
  }
  int n_noise = 0;
  for (int i = 0; i < n; ++i)
    if (out.cluster_of[static_cast<size_t>(i)] < 0) {
      out.cluster_of[static_cast<size_t>(i)] = next_cluster++;
      ++n_noise;
    }
  out.k = next_cluster;
  out.hyperparams["eps"] = std::to_string(eps);
  out.hyperparams["min_samples"] = std::to_string(min_samples);
  out.hyperparams["noise"] = std::to_string(n_noise);
  return out;
}

// Exhaustive eps x min_samples sweep; best cell by clustering accuracy
// against the supplied ground truth, first (smallest) cell wins ties.
inline Assignment dbscan_grid(const Tensor& x, const std::vector<int>& truth) {
  detail::check_matrix(x);
  if (static_cast<int>(truth.size()) != x.dim(0)) throw ShapeError("dbscan_grid: truth size mismatch");
  Assignment best;
  double best_acc = -1.0;
  for (int step = 1; step <= 200; ++step) {
    const double eps = 0.05 * step;
    for (int min_samples : {3, 5, 8, 10}) {
      Assignment run = dbscan_cluster(x, eps, min_samples);
      const double acc = hungarian_acc_all(run.cluster_of, truth);
      if (acc > best_acc) {
        best_acc = acc;
        best = std::move(run);
      }
    }
  }
  best.hyperparams["selected_acc"] = std::to_string(best_acc);
  return best;
}

enum class Affinity { euclidean, cosine };
enum class Linkage { ward, complete, average, single };

inline const char* affinity_name(Affinity a) {
  return a == Affinity::euclidean ? "euclidean" : "cosine";
}
inline const char* linkage_name(Linkage l) {
  switch (l) {
    case Linkage::ward: return "ward";
    case Linkage::complete: return "complete";
    case Linkage::average: return "average";
    case Linkage::single: return "single";
  }
  return "?";
}

inline Affinity affinity_from_string(const std::string& s) {
  if (s == "euclidean") return Affinity::euclidean;
  if (s == "cosine") return Affinity::cosine;
  throw ConfigError("hac: unknown affinity '" + s + "'");
}

inline Linkage linkage_from_string(const std::string& s) {
  if (s == "ward") return Linkage::ward;
  if (s == "complete") return Linkage::complete;
  if (s == "average") return Linkage::average;
  if (s == "single") return Linkage::single;
  throw ConfigError("hac: unknown linkage '" + s + "'");
}

// Agglomerative clustering down to k clusters via Lance-Williams updates.
inline Assignment hac_cluster(const Tensor& x, int k, Affinity affinity, Linkage linkage) {
  detail::check_matrix(x);
  const int n = x.dim(0), e = x.dim(1);
  if (k < 1 || k > n) throw ConfigError("hac: need 1 <= k <= N");
  if (linkage == Linkage::ward && affinity != Affinity::euclidean)
    throw ConfigError("hac: ward requires euclidean affinity");

  // pairwise dissimilarity; ward tracks squared distances internally
  std::vector<std::vector<double>> d(static_cast<size_t>(n), std::vector<double>(static_cast<size_t>(n), 0.0));
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      double v;
      if (affinity == Affinity::euclidean) {
        v = detail::sq_dist(detail::row_ptr(x, i), detail::row_ptr(x, j), e);
        if (linkage != Linkage::ward) v = std::sqrt(v);
      } else {
        double dot = 0.0, ni = 0.0, nj = 0.0;
        const float* a = detail::row_ptr(x, i);
        const float* b = detail::row_ptr(x, j);
        for (int c = 0; c < e; ++c) {
          dot += static_cast<double>(a[c]) * b[c];
          ni += static_cast<double>(a[c]) * a[c];
          nj += static_cast<double>(b[c]) * b[c];
        }
        v = 1.0 - dot / std::max(std::sqrt(ni) * std::sqrt(nj), 1e-12);
      }
      d[static_cast<size_t>(i)][static_cast<size_t>(j)] = v;
      d[static_cast<size_t>(j)][static_cast<size_t>(i)] = v;
    }

  std::vector<int> size(static_cast<size_t>(n), 1);
  std::vector<bool> active(static_cast<size_t>(n), true);
  std::vector<int> parent(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) parent[static_cast<size_t>(i)] = i;
  int n_active = n;
  while (n_active > k) {
    int bi = -1, bj = -1;
    double bd = std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) {
      if (!active[static_cast<size_t>(i)]) continue;
      for (int j = i + 1; j < n; ++j) {
        if (!active[static_cast<size_t>(j)]) continue;
        if (d[static_cast<size_t>(i)][static_cast<size_t>(j)] < bd) {
          bd = d[static_cast<size_t>(i)][static_cast<size_t>(j)];
          bi = i;
          bj = j;
        }
      }
    }
    // merge bj into bi, then refresh distances to every other active cluster
    const double ni = size[static_cast<size_t>(bi)], nj = size[static_cast<size_t>(bj)];
    for (int m = 0; m < n; ++m) {
      if (!active[static_cast<size_t>(m)] || m == bi || m == bj) continue;
      const double dim = d[static_cast<size_t>(bi)][static_cast<size_t>(m)];
      const double djm = d[static_cast<size_t>(bj)][static_cast<size_t>(m)];
      double nd;
      switch (linkage) {
        case Linkage::single: nd = std::min(dim, djm); break;
        case Linkage::complete: nd = std::max(dim, djm); break;
        case Linkage::average: nd = (ni * dim + nj * djm) / (ni + nj); break;
        case Linkage::ward: {
          const double nm = size[static_cast<size_t>(m)];
          nd = ((ni + nm) * dim + (nj + nm) * djm - nm * bd) / (ni + nj + nm);
          break;
        }
      }
      d[static_cast<size_t>(bi)][static_cast<size_t>(m)] = nd;
      d[static_cast<size_t>(m)][static_cast<size_t>(bi)] = nd;
    }
    size[static_cast<size_t>(bi)] += size[static_cast<size_t>(bj)];
    active[static_cast<size_t>(bj)] = false;
    parent[static_cast<size_t>(bj)] = bi;
    --n_active;
  }

  auto root = [&parent](int i) {
    while (parent[static_cast<size_t>(i)] != i) i = parent[static_cast<size_t>(i)];
    return i;
  };
  Assignment out;
  out.method = "hac";
  out.k = k;
  out.cluster_of.assign(static_cast<size_t>(n), -1);
  std::map<int, int> dense;
  for (int i = 0; i < n; ++i) {
    const int r = root(i);
    auto it = dense.find(r);
    if (it == dense.end()) it = dense.emplace(r, static_cast<int>(dense.size())).first;
    out.cluster_of[static_cast<size_t>(i)] = it->second;
  }
  out.hyperparams["affinity"] = affinity_name(affinity);
  out.hyperparams["linkage"] = linkage_name(linkage);
  return out;
}

// All seven valid affinity-linkage combinations; best by accuracy.
inline Assignment hac_grid(const Tensor& x, const std::vector<int>& truth, int k) {
  detail::check_matrix(x);
  if (static_cast<int>(truth.size()) != x.dim(0)) throw ShapeError("hac_grid: truth size mismatch");
  Assignment best;
  double best_acc = -1.0;
  for (Affinity a : {Affinity::euclidean, Affinity::cosine})
    for (Linkage l : {Linkage::ward, Linkage::complete, Linkage::average, Linkage::single}) {
      if (l == Linkage::ward && a != Affinity::euclidean) continue;
      Assignment run = hac_cluster(x, k, a, l);
      const double acc = hungarian_acc_all(run.cluster_of, truth);
      if (acc > best_acc) {
        best_acc = acc;
        best = std::move(run);
      }
    }
  best.hyperparams["selected_acc"] = std::to_string(best_acc);
  return best;
}

// ---------------------------------------------------------------------------
// Embedding and assignment files
// ---------------------------------------------------------------------------

struct EmbeddingFile {
  Tensor embeddings;             // (N,e) float32 row-major
  std::vector<std::string> ids;  // one per row
};

namespace detail {
inline void write_u32(std::ofstream& f, std::uint32_t v) {
  f.write(reinterpret_cast<const char*>(&v), 4);
}
inline std::uint32_t read_u32(std::ifstream& f) {
  std::uint32_t v = 0;
  f.read(reinterpret_cast<char*>(&v), 4);
  if (!f) throw DataError("truncated embedding file header");
  return v;
}
}  // namespace detail

inline void save_embeddings(const std::string& path, const EmbeddingFile& emb) {
  if (emb.embeddings.ndim() != 2) throw ShapeError("save_embeddings: expected (N,e)");
  if (emb.ids.size() != static_cast<size_t>(emb.embeddings.dim(0)))
    throw ShapeError("save_embeddings: id count mismatch");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write embeddings: " + path);
  const char magic[4] = {'F', 'E', 'M', 'B'};
  f.write(magic, 4);
  detail::write_u32(f, 1);  // version
  detail::write_u32(f, static_cast<std::uint32_t>(emb.embeddings.dim(0)));
  detail::write_u32(f, static_cast<std::uint32_t>(emb.embeddings.dim(1)));
  detail::write_u32(f, 0);  // dtype: float32
  f.write(reinterpret_cast<const char*>(emb.embeddings.data()),
          static_cast<std::streamsize>(emb.embeddings.numel() * sizeof(float)));
  for (const auto& id : emb.ids) {
    detail::write_u32(f, static_cast<std::uint32_t>(id.size()));
    f.write(id.data(), static_cast<std::streamsize>(id.size()));
  }
  if (!f) throw DataError("short write on embeddings: " + path);
}

inline EmbeddingFile load_embeddings(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open embeddings: " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::string(magic, 4) != "FEMB") throw DataError("bad embedding magic: " + path);
  if (detail::read_u32(f) != 1) throw DataError("unsupported embedding file version");
  const int n = static_cast<int>(detail::read_u32(f));
  const int e = static_cast<int>(detail::read_u32(f));
  if (detail::read_u32(f) != 0) throw DataError("unsupported embedding dtype");
  EmbeddingFile out;
  out.embeddings = Tensor({n, e});
  f.read(reinterpret_cast<char*>(out.embeddings.data()),
         static_cast<std::streamsize>(out.embeddings.numel() * sizeof(float)));
  if (!f) throw DataError("truncated embedding payload: " + path);
  out.ids.resize(static_cast<size_t>(n));
  for (auto& id : out.ids) {
    const std::uint32_t len = detail::read_u32(f);
    id.resize(len);
    f.read(id.data(), static_cast<std::streamsize>(len));
    if (!f) throw DataError("truncated embedding ids: " + path);
  }
  return out;
}

inline void write_assignments(const std::string& path, const std::vector<std::string>& ids,
                              const std::vector<int>& cluster_of) {
  if (ids.size() != cluster_of.size()) throw ShapeError("write_assignments: size mismatch");
  std::ofstream f(path);
  if (!f) throw DataError("cannot write assignments: " + path);
  for (size_t i = 0; i < ids.size(); ++i) f << ids[i] << "," << cluster_of[i] << "\n";
  if (!f) throw DataError("short write on assignments: " + path);
}

inline std::vector<std::pair<std::string, int>> read_assignments(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open assignments: " + path);
  std::vector<std::pair<std::string, int>> out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    auto pos = line.rfind(',');
    if (pos == std::string::npos) throw DataError("malformed assignment line: " + line);
    out.emplace_back(line.substr(0, pos), std::stoi(line.substr(pos + 1)));
  }
  return out;
}

}  // namespace facegcd
