#pragma once

// Instance-conditioned prefix machinery: a hypernetwork turns static-encoder
// layer features into per-instance down/up projection weights, a generator
// applies those to a fixed initial prefix, and two ablation variants swap the
// mechanism out (direct per-layer generators, or a trained prefix pool).

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "facegcd/autograd.hpp"
#include "facegcd/common.hpp"
#include "facegcd/encoder.hpp"
#include "facegcd/params.hpp"

namespace facegcd {

struct HyperNetConfig {
  int hidden_dim = 128;
  int bottleneck = 8;
  // Key and value paths share the per-layer trunk and branch at the heads.
  bool shared_trunk = true;
};

inline HyperNetConfig paper_scale_hypernet() {
  HyperNetConfig cfg;
  cfg.hidden_dim = 1024;
  cfg.bottleneck = 16;
  return cfg;
}

// Per-instance generator parameters, one entry per encoder layer.
// Shapes: down_w (B,b,d_h), down_b (B,b), up_w (B,d_h,b), up_b (B,d_h).
struct PrefixGeneratorParams {
  std::vector<ag::Var> k_down_w, k_down_b, k_up_w, k_up_b;
  std::vector<ag::Var> v_down_w, v_down_b, v_up_w, v_up_b;
  int layers() const { return static_cast<int>(k_down_w.size()); }
};

class HyperNetwork {
 public:
  HyperNetwork(ParamStore& ps, const EncoderConfig& enc, HyperNetConfig cfg,
               const std::string& prefix, Rng& rng, bool trainable = true)
      : enc_(enc), cfg_(cfg) {
    if (cfg_.bottleneck >= enc_.head_dim())
      throw ConfigError("hypernet: bottleneck must be smaller than head_dim");
    const int d = enc_.embed_dim, hid = cfg_.hidden_dim, dh = enc_.head_dim();
    const int b = cfg_.bottleneck;
    auto w = [&](Shape s) { return Tensor::randn(s, rng, 0.02f); };
    const int n_trunks = cfg_.shared_trunk ? 1 : 2;
    for (int l = 0; l < enc_.num_layers; ++l)
      for (int t = 0; t < n_trunks; ++t) {
        const std::string tp =
            prefix + "trunk" + std::to_string(l) + (cfg_.shared_trunk ? "" : (t == 0 ? "_k" : "_v"));
        trunk_w_.push_back(ps.add(tp + "_w", w({d, hid}), trainable));
        trunk_b_.push_back(ps.add(tp + "_b", Tensor::zeros({hid}), trainable));
      }
    k_down_w_ = ps.add(prefix + "head_kdown_w", w({hid, b * dh}), trainable);
    k_down_b_ = ps.add(prefix + "head_kdown_b", Tensor::zeros({b * dh}), trainable);
    k_up_w_ = ps.add(prefix + "head_kup_w", w({hid, dh * b}), trainable);
    k_up_b_ = ps.add(prefix + "head_kup_b", Tensor::zeros({dh * b}), trainable);
    v_down_w_ = ps.add(prefix + "head_vdown_w", w({hid, b * dh}), trainable);
    v_down_b_ = ps.add(prefix + "head_vdown_b", Tensor::zeros({b * dh}), trainable);
    v_up_w_ = ps.add(prefix + "head_vup_w", w({hid, dh * b}), trainable);
    v_up_b_ = ps.add(prefix + "head_vup_b", Tensor::zeros({dh * b}), trainable);
  }

  const HyperNetConfig& config() const { return cfg_; }

  // z: L per-layer features (B,T,d) from the static encoder.
  PrefixGeneratorParams generate(const std::vector<ag::Var>& z) const {
    if (static_cast<int>(z.size()) != enc_.num_layers)
      throw ShapeError("hypernet: expected " + std::to_string(enc_.num_layers) + " layers, got " +
                       std::to_string(z.size()));
    const int dh = enc_.head_dim(), b = cfg_.bottleneck;
    PrefixGeneratorParams out;
    for (int l = 0; l < enc_.num_layers; ++l) {
      ag::Var pooled = ag::mean_axis1(z[static_cast<size_t>(l)]);  // (B,d)
      const int B = pooled.dim(0);
      auto trunk = [&](int path) {
        const size_t ti = cfg_.shared_trunk ? static_cast<size_t>(l)
                                            : static_cast<size_t>(l) * 2 + static_cast<size_t>(path);
        return ag::relu(ag::linear(pooled, trunk_w_[ti], trunk_b_[ti]));
      };
      ag::Var hk = trunk(0);
      ag::Var hv = cfg_.shared_trunk ? hk : trunk(1);
      auto head = [&](const ag::Var& h, const ag::Var& hw, const ag::Var& hb, int r, int c) {
        return ag::reshape(ag::linear(h, hw, hb), {B, r, c});
      };
      ag::Var kdw = head(hk, k_down_w_, k_down_b_, b, dh);
      ag::Var kuw = head(hk, k_up_w_, k_up_b_, dh, b);
      ag::Var vdw = head(hv, v_down_w_, v_down_b_, b, dh);
      ag::Var vuw = head(hv, v_up_w_, v_up_b_, dh, b);
      out.k_down_w.push_back(kdw);
      out.k_down_b.push_back(ag::mean_lastdim(kdw));  // biases avg-pooled from weights
      out.k_up_w.push_back(kuw);
      out.k_up_b.push_back(ag::mean_lastdim(kuw));
      out.v_down_w.push_back(vdw);
      out.v_down_b.push_back(ag::mean_lastdim(vdw));
      out.v_up_w.push_back(vuw);
      out.v_up_b.push_back(ag::mean_lastdim(vuw));
    }
    return out;
  }

 private:
  EncoderConfig enc_;
  HyperNetConfig cfg_;
  std::vector<ag::Var> trunk_w_, trunk_b_;
  ag::Var k_down_w_, k_down_b_, k_up_w_, k_up_b_;
  ag::Var v_down_w_, v_down_b_, v_up_w_, v_up_b_;
};

// Holds the fixed initial prefix and applies per-instance down/ReLU/up
// projections to it, once per layer and path.
class PrefixGenerator {
 public:
  PrefixGenerator(ParamStore& ps, int m, int heads, int head_dim, const std::string& prefix,
                  Rng& rng)
      : m_(m), heads_(heads), head_dim_(head_dim) {
    p_init_ = ps.add(prefix + "p_init",
                     Tensor::rand_uniform({m, heads, head_dim}, rng, -0.5f, 0.5f),
                     /*trainable=*/false);
  }

  int prefix_len() const { return m_; }
  ag::Var initial_prefix() const { return p_init_; }

  PrefixSet generate(const PrefixGeneratorParams& params) const {
    PrefixSet out;
    out.m = m_;
    if (m_ == 0) return out;
    for (int l = 0; l < params.layers(); ++l) {
      const size_t i = static_cast<size_t>(l);
      out.key.push_back(ag::prefix_up(
          params.k_up_w[i],
          ag::relu(ag::prefix_down(p_init_, params.k_down_w[i], params.k_down_b[i])),
          params.k_up_b[i]));
      out.value.push_back(ag::prefix_up(
          params.v_up_w[i],
          ag::relu(ag::prefix_down(p_init_, params.v_down_w[i], params.v_down_b[i])),
          params.v_up_b[i]));
    }
    return out;
  }

 private:
  int m_, heads_, head_dim_;
  ag::Var p_init_;
};

// Ablation: drops the hypernetwork and maps pooled layer features straight
// to prefixes with one trained two-layer perceptron per encoder layer.
class StaticGeneratorBank {
 public:
  StaticGeneratorBank(ParamStore& ps, const EncoderConfig& enc, int hidden, int m,
                      const std::string& prefix, Rng& rng, bool trainable = true)
      : enc_(enc), m_(m) {
    const int d = enc_.embed_dim;
    const int out_dim = m * enc_.num_heads * enc_.head_dim();
    auto w = [&](Shape s) { return Tensor::randn(s, rng, 0.02f); };
    for (int l = 0; l < enc_.num_layers; ++l) {
      const std::string lp = prefix + "gen" + std::to_string(l) + ".";
      Layer lay;
      lay.trunk_w = ps.add(lp + "trunk_w", w({d, hidden}), trainable);
      lay.trunk_b = ps.add(lp + "trunk_b", Tensor::zeros({hidden}), trainable);
      lay.k_w = ps.add(lp + "k_w", w({hidden, out_dim}), trainable);
      lay.k_b = ps.add(lp + "k_b", Tensor::zeros({out_dim}), trainable);
      lay.v_w = ps.add(lp + "v_w", w({hidden, out_dim}), trainable);
      lay.v_b = ps.add(lp + "v_b", Tensor::zeros({out_dim}), trainable);
      layers_.push_back(lay);
    }
  }

  int prefix_len() const { return m_; }

  PrefixSet generate(const std::vector<ag::Var>& z) const {
    if (static_cast<int>(z.size()) != enc_.num_layers)
      throw ShapeError("static generator: layer count mismatch");
    PrefixSet out;
    out.m = m_;
    if (m_ == 0) return out;
    for (int l = 0; l < enc_.num_layers; ++l) {
      const Layer& lay = layers_[static_cast<size_t>(l)];
      ag::Var pooled = ag::mean_axis1(z[static_cast<size_t>(l)]);
      const int B = pooled.dim(0);
      ag::Var h = ag::relu(ag::linear(pooled, lay.trunk_w, lay.trunk_b));
      out.key.push_back(
          ag::reshape(ag::linear(h, lay.k_w, lay.k_b), {B, m_, enc_.num_heads, enc_.head_dim()}));
      out.value.push_back(
          ag::reshape(ag::linear(h, lay.v_w, lay.v_b), {B, m_, enc_.num_heads, enc_.head_dim()}));
    }
    return out;
  }

 private:
  struct Layer {
    ag::Var trunk_w, trunk_b, k_w, k_b, v_w, v_b;
  };
  EncoderConfig enc_;
  int m_;
  std::vector<Layer> layers_;
};

// Ablation: a fixed-size pool of trained prefix groups; each instance picks
// its top_k entries by cosine similarity against frozen selector keys.
class PrefixPool {
 public:
  PrefixPool(ParamStore& ps, const EncoderConfig& enc, int pool_size, int entry_len, int top_k,
             const std::string& prefix, Rng& rng, bool trainable = true)
      : enc_(enc), n_(pool_size), entry_len_(entry_len), top_k_(top_k) {
    if (top_k_ > n_) throw ConfigError("prefix pool: top_k exceeds pool size");
    auto w = [&](Shape s) { return Tensor::randn(s, rng, 0.02f); };
    for (int l = 0; l < enc_.num_layers; ++l) {
      const std::string lp = prefix + "pool" + std::to_string(l) + ".";
      k_entries_.push_back(
          ps.add(lp + "k", w({n_, entry_len_, enc_.num_heads, enc_.head_dim()}), trainable));
      v_entries_.push_back(
          ps.add(lp + "v", w({n_, entry_len_, enc_.num_heads, enc_.head_dim()}), trainable));
    }
    Tensor keys = Tensor::randn({n_, enc_.embed_dim}, rng, 1.0f);
    for (int i = 0; i < n_; ++i) {
      float* row = keys.data() + static_cast<std::int64_t>(i) * enc_.embed_dim;
      float sq = 1e-12f;
      for (int j = 0; j < enc_.embed_dim; ++j) sq += row[j] * row[j];
      const float inv = 1.0f / std::sqrt(sq);
      for (int j = 0; j < enc_.embed_dim; ++j) row[j] *= inv;
    }
    selector_keys_ = ps.add(prefix + "selector_keys", keys, /*trainable=*/false);
  }

  int effective_prefix_len() const { return top_k_ * entry_len_; }
  int top_k() const { return top_k_; }

  // Cosine ranking, ties broken toward the lowest pool index.
  std::vector<std::vector<int>> select(const Tensor& queries) const {
    if (queries.ndim() != 2 || queries.dim(1) != enc_.embed_dim)
      throw ShapeError("prefix pool: query shape mismatch");
    const int B = queries.dim(0);
    std::vector<std::vector<int>> out(static_cast<size_t>(B));
    const Tensor& keys = selector_keys_.val();
    for (int i = 0; i < B; ++i) {
      const float* q = queries.data() + static_cast<std::int64_t>(i) * enc_.embed_dim;
      float qn = 1e-12f;
      for (int j = 0; j < enc_.embed_dim; ++j) qn += q[j] * q[j];
      qn = std::sqrt(qn);
      std::vector<std::pair<float, int>> ranked;
      ranked.reserve(static_cast<size_t>(n_));
      for (int e = 0; e < n_; ++e) {
        const float* k = keys.data() + static_cast<std::int64_t>(e) * enc_.embed_dim;
        float dot = 0.0f;
        for (int j = 0; j < enc_.embed_dim; ++j) dot += q[j] * k[j];
        ranked.emplace_back(dot / qn, e);  // keys are unit norm already
      }
      std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
      });
      auto& row = out[static_cast<size_t>(i)];
      for (int k = 0; k < top_k_; ++k) row.push_back(ranked[static_cast<size_t>(k)].second);
    }
    return out;
  }

  PrefixSet gather(const std::vector<std::vector<int>>& idx) const {
    PrefixSet out;
    out.m = effective_prefix_len();
    for (int l = 0; l < enc_.num_layers; ++l) {
      out.key.push_back(ag::pool_gather(k_entries_[static_cast<size_t>(l)], idx));
      out.value.push_back(ag::pool_gather(v_entries_[static_cast<size_t>(l)], idx));
    }
    return out;
  }

 private:
  EncoderConfig enc_;
  int n_, entry_len_, top_k_;
  std::vector<ag::Var> k_entries_, v_entries_;
  ag::Var selector_keys_;
};

}  // namespace facegcd
