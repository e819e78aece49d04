#pragma once

// Patch tokenizer, pre-norm transformer encoder with per-layer K/V prefix
// injection, and the projection head that emits unit-norm embeddings.
// Queries are never touched by prefixes; they only extend keys and values.

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "facegcd/autograd.hpp"
#include "facegcd/common.hpp"
#include "facegcd/params.hpp"
#include "facegcd/tensor.hpp"

namespace facegcd {

struct EncoderConfig {
  int num_layers = 4;
  int embed_dim = 64;
  int num_heads = 4;
  int patch_size = 8;
  int image_side = 32;
  int channels = 3;

  int head_dim() const { return embed_dim / num_heads; }
  int patches_per_side() const { return image_side / patch_size; }
  int num_patches() const { return patches_per_side() * patches_per_side(); }
  int token_count() const { return num_patches() + 1; }
  int patch_dim() const { return channels * patch_size * patch_size; }

  void validate() const {
    if (num_layers < 1 || embed_dim < 1 || num_heads < 1)
      throw ConfigError("encoder: nonpositive dimensions");
    if (embed_dim % num_heads != 0)
      throw ConfigError("encoder: embed_dim must be divisible by num_heads");
    if (image_side % patch_size != 0)
      throw ShapeError("encoder: image side not divisible by patch size");
  }
};

// Paper-scale preset, used for parameter accounting checks.
inline EncoderConfig paper_scale_encoder() {
  EncoderConfig cfg;
  cfg.num_layers = 12;
  cfg.embed_dim = 768;
  cfg.num_heads = 12;
  cfg.patch_size = 16;
  cfg.image_side = 224;
  cfg.channels = 3;
  return cfg;
}

// Per-layer key/value prefixes, each (B, m, heads, head_dim).
struct PrefixSet {
  std::vector<ag::Var> key;
  std::vector<ag::Var> value;
  int m = 0;

  bool empty() const { return m == 0 || key.empty(); }
  int layers() const { return static_cast<int>(key.size()); }
};

// softmax(Q [P_K;K]^T / sqrt(d_h)) [P_V;V] with Q untouched.
// Q,K,V: (B,h,T,d_h); P_K,P_V: (B,m,h,d_h); result (B,h,T,d_h).
inline ag::Var attention_with_prefix(const ag::Var& q, const ag::Var& k, const ag::Var& v,
                                     const ag::Var& p_k = ag::Var(),
                                     const ag::Var& p_v = ag::Var()) {
  const int dh = q.dim(3);
  if (k.dim(3) != dh || v.dim(3) != dh) throw ShapeError("attention: head dim mismatch");
  ag::Var keys = k;
  ag::Var values = v;
  if (p_k.defined() != p_v.defined())
    throw ShapeError("attention: key and value prefixes must come together");
  if (p_k.defined()) {
    if (p_k.shape() != p_v.shape()) throw ShapeError("attention: prefix shape mismatch");
    if (p_k.dim(3) != dh || p_k.dim(2) != q.dim(1))
      throw ShapeError("attention: prefix head/dim mismatch");
    keys = ag::concat_seq(ag::permute_0213(p_k), k);
    values = ag::concat_seq(ag::permute_0213(p_v), v);
  }
  ag::Var scores = ag::attn_scores(q, keys, 1.0f / std::sqrt(static_cast<float>(dh)));
  ag::Var attn = ag::softmax_lastdim(scores);
  return ag::attn_apply(attn, values);
}

// Rearranges (B,C,S,S) pixels into non-overlapping patch vectors
// (B, num_patches, C*p*p); pure data movement, no parameters.
inline Tensor images_to_patches(const Tensor& images, const EncoderConfig& cfg) {
  const Shape& s = images.shape();
  if (s.size() != 4 || s[1] != cfg.channels || s[2] != cfg.image_side || s[3] != cfg.image_side)
    throw ShapeError("images_to_patches: expected (B," + std::to_string(cfg.channels) + "," +
                     std::to_string(cfg.image_side) + "," + std::to_string(cfg.image_side) + ")");
  const int B = s[0], C = cfg.channels, S = cfg.image_side, P = cfg.patch_size;
  const int G = cfg.patches_per_side();
  Tensor out({B, cfg.num_patches(), cfg.patch_dim()});
  for (int b = 0; b < B; ++b)
    for (int gy = 0; gy < G; ++gy)
      for (int gx = 0; gx < G; ++gx) {
        float* dst = out.data() +
                     ((static_cast<std::int64_t>(b) * G * G) + gy * G + gx) * cfg.patch_dim();
        for (int c = 0; c < C; ++c)
          for (int py = 0; py < P; ++py)
            for (int px = 0; px < P; ++px)
              *dst++ = images.data()[((static_cast<std::int64_t>(b) * C + c) * S +
                                      (gy * P + py)) *
                                         S +
                                     (gx * P + px)];
      }
  return out;
}

class ViTEncoder {
 public:
  struct Output {
    std::vector<ag::Var> layer_features;  // L entries, each (B,T,d), post-block
    ag::Var cls;                          // (B,d), final layer norm applied
  };

  // Registers all parameters under `prefix` into `ps`. `trainable_blocks`
  // marks which transformer blocks can learn; embeddings, positional terms
  // and the final norm stay frozen regardless.
  ViTEncoder(ParamStore& ps, EncoderConfig cfg, const std::string& prefix, Rng& rng,
             const std::vector<bool>& trainable_blocks)
      : cfg_(cfg) {
    cfg_.validate();
    if (static_cast<int>(trainable_blocks.size()) != cfg_.num_layers)
      throw ConfigError("encoder: trainable_blocks size mismatch");
    const int d = cfg_.embed_dim;
    // Xavier-scaled linears keep the attention/MLP contributions to the
    // residual stream O(1) at any width; a fixed small std would leave the
    // class token dominated by its constant embedding on narrow models.
    auto lin_w = [&](Shape s) {
      const float std = std::sqrt(2.0f / static_cast<float>(s[0] + s[1]));
      return Tensor::randn(s, rng, std);
    };
    patch_w_ = ps.add(prefix + "patch_w", lin_w({cfg_.patch_dim(), d}), false);
    patch_b_ = ps.add(prefix + "patch_b", Tensor::zeros({d}), false);
    cls_ = ps.add(prefix + "cls", Tensor::randn({1, d}, rng, 0.02f), false);
    pos_ = ps.add(prefix + "pos", Tensor::randn({cfg_.token_count(), d}, rng, 0.02f), false);
    for (int l = 0; l < cfg_.num_layers; ++l) {
      const std::string bp = prefix + "blk" + std::to_string(l) + ".";
      const bool tr = trainable_blocks[static_cast<size_t>(l)];
      Block blk;
      blk.ln1_g = ps.add(bp + "ln1_g", Tensor::full({d}, 1.0f), tr);
      blk.ln1_b = ps.add(bp + "ln1_b", Tensor::zeros({d}), tr);
      blk.q_w = ps.add(bp + "q_w", lin_w({d, d}), tr);
      blk.q_b = ps.add(bp + "q_b", Tensor::zeros({d}), tr);
      blk.k_w = ps.add(bp + "k_w", lin_w({d, d}), tr);
      blk.k_b = ps.add(bp + "k_b", Tensor::zeros({d}), tr);
      blk.v_w = ps.add(bp + "v_w", lin_w({d, d}), tr);
      blk.v_b = ps.add(bp + "v_b", Tensor::zeros({d}), tr);
      blk.proj_w = ps.add(bp + "proj_w", lin_w({d, d}), tr);
      blk.proj_b = ps.add(bp + "proj_b", Tensor::zeros({d}), tr);
      blk.ln2_g = ps.add(bp + "ln2_g", Tensor::full({d}, 1.0f), tr);
      blk.ln2_b = ps.add(bp + "ln2_b", Tensor::zeros({d}), tr);
      blk.mlp1_w = ps.add(bp + "mlp1_w", lin_w({d, 4 * d}), tr);
      blk.mlp1_b = ps.add(bp + "mlp1_b", Tensor::zeros({4 * d}), tr);
      blk.mlp2_w = ps.add(bp + "mlp2_w", lin_w({4 * d, d}), tr);
      blk.mlp2_b = ps.add(bp + "mlp2_b", Tensor::zeros({d}), tr);
      blocks_.push_back(blk);
    }
    final_ln_g_ = ps.add(prefix + "final_ln_g", Tensor::full({d}, 1.0f), false);
    final_ln_b_ = ps.add(prefix + "final_ln_b", Tensor::zeros({d}), false);
  }

  const EncoderConfig& config() const { return cfg_; }

  // (B,C,S,S) raw pixels -> (B,T,d) tokens with class token at index 0.
  ag::Var tokenize(const Tensor& images) const {
    const int B = images.dim(0);
    ag::Var patches = ag::Var::constant(images_to_patches(images, cfg_));
    ag::Var embedded = ag::linear(patches, patch_w_, patch_b_);  // (B,N,d)
    ag::Var cls_rows = ag::tile_rows(cls_, B);                   // (B,1,d)
    // concat on the token axis via a transient head-of-rank-4 view
    ag::Var cat = ag::concat_seq(ag::reshape(cls_rows, {B, 1, 1, cfg_.embed_dim}),
                                 ag::reshape(embedded, {B, 1, cfg_.num_patches(), cfg_.embed_dim}));
    ag::Var tokens = ag::reshape(cat, {B, cfg_.token_count(), cfg_.embed_dim});
    return ag::add(tokens, ag::tile_rows(pos_, B));
  }

  // Runs all blocks; layer l consumes prefixes->key[l]/value[l] when given.
  Output encode(const ag::Var& tokens, const PrefixSet* prefixes = nullptr) const {
    if (tokens.shape().size() != 3 || tokens.dim(1) != cfg_.token_count() ||
        tokens.dim(2) != cfg_.embed_dim)
      throw ShapeError("encode: bad token shape");
    if (prefixes && !prefixes->empty() && prefixes->layers() != cfg_.num_layers)
      throw ShapeError("encode: prefix layer count mismatch");
    const int B = tokens.dim(0), T = cfg_.token_count(), d = cfg_.embed_dim;
    const int h = cfg_.num_heads, dh = cfg_.head_dim();
    Output out;
    ag::Var x = tokens;
    for (int l = 0; l < cfg_.num_layers; ++l) {
      const Block& blk = blocks_[static_cast<size_t>(l)];
      ag::Var xn = ag::layer_norm(x, blk.ln1_g, blk.ln1_b);
      auto split_heads = [&](const ag::Var& y) {
        return ag::permute_0213(ag::reshape(y, {B, T, h, dh}));
      };
      ag::Var q = split_heads(ag::linear(xn, blk.q_w, blk.q_b));
      ag::Var k = split_heads(ag::linear(xn, blk.k_w, blk.k_b));
      ag::Var v = split_heads(ag::linear(xn, blk.v_w, blk.v_b));
      ag::Var attn;
      if (prefixes && !prefixes->empty())
        attn = attention_with_prefix(q, k, v, prefixes->key[static_cast<size_t>(l)],
                                     prefixes->value[static_cast<size_t>(l)]);
      else
        attn = attention_with_prefix(q, k, v);
      ag::Var merged = ag::reshape(ag::permute_0213(attn), {B, T, d});
      x = ag::add(x, ag::linear(merged, blk.proj_w, blk.proj_b));
      ag::Var yn = ag::layer_norm(x, blk.ln2_g, blk.ln2_b);
      ag::Var mlp = ag::linear(ag::gelu(ag::linear(yn, blk.mlp1_w, blk.mlp1_b)), blk.mlp2_w,
                               blk.mlp2_b);
      x = ag::add(x, mlp);
      out.layer_features.push_back(x);
    }
    out.cls = ag::select_token(ag::layer_norm(x, final_ln_g_, final_ln_b_), 0);
    return out;
  }

  // Used to build the frozen static copy from the main backbone's weights.
  void copy_weights_from(const ViTEncoder& src) {
    auto cp = [](ag::Var dst, const ag::Var& s) { dst.val() = s.val(); };
    cp(patch_w_, src.patch_w_);
    cp(patch_b_, src.patch_b_);
    cp(cls_, src.cls_);
    cp(pos_, src.pos_);
    for (size_t l = 0; l < blocks_.size(); ++l) {
      Block& a = blocks_[l];
      const Block& b = src.blocks_[l];
      cp(a.ln1_g, b.ln1_g);
      cp(a.ln1_b, b.ln1_b);
      cp(a.q_w, b.q_w);
      cp(a.q_b, b.q_b);
      cp(a.k_w, b.k_w);
      cp(a.k_b, b.k_b);
      cp(a.v_w, b.v_w);
      cp(a.v_b, b.v_b);
      cp(a.proj_w, b.proj_w);
      cp(a.proj_b, b.proj_b);
      cp(a.ln2_g, b.ln2_g);
      cp(a.ln2_b, b.ln2_b);
      cp(a.mlp1_w, b.mlp1_w);
      cp(a.mlp1_b, b.mlp1_b);
      cp(a.mlp2_w, b.mlp2_w);
      cp(a.mlp2_b, b.mlp2_b);
    }
    cp(final_ln_g_, src.final_ln_g_);
    cp(final_ln_b_, src.final_ln_b_);
  }

 private:
  struct Block {
    ag::Var ln1_g, ln1_b, q_w, q_b, k_w, k_b, v_w, v_b, proj_w, proj_b;
    ag::Var ln2_g, ln2_b, mlp1_w, mlp1_b, mlp2_w, mlp2_b;
  };

  EncoderConfig cfg_;
  ag::Var patch_w_, patch_b_, cls_, pos_;
  std::vector<Block> blocks_;
  ag::Var final_ln_g_, final_ln_b_;
};

// Three stacked linears with GELU between, then row L2 normalization.
// He-scaled init: the final normalization divides out whatever scale the
// stack produces, so a fixed small std would make the pre-norm rows shrink
// with depth until the embedding is numerically noise.
class ProjectionHead {
 public:
  ProjectionHead(ParamStore& ps, int in_dim, int hidden, int out_dim, const std::string& prefix,
                 Rng& rng, bool trainable = true) {
    const float s1 = std::sqrt(2.0f / static_cast<float>(in_dim));
    const float s2 = std::sqrt(2.0f / static_cast<float>(hidden));
    w1_ = ps.add(prefix + "w1", Tensor::randn({in_dim, hidden}, rng, s1), trainable);
    b1_ = ps.add(prefix + "b1", Tensor::zeros({hidden}), trainable);
    w2_ = ps.add(prefix + "w2", Tensor::randn({hidden, hidden}, rng, s2), trainable);
    b2_ = ps.add(prefix + "b2", Tensor::zeros({hidden}), trainable);
    w3_ = ps.add(prefix + "w3", Tensor::randn({hidden, out_dim}, rng, s2), trainable);
    b3_ = ps.add(prefix + "b3", Tensor::zeros({out_dim}), trainable);
  }

  ag::Var forward(const ag::Var& x) const {
    ag::Var h1 = ag::gelu(ag::linear(x, w1_, b1_));
    ag::Var h2 = ag::gelu(ag::linear(h1, w2_, b2_));
    return ag::l2_normalize_rows(ag::linear(h2, w3_, b3_));
  }

 private:
  ag::Var w1_, b1_, w2_, b2_, w3_, b3_;
};

}  // namespace facegcd
