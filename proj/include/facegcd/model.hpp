#pragma once

// Full model assembly: main backbone (final block trainable), frozen static
// conditioning copy, projection head, and one of four prefix mechanisms.
// Also provides a parameter plan that mirrors construction without
// allocating, so paper-scale parameter accounting stays cheap.

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "facegcd/checkpoint.hpp"
#include "facegcd/common.hpp"
#include "facegcd/encoder.hpp"
#include "facegcd/params.hpp"
#include "facegcd/prefix.hpp"

namespace facegcd {

enum class Variant { facegcd, static_generator, static_pool, no_prefix };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::facegcd: return "facegcd";
    case Variant::static_generator: return "static_generator";
    case Variant::static_pool: return "static_pool";
    case Variant::no_prefix: return "no_prefix";
  }
  return "?";
}

inline Variant variant_from_string(const std::string& s) {
  if (s == "facegcd") return Variant::facegcd;
  if (s == "static_generator") return Variant::static_generator;
  if (s == "static_pool") return Variant::static_pool;
  if (s == "no_prefix") return Variant::no_prefix;
  throw ConfigError("unknown variant: " + s);
}

struct ModelConfig {
  EncoderConfig encoder;
  HyperNetConfig hypernet;
  Variant variant = Variant::facegcd;
  int prefix_len = 5;
  int head_hidden = 0;  // 0 -> 2 * embed_dim
  int embed_out = 64;
  int staticgen_hidden = 128;
  int pool_size = 10;
  int pool_entry_len = 1;
  int pool_top_k = 5;
  std::uint64_t seed = 0;

  int resolved_head_hidden() const {
    return head_hidden > 0 ? head_hidden : 2 * encoder.embed_dim;
  }
};

// Scale used by the parameter-accounting checks; never trained here.
inline ModelConfig paper_scale_model(Variant v = Variant::facegcd) {
  ModelConfig cfg;
  cfg.encoder = paper_scale_encoder();
  cfg.hypernet = paper_scale_hypernet();
  cfg.variant = v;
  cfg.prefix_len = 10;
  cfg.head_hidden = 4096;
  cfg.embed_out = 256;
  cfg.staticgen_hidden = 1024;
  cfg.pool_size = 10;
  cfg.pool_entry_len = 10;
  cfg.pool_top_k = 5;
  return cfg;
}

class FaceGCDModel {
 public:
  explicit FaceGCDModel(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.encoder.validate();
    Rng rng = make_rng(cfg_.seed, "model-init");
    std::vector<bool> main_trainable(static_cast<size_t>(cfg_.encoder.num_layers), false);
    main_trainable.back() = true;
    backbone_ = std::make_unique<ViTEncoder>(params_, cfg_.encoder, "backbone.", rng,
                                             main_trainable);
    std::vector<bool> frozen(static_cast<size_t>(cfg_.encoder.num_layers), false);
    static_enc_ = std::make_unique<ViTEncoder>(params_, cfg_.encoder, "static.", rng, frozen);
    static_enc_->copy_weights_from(*backbone_);
    head_ = std::make_unique<ProjectionHead>(params_, cfg_.encoder.embed_dim,
                                             cfg_.resolved_head_hidden(), cfg_.embed_out,
                                             "head.", rng);
    switch (cfg_.variant) {
      case Variant::facegcd:
        hyper_ = std::make_unique<HyperNetwork>(params_, cfg_.encoder, cfg_.hypernet, "hyper.",
                                                rng);
        gen_ = std::make_unique<PrefixGenerator>(params_, cfg_.prefix_len,
                                                 cfg_.encoder.num_heads,
                                                 cfg_.encoder.head_dim(), "gen.", rng);
        break;
      case Variant::static_generator:
        static_gen_ = std::make_unique<StaticGeneratorBank>(
            params_, cfg_.encoder, cfg_.staticgen_hidden, cfg_.prefix_len, "staticgen.", rng);
        break;
      case Variant::static_pool:
        pool_ = std::make_unique<PrefixPool>(params_, cfg_.encoder, cfg_.pool_size,
                                             cfg_.pool_entry_len, cfg_.pool_top_k, "pool.", rng);
        break;
      case Variant::no_prefix:
        break;
    }
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const ViTEncoder& backbone() const { return *backbone_; }
  const ViTEncoder& static_encoder() const { return *static_enc_; }
  const ProjectionHead& head() const { return *head_; }
  const HyperNetwork* hypernet() const { return hyper_.get(); }
  const PrefixGenerator* generator() const { return gen_.get(); }
  const StaticGeneratorBank* static_generator() const { return static_gen_.get(); }
  const PrefixPool* pool() const { return pool_.get(); }

  // Static-encoder layer features for a pixel batch; frozen end to end.
  std::vector<ag::Var> static_features(const Tensor& images) const {
    return static_enc_->encode(static_enc_->tokenize(images)).layer_features;
  }

  // Builds the variant's per-layer prefixes; empty set for no_prefix.
  PrefixSet make_prefixes(const Tensor& images) const {
    PrefixSet pfx;
    if (cfg_.variant == Variant::no_prefix) return pfx;
    std::vector<ag::Var> feats = static_features(images);
    switch (cfg_.variant) {
      case Variant::facegcd:
        pfx = gen_->generate(hyper_->generate(feats));
        break;
      case Variant::static_generator:
        pfx = static_gen_->generate(feats);
        break;
      case Variant::static_pool: {
        // Selection is a hard top-k; it reads values only (not differentiable).
        Tensor queries = ag::mean_axis1(feats.back()).val();
        pfx = pool_->gather(pool_->select(queries));
        break;
      }
      case Variant::no_prefix:
        break;
    }
    return pfx;
  }

  // (B,C,S,S) pixels -> (B,e) unit-norm embeddings.
  ag::Var embed_batch(const Tensor& images) const {
    PrefixSet pfx = make_prefixes(images);
    ag::Var tokens = backbone_->tokenize(images);
    ViTEncoder::Output out = backbone_->encode(tokens, pfx.empty() ? nullptr : &pfx);
    return head_->forward(out.cls);
  }

 private:
  ModelConfig cfg_;
  ParamStore params_;
  std::unique_ptr<ViTEncoder> backbone_, static_enc_;
  std::unique_ptr<ProjectionHead> head_;
  std::unique_ptr<HyperNetwork> hyper_;
  std::unique_ptr<PrefixGenerator> gen_;
  std::unique_ptr<StaticGeneratorBank> static_gen_;
  std::unique_ptr<PrefixPool> pool_;
};

// ---------------------------------------------------------------------------
// Parameter plan: names/shapes/flags in exact registration order, no payload.
// ---------------------------------------------------------------------------

struct PlannedParam {
  std::string name;
  Shape shape;
  bool trainable = false;
};

namespace detail {

inline void plan_encoder(std::vector<PlannedParam>& out, const EncoderConfig& cfg,
                         const std::string& prefix, bool last_block_trainable) {
  const int d = cfg.embed_dim;
  out.push_back({prefix + "patch_w", {cfg.patch_dim(), d}, false});
  out.push_back({prefix + "patch_b", {d}, false});
  out.push_back({prefix + "cls", {1, d}, false});
  out.push_back({prefix + "pos", {cfg.token_count(), d}, false});
  for (int l = 0; l < cfg.num_layers; ++l) {
    const bool tr = last_block_trainable && l == cfg.num_layers - 1;
    const std::string bp = prefix + "blk" + std::to_string(l) + ".";
    out.push_back({bp + "ln1_g", {d}, tr});
    out.push_back({bp + "ln1_b", {d}, tr});
    out.push_back({bp + "q_w", {d, d}, tr});
    out.push_back({bp + "q_b", {d}, tr});
    out.push_back({bp + "k_w", {d, d}, tr});
    out.push_back({bp + "k_b", {d}, tr});
    out.push_back({bp + "v_w", {d, d}, tr});
    out.push_back({bp + "v_b", {d}, tr});
    out.push_back({bp + "proj_w", {d, d}, tr});
    out.push_back({bp + "proj_b", {d}, tr});
    out.push_back({bp + "ln2_g", {d}, tr});
    out.push_back({bp + "ln2_b", {d}, tr});
    out.push_back({bp + "mlp1_w", {d, 4 * d}, tr});
    out.push_back({bp + "mlp1_b", {4 * d}, tr});
    out.push_back({bp + "mlp2_w", {4 * d, d}, tr});
    out.push_back({bp + "mlp2_b", {d}, tr});
  }
  out.push_back({prefix + "final_ln_g", {d}, false});
  out.push_back({prefix + "final_ln_b", {d}, false});
}

}  // namespace detail

inline std::vector<PlannedParam> parameter_plan(const ModelConfig& cfg) {
  std::vector<PlannedParam> out;
  const EncoderConfig& enc = cfg.encoder;
  const int d = enc.embed_dim, dh = enc.head_dim();
  detail::plan_encoder(out, enc, "backbone.", true);
  detail::plan_encoder(out, enc, "static.", false);
  const int hid = cfg.resolved_head_hidden();
  out.push_back({"head.w1", {d, hid}, true});
  out.push_back({"head.b1", {hid}, true});
  out.push_back({"head.w2", {hid, hid}, true});
  out.push_back({"head.b2", {hid}, true});
  out.push_back({"head.w3", {hid, cfg.embed_out}, true});
  out.push_back({"head.b3", {cfg.embed_out}, true});
  switch (cfg.variant) {
    case Variant::facegcd: {
      const int b = cfg.hypernet.bottleneck, hh = cfg.hypernet.hidden_dim;
      const int n_trunks = cfg.hypernet.shared_trunk ? 1 : 2;
      for (int l = 0; l < enc.num_layers; ++l)
        for (int t = 0; t < n_trunks; ++t) {
          const std::string tp = "hyper.trunk" + std::to_string(l) +
                                 (cfg.hypernet.shared_trunk ? "" : (t == 0 ? "_k" : "_v"));
          out.push_back({tp + "_w", {d, hh}, true});
          out.push_back({tp + "_b", {hh}, true});
        }
      out.push_back({"hyper.head_kdown_w", {hh, b * dh}, true});
      out.push_back({"hyper.head_kdown_b", {b * dh}, true});
      out.push_back({"hyper.head_kup_w", {hh, dh * b}, true});
      out.push_back({"hyper.head_kup_b", {dh * b}, true});
      out.push_back({"hyper.head_vdown_w", {hh, b * dh}, true});
      out.push_back({"hyper.head_vdown_b", {b * dh}, true});
      out.push_back({"hyper.head_vup_w", {hh, dh * b}, true});
      out.push_back({"hyper.head_vup_b", {dh * b}, true});
      out.push_back({"gen.p_init", {cfg.prefix_len, enc.num_heads, dh}, false});
      break;
    }
    case Variant::static_generator: {
      const int out_dim = cfg.prefix_len * enc.num_heads * dh;
      for (int l = 0; l < enc.num_layers; ++l) {
        const std::string lp = "staticgen.gen" + std::to_string(l) + ".";
        out.push_back({lp + "trunk_w", {d, cfg.staticgen_hidden}, true});
        out.push_back({lp + "trunk_b", {cfg.staticgen_hidden}, true});
        out.push_back({lp + "k_w", {cfg.staticgen_hidden, out_dim}, true});
        out.push_back({lp + "k_b", {out_dim}, true});
        out.push_back({lp + "v_w", {cfg.staticgen_hidden, out_dim}, true});
        out.push_back({lp + "v_b", {out_dim}, true});
      }
      break;
    }
    case Variant::static_pool: {
      for (int l = 0; l < enc.num_layers; ++l) {
        const std::string lp = "pool.pool" + std::to_string(l) + ".";
        out.push_back({lp + "k", {cfg.pool_size, cfg.pool_entry_len, enc.num_heads, dh}, true});
        out.push_back({lp + "v", {cfg.pool_size, cfg.pool_entry_len, enc.num_heads, dh}, true});
      }
      out.push_back({"pool.selector_keys", {cfg.pool_size, d}, false});
      break;
    }
    case Variant::no_prefix:
      break;
  }
  return out;
}

// Model config <-> checkpoint metadata.
inline std::map<std::string, std::string> model_meta(const ModelConfig& cfg) {
  std::map<std::string, std::string> m;
  m["model.variant"] = variant_name(cfg.variant);
  m["encoder.num_layers"] = std::to_string(cfg.encoder.num_layers);
  m["encoder.embed_dim"] = std::to_string(cfg.encoder.embed_dim);
  m["encoder.num_heads"] = std::to_string(cfg.encoder.num_heads);
  m["encoder.patch_size"] = std::to_string(cfg.encoder.patch_size);
  m["encoder.image_side"] = std::to_string(cfg.encoder.image_side);
  m["encoder.channels"] = std::to_string(cfg.encoder.channels);
  m["hypernet.hidden_dim"] = std::to_string(cfg.hypernet.hidden_dim);
  m["hypernet.bottleneck"] = std::to_string(cfg.hypernet.bottleneck);
  m["hypernet.shared_trunk"] = cfg.hypernet.shared_trunk ? "1" : "0";
  m["model.prefix_len"] = std::to_string(cfg.prefix_len);
  m["model.head_hidden"] = std::to_string(cfg.head_hidden);
  m["model.embed_out"] = std::to_string(cfg.embed_out);
  m["model.staticgen_hidden"] = std::to_string(cfg.staticgen_hidden);
  m["model.pool_size"] = std::to_string(cfg.pool_size);
  m["model.pool_entry_len"] = std::to_string(cfg.pool_entry_len);
  m["model.pool_top_k"] = std::to_string(cfg.pool_top_k);
  m["model.seed"] = std::to_string(cfg.seed);
  return m;
}

inline ModelConfig model_config_from_meta(const std::map<std::string, std::string>& m) {
  auto req = [&m](const std::string& k) {
    auto it = m.find(k);
    if (it == m.end()) throw DataError("checkpoint meta missing key: " + k);
    return it->second;
  };
  ModelConfig cfg;
  cfg.variant = variant_from_string(req("model.variant"));
  cfg.encoder.num_layers = std::stoi(req("encoder.num_layers"));
  cfg.encoder.embed_dim = std::stoi(req("encoder.embed_dim"));
  cfg.encoder.num_heads = std::stoi(req("encoder.num_heads"));
  cfg.encoder.patch_size = std::stoi(req("encoder.patch_size"));
  cfg.encoder.image_side = std::stoi(req("encoder.image_side"));
  cfg.encoder.channels = std::stoi(req("encoder.channels"));
  cfg.hypernet.hidden_dim = std::stoi(req("hypernet.hidden_dim"));
  cfg.hypernet.bottleneck = std::stoi(req("hypernet.bottleneck"));
  cfg.hypernet.shared_trunk = req("hypernet.shared_trunk") == "1";
  cfg.prefix_len = std::stoi(req("model.prefix_len"));
  cfg.head_hidden = std::stoi(req("model.head_hidden"));
  cfg.embed_out = std::stoi(req("model.embed_out"));
  cfg.staticgen_hidden = std::stoi(req("model.staticgen_hidden"));
  cfg.pool_size = std::stoi(req("model.pool_size"));
  cfg.pool_entry_len = std::stoi(req("model.pool_entry_len"));
  cfg.pool_top_k = std::stoi(req("model.pool_top_k"));
  cfg.seed = std::stoull(req("model.seed"));
  return cfg;
}

inline void save_model(const std::string& path, const FaceGCDModel& model,
                       std::map<std::string, std::string> extra_meta = {}) {
  std::map<std::string, std::string> meta = model_meta(model.config());
  for (auto& [k, v] : extra_meta) meta[k] = std::move(v);
  save_checkpoint(path, checkpoint_from(model.params(), std::move(meta)));
}

inline std::unique_ptr<FaceGCDModel> load_model(const std::string& path) {
  Checkpoint ck = load_checkpoint(path);
  ModelConfig cfg = model_config_from_meta(ck.meta);
  auto model = std::make_unique<FaceGCDModel>(cfg);
  restore_into(model->params(), ck);
  return model;
}

}  // namespace facegcd
