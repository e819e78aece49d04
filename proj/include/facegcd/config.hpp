#pragma once

// Experiment configuration: one dotted key-value text format covering every
// stage, a serializer that round-trips exactly, and command-line overrides.
// All stage seeds derive from the single root seed, so a snapshot plus this
// parser is enough to replay a run.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "facegcd/cluster.hpp"
#include "facegcd/common.hpp"
#include "facegcd/data.hpp"
#include "facegcd/loss.hpp"
#include "facegcd/model.hpp"
#include "facegcd/train.hpp"

namespace facegcd {

// Clustering method plus its knobs, and the evaluation-side settings.
struct DiscoverConfig {
  std::string method = "ssk";  // ssk | kmeans | dbscan | dbscan_grid | hac | hac_grid
  int max_iter = 500;
  int n_init = 10;
  double tol = 1e-4;
  std::string affinity = "euclidean";
  std::string linkage = "ward";
  double eps = 0.5;
  int min_samples = 5;
  // "fit-train": fit centroids on train embeddings, assign test by nearest.
  // "joint": cluster train+test rows together.
  std::string ssk_protocol = "fit-train";
  int nnc_k = 10;

  void validate() const {
    static const std::vector<std::string> methods = {"ssk",  "kmeans", "dbscan",
                                                     "dbscan_grid", "hac", "hac_grid"};
    if (std::find(methods.begin(), methods.end(), method) == methods.end())
      throw ConfigError("discover: unknown method '" + method + "'");
    if (max_iter < 1) throw ConfigError("discover: max_iter must be >= 1");
    if (n_init < 1) throw ConfigError("discover: n_init must be >= 1");
    if (!(tol >= 0.0)) throw ConfigError("discover: tol must be >= 0");
    if (!(eps > 0.0)) throw ConfigError("discover: eps must be > 0");
    if (min_samples < 1) throw ConfigError("discover: min_samples must be >= 1");
    if (ssk_protocol != "fit-train" && ssk_protocol != "joint")
      throw ConfigError("discover: ssk_protocol must be fit-train or joint");
    if (nnc_k < 1) throw ConfigError("discover: nnc_k must be >= 1");
    if (method == "hac" || method == "hac_grid") {
      affinity_from_string(affinity);
      linkage_from_string(linkage);
    }
  }

  ClusterConfig cluster_config(std::uint64_t seed) const {
    ClusterConfig cc;
    cc.max_iter = max_iter;
    cc.n_init = n_init;
    cc.tol = tol;
    cc.seed = seed;
    return cc;
  }
};

struct ExperimentConfig {
  SyntheticConfig synth;
  SplitConfig split;
  ModelConfig model;
  TrainConfig train;
  LossConfig loss;
  DiscoverConfig discover;
  std::string output_dir = "runs/exp";
  std::uint64_t seed = 0;

  // Stage seeds are never set directly; each derives from the root seed by
  // stage-name hashing so any stage can be replayed in isolation.
  void derive_seeds() {
    synth.seed = mix_seed(seed, "synth");
    split.seed = mix_seed(seed, "split");
    model.seed = mix_seed(seed, "model");
    train.seed = mix_seed(seed, "train");
  }

  std::uint64_t cluster_seed() const { return mix_seed(seed, "cluster"); }

  void validate() const {
    if (synth.num_ids < 1) throw ConfigError("synth: num_ids must be >= 1");
    if (synth.images_per_id < 1) throw ConfigError("synth: images_per_id must be >= 1");
    if (synth.image_side < 1) throw ConfigError("synth: image_side must be >= 1");
    if (synth.image_side != model.encoder.image_side)
      throw ConfigError("config: synth.image_side must match encoder.image_side");
    if (split.num_ids != synth.num_ids)
      throw ConfigError("config: split.num_ids must match synth.num_ids");
    model.encoder.validate();
    train.validate();
    loss.validate();
    discover.validate();
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

template <typename T>
std::string num_to_string(T v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

template <typename T>
T num_from_string(const std::string& key, const std::string& s) {
  T v{};
  const char* b = s.data();
  const char* e = s.data() + s.size();
  auto res = std::from_chars(b, e, v);
  if (res.ec != std::errc() || res.ptr != e)
    throw ConfigError("config: bad numeric value for '" + key + "': " + s);
  return v;
}

inline std::string bool_to_string(bool v) { return v ? "true" : "false"; }

inline bool bool_from_string(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError("config: bad boolean value for '" + key + "': " + s);
}

inline std::string ints_to_string(const std::vector<int>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += num_to_string(v[i]);
  }
  return out;
}

inline std::vector<int> ints_from_string(const std::string& key, const std::string& s) {
  std::vector<int> out;
  std::string item;
  std::istringstream is(s);
  while (std::getline(is, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    out.push_back(num_from_string<int>(key, item));
  }
  return out;
}

struct ConfigField {
  std::string key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

inline const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields = [] {
    std::vector<ConfigField> f;
    auto add = [&f](std::string key, auto getter, auto setter) {
      f.push_back({std::move(key), getter, setter});
    };
    using EC = ExperimentConfig;

#define FACEGCD_NUM_FIELD(KEY, REF)                                                     \
  add(KEY, [](const EC& c) { return num_to_string(c.REF); },                            \
      [](EC& c, const std::string& v) {                                                 \
        c.REF = num_from_string<std::decay_t<decltype(c.REF)>>(KEY, v);                 \
      })
#define FACEGCD_BOOL_FIELD(KEY, REF)                                                    \
  add(KEY, [](const EC& c) { return bool_to_string(c.REF); },                           \
      [](EC& c, const std::string& v) { c.REF = bool_from_string(KEY, v); })
#define FACEGCD_STR_FIELD(KEY, REF)                                                     \
  add(KEY, [](const EC& c) { return c.REF; },                                           \
      [](EC& c, const std::string& v) { c.REF = v; })

    FACEGCD_NUM_FIELD("seed", seed);
    FACEGCD_STR_FIELD("output_dir", output_dir);
    add("variant", [](const EC& c) { return std::string(variant_name(c.model.variant)); },
        [](EC& c, const std::string& v) { c.model.variant = variant_from_string(v); });

    FACEGCD_NUM_FIELD("synth.num_ids", synth.num_ids);
    FACEGCD_NUM_FIELD("synth.images_per_id", synth.images_per_id);
    FACEGCD_NUM_FIELD("synth.image_side", synth.image_side);
    FACEGCD_NUM_FIELD("synth.intra_class_jitter", synth.intra_class_jitter);

    FACEGCD_NUM_FIELD("split.num_ids", split.num_ids);
    FACEGCD_NUM_FIELD("split.min_images_per_id", split.min_images_per_id);
    FACEGCD_NUM_FIELD("split.known_fraction", split.known_fraction);
    FACEGCD_NUM_FIELD("split.labeled_fraction", split.labeled_fraction);
    FACEGCD_NUM_FIELD("split.test_fraction", split.test_fraction);

    FACEGCD_NUM_FIELD("encoder.num_layers", model.encoder.num_layers);
    FACEGCD_NUM_FIELD("encoder.embed_dim", model.encoder.embed_dim);
    FACEGCD_NUM_FIELD("encoder.num_heads", model.encoder.num_heads);
    FACEGCD_NUM_FIELD("encoder.patch_size", model.encoder.patch_size);
    FACEGCD_NUM_FIELD("encoder.image_side", model.encoder.image_side);
    FACEGCD_NUM_FIELD("encoder.channels", model.encoder.channels);

    FACEGCD_NUM_FIELD("hypernet.hidden_dim", model.hypernet.hidden_dim);
    FACEGCD_NUM_FIELD("hypernet.bottleneck", model.hypernet.bottleneck);
    FACEGCD_BOOL_FIELD("hypernet.shared_trunk", model.hypernet.shared_trunk);

    FACEGCD_NUM_FIELD("model.prefix_len", model.prefix_len);
    FACEGCD_NUM_FIELD("model.head_hidden", model.head_hidden);
    FACEGCD_NUM_FIELD("model.embed_out", model.embed_out);
    FACEGCD_NUM_FIELD("model.staticgen_hidden", model.staticgen_hidden);
    FACEGCD_NUM_FIELD("model.pool_size", model.pool_size);
    FACEGCD_NUM_FIELD("model.pool_entry_len", model.pool_entry_len);
    FACEGCD_NUM_FIELD("model.pool_top_k", model.pool_top_k);

    FACEGCD_NUM_FIELD("train.epochs", train.epochs);
    FACEGCD_NUM_FIELD("train.batch_size", train.batch_size);
    FACEGCD_NUM_FIELD("train.momentum", train.momentum);
    FACEGCD_NUM_FIELD("train.weight_decay", train.weight_decay);
    FACEGCD_NUM_FIELD("train.base_lr", train.base_lr);
    FACEGCD_NUM_FIELD("train.warmup_lr", train.warmup_lr);
    FACEGCD_NUM_FIELD("train.warmup_epochs", train.warmup_epochs);
    add("train.milestones", [](const EC& c) { return ints_to_string(c.train.milestones); },
        [](EC& c, const std::string& v) {
          c.train.milestones = ints_from_string("train.milestones", v);
        });
    FACEGCD_NUM_FIELD("train.eval_every", train.eval_every);
    FACEGCD_BOOL_FIELD("train.augment.crop", train.augment.crop);
    FACEGCD_BOOL_FIELD("train.augment.flip", train.augment.flip);
    FACEGCD_BOOL_FIELD("train.augment.jitter", train.augment.jitter);
    FACEGCD_NUM_FIELD("train.augment.strength", train.augment.strength);

    FACEGCD_NUM_FIELD("loss.temperature", loss.temperature);
    FACEGCD_NUM_FIELD("loss.lambda", loss.lambda);

    FACEGCD_STR_FIELD("discover.method", discover.method);
    FACEGCD_NUM_FIELD("discover.max_iter", discover.max_iter);
    FACEGCD_NUM_FIELD("discover.n_init", discover.n_init);
    FACEGCD_NUM_FIELD("discover.tol", discover.tol);
    FACEGCD_STR_FIELD("discover.affinity", discover.affinity);
    FACEGCD_STR_FIELD("discover.linkage", discover.linkage);
    FACEGCD_NUM_FIELD("discover.eps", discover.eps);
    FACEGCD_NUM_FIELD("discover.min_samples", discover.min_samples);
    FACEGCD_STR_FIELD("discover.ssk_protocol", discover.ssk_protocol);
    FACEGCD_NUM_FIELD("discover.nnc_k", discover.nnc_k);

#undef FACEGCD_NUM_FIELD
#undef FACEGCD_BOOL_FIELD
#undef FACEGCD_STR_FIELD
    return f;
  }();
  return fields;
}

inline const ConfigField& find_field(const std::string& key) {
  for (const auto& f : config_fields())
    if (f.key == key) return f;
  throw ConfigError("config: unknown key '" + key + "'");
}

}  // namespace detail

// Every key, one per line, in registry order. Numbers use shortest exact
// decimal form so parsing the output reproduces the input bit-for-bit.
inline std::string serialize_config(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& f : detail::config_fields()) {
    out += f.key;
    out += " = ";
    out += f.get(cfg);
    out += "\n";
  }
  return out;
}

// Applies a single "key=value" assignment.
inline void apply_override(ExperimentConfig& cfg, const std::string& assignment) {
  size_t eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ConfigError("config: expected key=value, got '" + assignment + "'");
  const std::string key = detail::trim(assignment.substr(0, eq));
  const std::string value = detail::trim(assignment.substr(eq + 1));
  if (key.empty()) throw ConfigError("config: empty key in '" + assignment + "'");
  detail::find_field(key).set(cfg, value);
  if (key == "seed") cfg.derive_seeds();
}

// Text -> config. Lines are `key = value`; blank lines and lines starting
// with '#' are ignored. Unknown keys are errors.
inline ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (t.find('=') == std::string::npos)
      throw ConfigError("config: line " + std::to_string(lineno) + " is not key=value: " + t);
    apply_override(cfg, t);
  }
  cfg.derive_seeds();
  return cfg;
}

inline ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("config: cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

inline void save_config_file(const ExperimentConfig& cfg, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("config: cannot write " + path);
  out << serialize_config(cfg);
  if (!out) throw DataError("config: failed writing " + path);
}

inline bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) {
  return serialize_config(a) == serialize_config(b);
}

inline bool operator!=(const ExperimentConfig& a, const ExperimentConfig& b) { return !(a == b); }

}  // namespace facegcd
