#pragma once

// Experiment harness: the staged pipeline (synthesize, split, train, extract,
// cluster, evaluate) with every stage driven purely by the config snapshot
// plus the files earlier stages wrote, so any stage can be rerun in isolation
// and a full rerun reproduces every artifact byte for byte.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "facegcd/checkpoint.hpp"
#include "facegcd/cluster.hpp"
#include "facegcd/config.hpp"
#include "facegcd/data.hpp"
#include "facegcd/metrics.hpp"
#include "facegcd/model.hpp"
#include "facegcd/train.hpp"

namespace facegcd {

// ---------------------------------------------------------------------------
// Run directory layout
// ---------------------------------------------------------------------------

struct RunPaths {
  std::string dir;

  std::string config() const { return dir + "/config.txt"; }
  std::string images() const { return dir + "/images.bin"; }
  std::string manifest() const { return dir + "/manifest.csv"; }
  std::string split() const { return dir + "/split.csv"; }
  std::string train_log() const { return dir + "/train_log.txt"; }
  std::string best_checkpoint() const { return dir + "/checkpoint.bin"; }
  std::string final_checkpoint() const { return dir + "/final.bin"; }
  std::string train_embeddings() const { return dir + "/train_embeddings.bin"; }
  std::string test_embeddings() const { return dir + "/test_embeddings.bin"; }
  std::string assignments() const { return dir + "/assignments.csv"; }
  std::string eval() const { return dir + "/eval.json"; }
  std::string scatter_svg() const { return dir + "/scatter.svg"; }
  std::string history_svg() const { return dir + "/history.svg"; }
};

// FACEGCD_OUTPUT_ROOT prefixes relative output directories.
inline RunPaths run_paths(const ExperimentConfig& cfg) {
  std::string dir = cfg.output_dir;
  const char* root = std::getenv("FACEGCD_OUTPUT_ROOT");
  if (root && *root && !dir.empty() && dir.front() != '/')
    dir = std::string(root) + "/" + dir;
  return RunPaths{dir};
}

// ---------------------------------------------------------------------------
// Naming and structured text records
// ---------------------------------------------------------------------------

inline std::string dataset_name(const ExperimentConfig& cfg) {
  return "synth-" + detail::num_to_string(cfg.synth.num_ids) + "x" +
         detail::num_to_string(cfg.synth.images_per_id) + "-j" +
         detail::num_to_string(cfg.synth.intra_class_jitter) + "-s" +
         detail::num_to_string(cfg.seed);
}

inline std::string method_name(const ExperimentConfig& cfg) {
  return std::string(variant_name(cfg.model.variant)) + "+" + cfg.discover.method;
}

// One epoch per line, shortest exact decimals so logs replay byte-identically.
inline std::string epoch_record_line(const EpochRecord& r) {
  std::string out = "{\"epoch\": " + detail::num_to_string(r.epoch);
  out += ", \"lr\": " + detail::num_to_string(r.lr);
  out += ", \"loss_u\": " + detail::num_to_string(r.loss_u);
  out += ", \"loss_s\": " + detail::num_to_string(r.loss_s);
  out += ", \"loss_total\": " + detail::num_to_string(r.loss_total);
  out += ", \"val_acc_all\": " + detail::num_to_string(r.val_acc_all);
  out += "}";
  return out;
}

inline std::vector<EpochRecord> read_train_log(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open train log: " + path);
  std::vector<EpochRecord> out;
  std::string line;
  auto field = [](const std::string& l, const std::string& key) {
    const std::string tag = "\"" + key + "\": ";
    size_t at = l.find(tag);
    if (at == std::string::npos) throw DataError("train log line missing " + key + ": " + l);
    at += tag.size();
    size_t end = l.find_first_of(",}", at);
    return l.substr(at, end - at);
  };
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    EpochRecord r;
    r.epoch = detail::num_from_string<int>("epoch", field(line, "epoch"));
    r.lr = detail::num_from_string<double>("lr", field(line, "lr"));
    r.loss_u = detail::num_from_string<double>("loss_u", field(line, "loss_u"));
    r.loss_s = detail::num_from_string<double>("loss_s", field(line, "loss_s"));
    r.loss_total = detail::num_from_string<double>("loss_total", field(line, "loss_total"));
    r.val_acc_all = detail::num_from_string<double>("val_acc_all", field(line, "val_acc_all"));
    out.push_back(r);
  }
  return out;
}

inline std::string eval_result_json(const std::string& dataset, const std::string& method,
                                    const EvalResult& res) {
  std::string out = "{\"dataset\": \"" + dataset + "\"";
  out += ", \"method\": \"" + method + "\"";
  out += ", \"acc_all\": " + detail::num_to_string(res.acc.all);
  out += ", \"acc_known\": " + detail::num_to_string(res.acc.known);
  out += ", \"acc_novel\": " + detail::num_to_string(res.acc.novel);
  out += ", \"nnc\": " + detail::num_to_string(res.nnc);
  out += ", \"params\": {\"additional\": " + detail::num_to_string(res.params.additional);
  out += ", \"trainable\": " + detail::num_to_string(res.params.trainable);
  out += ", \"total\": " + detail::num_to_string(res.params.total);
  out += "}}";
  return out;
}

// ---------------------------------------------------------------------------
// Stage plumbing
// ---------------------------------------------------------------------------

namespace detail {

template <typename F>
auto with_stage(const char* stage, F&& f) {
  auto tag = [stage](const char* what) { return std::string(stage) + ": " + what; };
  try {
    return f();
  } catch (const ConfigError& e) {
    throw ConfigError(tag(e.what()));
  } catch (const DataError& e) {
    throw DataError(tag(e.what()));
  } catch (const ShapeError& e) {
    throw ShapeError(tag(e.what()));
  } catch (const DivergenceError& e) {
    throw DivergenceError(tag(e.what()));
  }
}

inline GFDSplit load_split_checked(const RunPaths& p) {
  GFDSplit split = read_split_csv(p.split());
  if (split.labeled_train.empty() && split.unlabeled_train.empty())
    throw DataError("split has no training rows: " + p.split());
  return split;
}

inline std::vector<int> train_labels_of(const std::vector<const Sample*>& rows) {
  std::vector<int> labels;
  labels.reserve(rows.size());
  for (const Sample* s : rows) labels.push_back(s->labeled ? s->class_id : -1);
  return labels;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

inline void stage_synth(const ExperimentConfig& cfg, const RunPaths& p) {
  detail::with_stage("synth", [&] {
    SyntheticDataset ds = generate_synthetic_dataset(cfg.synth);
    ds.store.save(p.images());
    write_manifest(p.manifest(), ds.manifest);
  });
}

inline void stage_split(const ExperimentConfig& cfg, const RunPaths& p) {
  detail::with_stage("split", [&] {
    std::vector<ManifestEntry> manifest = read_manifest(p.manifest());
    GFDSplit split = build_gfd_split(manifest, cfg.split);
    ValidationReport rep = validate_split(split);
    if (!rep.ok()) throw DataError("split validation failed: " + rep.violations.front());
    write_split_csv(p.split(), split);
  });
}

inline FitResult stage_train(const ExperimentConfig& cfg, const RunPaths& p) {
  return detail::with_stage("train", [&] {
    ImageStore store = ImageStore::load(p.images());
    GFDSplit split = detail::load_split_checked(p);
    FaceGCDModel model(cfg.model);

    std::ofstream log(p.train_log());
    if (!log) throw DataError("cannot write train log: " + p.train_log());
    FitHooks hooks;
    hooks.on_epoch = [&log](const EpochRecord& r) {
      log << epoch_record_line(r) << "\n";
      log.flush();
    };
    hooks.on_best = [&p](const Checkpoint& ck, const EpochRecord& r) {
      Checkpoint out = ck;
      out.meta["best_epoch"] = detail::num_to_string(r.epoch);
      out.meta["best_val_acc"] = detail::num_to_string(r.val_acc_all);
      save_checkpoint(p.best_checkpoint(), out);
    };

    FitResult res = fit(model, split, store, cfg.train, cfg.loss, hooks);
    save_checkpoint(p.final_checkpoint(), res.final_state);
    if (res.best_epoch < 0) save_checkpoint(p.best_checkpoint(), res.best);
    return res;
  });
}

// Batch forward through a restored model; row order follows `samples`.
inline EmbeddingFile extract_embeddings(const FaceGCDModel& model, const ImageStore& store,
                                        const std::vector<const Sample*>& samples) {
  EmbeddingFile out;
  out.embeddings = embed_samples(model, store, samples);
  out.ids.reserve(samples.size());
  for (const Sample* s : samples) out.ids.push_back(s->id);
  return out;
}

inline void stage_extract(const ExperimentConfig& cfg, const RunPaths& p) {
  detail::with_stage("extract", [&] {
    (void)cfg;
    std::unique_ptr<FaceGCDModel> model = load_model(p.best_checkpoint());
    ImageStore store = ImageStore::load(p.images());
    GFDSplit split = detail::load_split_checked(p);

    save_embeddings(p.train_embeddings(),
                    extract_embeddings(*model, store, split.train_view()));
    std::vector<const Sample*> test;
    for (const Sample& s : split.test) test.push_back(&s);
    save_embeddings(p.test_embeddings(), extract_embeddings(*model, store, test));
  });
}

// Predicted clusters for the test rows under the configured method/protocol.
inline Assignment discover_test_assignment(const DiscoverConfig& dc, const Tensor& train_emb,
                                           const std::vector<int>& train_labels,
                                           const Tensor& test_emb,
                                           const std::vector<int>& test_truth, int k,
                                           std::uint64_t seed) {
  dc.validate();
  const ClusterConfig cc = dc.cluster_config(seed);
  if (dc.method == "ssk") {
    if (dc.ssk_protocol == "joint") {
      const int nr = train_emb.dim(0), ne = test_emb.dim(0), e = test_emb.dim(1);
      Tensor all({nr + ne, e});
      std::copy_n(train_emb.data(), train_emb.numel(), all.data());
      std::copy_n(test_emb.data(), test_emb.numel(), all.data() + train_emb.numel());
      std::vector<int> labels = train_labels;
      labels.resize(static_cast<size_t>(nr + ne), -1);
      Assignment joint = ssk_cluster(all, labels, k, cc);
      Assignment out = joint;
      out.cluster_of.assign(joint.cluster_of.begin() + nr, joint.cluster_of.end());
      out.hyperparams["protocol"] = "joint";
      return out;
    }
    Assignment fitted = ssk_cluster(train_emb, train_labels, k, cc);
    Assignment out = fitted;
    out.cluster_of = assign_nearest(fitted.centroids, test_emb);
    out.hyperparams["protocol"] = "fit-train";
    return out;
  }
  if (dc.method == "kmeans") return kmeans_cluster(test_emb, k, cc);
  if (dc.method == "dbscan") return dbscan_cluster(test_emb, dc.eps, dc.min_samples);
  if (dc.method == "dbscan_grid") return dbscan_grid(test_emb, test_truth);
  if (dc.method == "hac")
    return hac_cluster(test_emb, k, affinity_from_string(dc.affinity),
                       linkage_from_string(dc.linkage));
  if (dc.method == "hac_grid") return hac_grid(test_emb, test_truth, k);
  throw ConfigError("discover: unknown method '" + dc.method + "'");
}

inline Assignment stage_cluster(const ExperimentConfig& cfg, const RunPaths& p) {
  return detail::with_stage("cluster", [&] {
    GFDSplit split = detail::load_split_checked(p);
    EmbeddingFile train_emb = load_embeddings(p.train_embeddings());
    EmbeddingFile test_emb = load_embeddings(p.test_embeddings());
    std::vector<int> train_labels = detail::train_labels_of(split.train_view());
    if (train_labels.size() != static_cast<size_t>(train_emb.embeddings.dim(0)))
      throw DataError("train embeddings do not match the split row count");
    if (split.test.size() != static_cast<size_t>(test_emb.embeddings.dim(0)))
      throw DataError("test embeddings do not match the split row count");
    std::vector<int> test_truth;
    for (const Sample& s : split.test) test_truth.push_back(s.class_id);
    const int k = static_cast<int>(split.known_ids.size() + split.unknown_ids.size());

    Assignment assign =
        discover_test_assignment(cfg.discover, train_emb.embeddings, train_labels,
                                 test_emb.embeddings, test_truth, k, cfg.cluster_seed());
    write_assignments(p.assignments(), test_emb.ids, assign.cluster_of);
    return assign;
  });
}

inline EvalResult stage_eval(const ExperimentConfig& cfg, const RunPaths& p) {
  return detail::with_stage("eval", [&] {
    GFDSplit split = detail::load_split_checked(p);
    EmbeddingFile test_emb = load_embeddings(p.test_embeddings());
    std::vector<std::pair<std::string, int>> rows = read_assignments(p.assignments());

    std::map<std::string, int> truth_of;
    for (const Sample& s : split.test) truth_of[s.id] = s.class_id;
    if (rows.size() != truth_of.size())
      throw DataError("assignments do not cover the test split exactly");
    std::vector<int> pred, truth;
    for (const auto& [id, cluster] : rows) {
      auto it = truth_of.find(id);
      if (it == truth_of.end()) throw DataError("assignment for unknown sample id: " + id);
      pred.push_back(cluster);
      truth.push_back(it->second);
    }

    EvalResult res;
    std::set<int> known(split.known_ids.begin(), split.known_ids.end());
    res.acc = hungarian_accuracy(pred, truth, known);
    std::vector<int> emb_truth;
    for (const std::string& id : test_emb.ids) {
      auto it = truth_of.find(id);
      if (it == truth_of.end()) throw DataError("embedding for unknown sample id: " + id);
      emb_truth.push_back(it->second);
    }
    res.nnc = nnc(test_emb.embeddings, emb_truth, cfg.discover.nnc_k);
    Checkpoint ck = load_checkpoint(p.best_checkpoint());
    res.params = count_params(model_config_from_meta(ck.meta));

    std::ofstream f(p.eval());
    if (!f) throw DataError("cannot write eval result: " + p.eval());
    f << eval_result_json(dataset_name(cfg), method_name(cfg), res) << "\n";
    return res;
  });
}

// ---------------------------------------------------------------------------
// Full pipeline
// ---------------------------------------------------------------------------

struct RunOutcome {
  std::string name;
  EvalResult eval;
  RunPaths paths;
  FitResult fit;
};

struct DiscoveryReport {
  std::vector<RunOutcome> runs;
};

inline RunOutcome run_experiment(const ExperimentConfig& input) {
  ExperimentConfig cfg = input;
  cfg.derive_seeds();
  cfg.validate();
  RunPaths p = run_paths(cfg);
  std::filesystem::create_directories(p.dir);
  save_config_file(cfg, p.config());

  RunOutcome out;
  out.name = method_name(cfg);
  out.paths = p;
  stage_synth(cfg, p);
  stage_split(cfg, p);
  out.fit = stage_train(cfg, p);
  stage_extract(cfg, p);
  stage_cluster(cfg, p);
  out.eval = stage_eval(cfg, p);
  return out;
}

// Variant sweep on one seed: per-variant subdirectories, one comparable table.
inline DiscoveryReport run_variants(const ExperimentConfig& base,
                                    const std::vector<Variant>& variants) {
  DiscoveryReport report;
  for (Variant v : variants) {
    ExperimentConfig cfg = base;
    cfg.model.variant = v;
    cfg.output_dir = base.output_dir + "/" + variant_name(v);
    report.runs.push_back(run_experiment(cfg));
  }
  return report;
}

// Prefix-length ablation sweep, Table-3 style.
inline DiscoveryReport run_prefix_ablation(const ExperimentConfig& base,
                                           const std::vector<int>& prefix_lens) {
  DiscoveryReport report;
  for (int m : prefix_lens) {
    ExperimentConfig cfg = base;
    cfg.model.prefix_len = m;
    cfg.output_dir = base.output_dir + "/m" + std::to_string(m);
    RunOutcome run = run_experiment(cfg);
    run.name = "m=" + std::to_string(m);
    report.runs.push_back(run);
  }
  return report;
}

inline std::string render_report(const DiscoveryReport& report) {
  std::string out;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-28s %8s %8s %8s %8s %12s %12s\n", "method", "all",
                "known", "novel", "nnc", "additional", "trainable");
  out += buf;
  for (const RunOutcome& r : report.runs) {
    std::snprintf(buf, sizeof(buf), "%-28s %8.1f %8.1f %8.1f %8.1f %12lld %12lld\n",
                  r.name.c_str(), r.eval.acc.all, r.eval.acc.known, r.eval.acc.novel, r.eval.nnc,
                  static_cast<long long>(r.eval.params.additional),
                  static_cast<long long>(r.eval.params.trainable));
    out += buf;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Plots
// ---------------------------------------------------------------------------

namespace detail {

// Two principal directions by power iteration on the (double) covariance.
inline std::vector<std::array<double, 2>> pca2(const Tensor& x, std::uint64_t seed) {
  const int n = x.dim(0), e = x.dim(1);
  std::vector<double> mean(static_cast<size_t>(e), 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < e; ++j) mean[static_cast<size_t>(j)] += x.at({i, j});
  for (double& m : mean) m /= n;
  std::vector<double> cov(static_cast<size_t>(e) * e, 0.0);
  for (int i = 0; i < n; ++i)
    for (int a = 0; a < e; ++a) {
      const double xa = x.at({i, a}) - mean[static_cast<size_t>(a)];
      for (int b = 0; b < e; ++b)
        cov[static_cast<size_t>(a) * e + b] +=
            xa * (x.at({i, b}) - mean[static_cast<size_t>(b)]);
    }

  Rng rng = make_rng(seed, "pca");
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto power_iter = [&](const std::vector<double>& m) {
    std::vector<double> v(static_cast<size_t>(e));
    for (double& c : v) c = gauss(rng);
    for (int it = 0; it < 200; ++it) {
      std::vector<double> w(static_cast<size_t>(e), 0.0);
      for (int a = 0; a < e; ++a)
        for (int b = 0; b < e; ++b)
          w[static_cast<size_t>(a)] += m[static_cast<size_t>(a) * e + b] * v[static_cast<size_t>(b)];
      double norm = 0.0;
      for (double c : w) norm += c * c;
      norm = std::sqrt(norm);
      if (norm < 1e-12) return v;
      for (int a = 0; a < e; ++a) v[static_cast<size_t>(a)] = w[static_cast<size_t>(a)] / norm;
    }
    return v;
  };
  std::vector<double> v1 = power_iter(cov);
  double lambda1 = 0.0;
  for (int a = 0; a < e; ++a) {
    double row = 0.0;
    for (int b = 0; b < e; ++b)
      row += cov[static_cast<size_t>(a) * e + b] * v1[static_cast<size_t>(b)];
    lambda1 += v1[static_cast<size_t>(a)] * row;
  }
  std::vector<double> deflated = cov;
  for (int a = 0; a < e; ++a)
    for (int b = 0; b < e; ++b)
      deflated[static_cast<size_t>(a) * e + b] -=
          lambda1 * v1[static_cast<size_t>(a)] * v1[static_cast<size_t>(b)];
  std::vector<double> v2 = power_iter(deflated);

  std::vector<std::array<double, 2>> out(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    double p1 = 0.0, p2 = 0.0;
    for (int j = 0; j < e; ++j) {
      const double c = x.at({i, j}) - mean[static_cast<size_t>(j)];
      p1 += c * v1[static_cast<size_t>(j)];
      p2 += c * v2[static_cast<size_t>(j)];
    }
    out[static_cast<size_t>(i)] = {p1, p2};
  }
  return out;
}

inline std::string svg_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

inline const char* plot_color(int i) {
  static const char* palette[10] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  return palette[i % 10];
}

}  // namespace detail

// Scatter of up to five known and five novel classes in the top-2 principal
// plane. Known classes draw filled, novel ones draw as rings.
inline void write_scatter_svg(const std::string& path, const Tensor& embeddings,
                              const std::vector<int>& labels, const std::vector<int>& known_ids,
                              std::uint64_t seed) {
  if (embeddings.ndim() != 2 || embeddings.dim(0) != static_cast<int>(labels.size()))
    throw ShapeError("scatter: embeddings/labels mismatch");
  std::set<int> known(known_ids.begin(), known_ids.end());
  std::vector<int> chosen_known, chosen_novel;
  for (int l : std::set<int>(labels.begin(), labels.end())) {
    if (known.count(l) && chosen_known.size() < 5) chosen_known.push_back(l);
    if (!known.count(l) && chosen_novel.size() < 5) chosen_novel.push_back(l);
  }
  std::vector<int> selected = chosen_known;
  selected.insert(selected.end(), chosen_novel.begin(), chosen_novel.end());
  std::map<int, int> slot;
  for (size_t i = 0; i < selected.size(); ++i) slot[selected[i]] = static_cast<int>(i);

  auto proj = detail::pca2(embeddings, seed);
  double lo0 = 1e30, hi0 = -1e30, lo1 = 1e30, hi1 = -1e30;
  for (size_t i = 0; i < proj.size(); ++i) {
    if (!slot.count(labels[i])) continue;
    lo0 = std::min(lo0, proj[i][0]);
    hi0 = std::max(hi0, proj[i][0]);
    lo1 = std::min(lo1, proj[i][1]);
    hi1 = std::max(hi1, proj[i][1]);
  }
  if (lo0 > hi0) throw DataError("scatter: no rows with the selected class ids");
  const double w = 640, h = 480, margin = 50;
  auto sx = [&](double v) {
    return hi0 > lo0 ? margin + (v - lo0) / (hi0 - lo0) * (w - 2 * margin) : w / 2;
  };
  auto sy = [&](double v) {
    return hi1 > lo1 ? h - margin - (v - lo1) / (hi1 - lo1) * (h - 2 * margin) : h / 2;
  };

  std::ofstream f(path);
  if (!f) throw DataError("cannot write svg: " + path);
  f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
    << "\" viewBox=\"0 0 " << w << " " << h << "\">\n";
  f << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (size_t i = 0; i < proj.size(); ++i) {
    auto it = slot.find(labels[i]);
    if (it == slot.end()) continue;
    const char* color = detail::plot_color(it->second);
    const bool is_known = known.count(labels[i]) > 0;
    f << "<circle cx=\"" << detail::svg_num(sx(proj[i][0])) << "\" cy=\""
      << detail::svg_num(sy(proj[i][1])) << "\" r=\"3\"";
    if (is_known)
      f << " fill=\"" << color << "\"/>\n";
    else
      f << " fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\"/>\n";
  }
  double ly = 16;
  for (int l : selected) {
    const char* color = detail::plot_color(slot[l]);
    f << "<text x=\"8\" y=\"" << detail::svg_num(ly) << "\" font-size=\"12\" fill=\"" << color
      << "\">id " << l << (known.count(l) ? " (known)" : " (novel)") << "</text>\n";
    ly += 14;
  }
  f << "</svg>\n";
}

// Validation-accuracy bars over the training history plus a final NNC bar.
// Returns false (and writes nothing) when there is nothing to chart.
inline bool write_history_svg(const std::string& path, const std::vector<EpochRecord>& history,
                              double final_nnc = -1.0) {
  std::vector<std::pair<std::string, double>> bars;
  for (const EpochRecord& r : history)
    if (r.val_acc_all >= 0.0)
      bars.push_back({"e" + std::to_string(r.epoch), r.val_acc_all});
  if (final_nnc >= 0.0) bars.push_back({"nnc", final_nnc});
  if (bars.empty()) {
    std::fprintf(stderr, "warning: no validation history; bar chart omitted\n");
    return false;
  }
  const double w = 640, h = 320, margin = 40;
  const double bw = (w - 2 * margin) / static_cast<double>(bars.size());
  std::ofstream f(path);
  if (!f) throw DataError("cannot write svg: " + path);
  f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
    << "\" viewBox=\"0 0 " << w << " " << h << "\">\n";
  f << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (size_t i = 0; i < bars.size(); ++i) {
    const double bh = bars[i].second / 100.0 * (h - 2 * margin);
    const double x = margin + static_cast<double>(i) * bw;
    const char* color = bars[i].first == "nnc" ? "#ff7f0e" : "#1f77b4";
    f << "<rect x=\"" << detail::svg_num(x + 2) << "\" y=\"" << detail::svg_num(h - margin - bh)
      << "\" width=\"" << detail::svg_num(bw - 4) << "\" height=\"" << detail::svg_num(bh)
      << "\" fill=\"" << color << "\"/>\n";
    f << "<text x=\"" << detail::svg_num(x + bw / 2) << "\" y=\"" << detail::svg_num(h - margin + 14)
      << "\" font-size=\"10\" text-anchor=\"middle\">" << bars[i].first << "</text>\n";
    f << "<text x=\"" << detail::svg_num(x + bw / 2) << "\" y=\""
      << detail::svg_num(h - margin - bh - 4) << "\" font-size=\"10\" text-anchor=\"middle\">"
      << detail::svg_num(bars[i].second) << "</text>\n";
  }
  f << "</svg>\n";
  return true;
}

inline void stage_plot(const ExperimentConfig& cfg, const RunPaths& p, double final_nnc = -1.0) {
  detail::with_stage("plot", [&] {
    GFDSplit split = detail::load_split_checked(p);
    EmbeddingFile test_emb = load_embeddings(p.test_embeddings());
    std::map<std::string, int> truth_of;
    for (const Sample& s : split.test) truth_of[s.id] = s.class_id;
    std::vector<int> labels;
    for (const std::string& id : test_emb.ids) {
      auto it = truth_of.find(id);
      if (it == truth_of.end()) throw DataError("embedding for unknown sample id: " + id);
      labels.push_back(it->second);
    }
    write_scatter_svg(p.scatter_svg(), test_emb.embeddings, labels, split.known_ids,
                      mix_seed(cfg.seed, "plot"));
    std::vector<EpochRecord> history;
    if (std::filesystem::exists(p.train_log())) history = read_train_log(p.train_log());
    write_history_svg(p.history_svg(), history, final_nnc);
  });
}

}  // namespace facegcd
