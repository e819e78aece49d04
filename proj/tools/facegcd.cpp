// facegcd command line: staged discovery pipeline plus ablation and report
// rendering. Every stage reads the config snapshot and the files earlier
// stages wrote, so a run can be replayed stage by stage from its snapshot.
//
// Exit codes: 0 success, 2 config error, 3 data error, 4 training divergence.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "facegcd/config.hpp"
#include "facegcd/experiment.hpp"

namespace fs = std::filesystem;
using namespace facegcd;

namespace {

struct CommonOpts {
  std::string config_file;
  std::vector<std::string> sets;
  std::string output_dir;
  long long seed = -1;
};

// Attaches the options shared by every pipeline stage. Precedence is
// defaults < config file < --set (in order) < direct flags.
CLI::App* add_stage(CLI::App& app, const char* name, const char* desc, CommonOpts& opts) {
  CLI::App* sub = app.add_subcommand(name, desc);
  sub->add_option("-c,--config", opts.config_file, "config file (key = value lines)");
  sub->add_option("--set", opts.sets, "override a config key (key=value, repeatable)");
  sub->add_option("-o,--output-dir", opts.output_dir, "run directory (config key output_dir)");
  sub->add_option("-s,--seed", opts.seed, "root seed (config key seed)")
      ->check(CLI::NonNegativeNumber);
  return sub;
}

ExperimentConfig resolve(const CommonOpts& opts) {
  ExperimentConfig cfg;
  if (!opts.config_file.empty()) cfg = load_config_file(opts.config_file);
  for (const std::string& s : opts.sets) apply_override(cfg, s);
  if (!opts.output_dir.empty()) apply_override(cfg, "output_dir=" + opts.output_dir);
  if (opts.seed >= 0) apply_override(cfg, "seed=" + std::to_string(opts.seed));
  cfg.validate();
  return cfg;
}

RunPaths prepared_paths(const ExperimentConfig& cfg) {
  RunPaths p = run_paths(cfg);
  fs::create_directories(p.dir);
  return p;
}

void note(const std::string& line) { std::fprintf(stderr, "%s\n", line.c_str()); }

double nnc_from_eval_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) return -1.0;
  nlohmann::json j = nlohmann::json::parse(f, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded() || !j.contains("nnc")) return -1.0;
  return j["nnc"].get<double>();
}

int cmd_report(const std::vector<std::string>& files) {
  std::printf("%-28s %-24s %8s %8s %8s %8s %12s %12s %12s\n", "dataset", "method", "all",
              "known", "novel", "nnc", "additional", "trainable", "total");
  for (const std::string& path : files) {
    std::ifstream f(path);
    if (!f) throw DataError("report: cannot open " + path);
    nlohmann::json j;
    try {
      f >> j;
    } catch (const nlohmann::json::exception& e) {
      throw DataError("report: " + path + ": " + e.what());
    }
    for (const char* key : {"dataset", "method", "acc_all", "acc_known", "acc_novel", "nnc"})
      if (!j.contains(key)) throw DataError("report: " + path + " missing field " + key);
    const auto& params = j["params"];
    std::printf("%-28s %-24s %8.1f %8.1f %8.1f %8.1f %12lld %12lld %12lld\n",
                j["dataset"].get<std::string>().c_str(), j["method"].get<std::string>().c_str(),
                j["acc_all"].get<double>(), j["acc_known"].get<double>(),
                j["acc_novel"].get<double>(), j["nnc"].get<double>(),
                params.value("additional", -1LL), params.value("trainable", -1LL),
                params.value("total", -1LL));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"facegcd: generalized face discovery pipeline"};
  app.require_subcommand(1);

  CommonOpts synth_o, split_o, train_o, extract_o, cluster_o, eval_o, ablate_o, plot_o;
  CLI::App* synth = add_stage(app, "synth", "generate the synthetic dataset", synth_o);
  CLI::App* split = add_stage(app, "split", "build the discovery split", split_o);
  CLI::App* train = add_stage(app, "train", "train the model on the split", train_o);
  CLI::App* extract = add_stage(app, "extract", "embed train/test samples", extract_o);
  CLI::App* cluster = add_stage(app, "cluster", "cluster the test embeddings", cluster_o);
  CLI::App* eval = add_stage(app, "eval", "score assignments against the split", eval_o);
  CLI::App* ablate = add_stage(app, "ablate", "sweep prefix sizes or variants", ablate_o);
  CLI::App* plot = add_stage(app, "plot", "emit scatter and history charts", plot_o);

  std::string cluster_method;
  cluster->add_option("-m,--method", cluster_method,
                      "clustering method (config key discover.method)");
  int nnc_k = -1;
  eval->add_option("-k,--nnc-k", nnc_k, "neighbors for NNC (config key discover.nnc_k)")
      ->check(CLI::PositiveNumber);

  std::vector<int> prefix_lens{5, 10, 20};
  std::vector<std::string> variant_names;
  ablate->add_option("--prefix-lens", prefix_lens, "prefix sizes to sweep")->delimiter(',');
  ablate->add_option("--variants", variant_names, "variants to sweep instead")->delimiter(',');

  std::vector<std::string> report_files;
  CLI::App* report = app.add_subcommand("report", "render a table from eval result files");
  report->add_option("files", report_files, "eval result files")->required();

  try {
    app.parse(argc, argv);

    if (synth->parsed()) {
      ExperimentConfig cfg = resolve(synth_o);
      RunPaths p = prepared_paths(cfg);
      save_config_file(cfg, p.config());
      stage_synth(cfg, p);
      note("synth: wrote " + p.images() + " (" +
           std::to_string(cfg.synth.num_ids * cfg.synth.images_per_id) + " images)");
    } else if (split->parsed()) {
      ExperimentConfig cfg = resolve(split_o);
      RunPaths p = prepared_paths(cfg);
      stage_split(cfg, p);
      note("split: wrote " + p.split());
    } else if (train->parsed()) {
      ExperimentConfig cfg = resolve(train_o);
      RunPaths p = prepared_paths(cfg);
      FitResult res = stage_train(cfg, p);
      std::string line = "train: " + std::to_string(cfg.train.epochs) + " epochs, final loss " +
                         detail::num_to_string(res.history.back().loss_total);
      if (res.best_epoch >= 0)
        line += ", best val acc " + detail::num_to_string(res.best_acc) + " at epoch " +
                std::to_string(res.best_epoch);
      note(line);
    } else if (extract->parsed()) {
      ExperimentConfig cfg = resolve(extract_o);
      RunPaths p = prepared_paths(cfg);
      stage_extract(cfg, p);
      note("extract: wrote " + p.train_embeddings() + " and " + p.test_embeddings());
    } else if (cluster->parsed()) {
      if (!cluster_method.empty()) cluster_o.sets.push_back("discover.method=" + cluster_method);
      ExperimentConfig cfg = resolve(cluster_o);
      RunPaths p = prepared_paths(cfg);
      Assignment a = stage_cluster(cfg, p);
      note("cluster: " + std::to_string(a.k) + " clusters via " + a.method + " -> " +
           p.assignments());
    } else if (eval->parsed()) {
      if (nnc_k > 0) eval_o.sets.push_back("discover.nnc_k=" + std::to_string(nnc_k));
      ExperimentConfig cfg = resolve(eval_o);
      RunPaths p = prepared_paths(cfg);
      EvalResult res = stage_eval(cfg, p);
      std::printf("%s\n", eval_result_json(dataset_name(cfg), method_name(cfg), res).c_str());
    } else if (ablate->parsed()) {
      ExperimentConfig base = resolve(ablate_o);
      DiscoveryReport rep;
      if (!variant_names.empty()) {
        std::vector<Variant> variants;
        for (const std::string& v : variant_names) variants.push_back(variant_from_string(v));
        rep = run_variants(base, variants);
      } else {
        rep = run_prefix_ablation(base, prefix_lens);
      }
      const std::string table = render_report(rep);
      std::ofstream out(run_paths(base).dir + "/report.txt");
      out << table;
      std::printf("%s", table.c_str());
    } else if (plot->parsed()) {
      ExperimentConfig cfg = resolve(plot_o);
      RunPaths p = prepared_paths(cfg);
      stage_plot(cfg, p, nnc_from_eval_file(p.eval()));
      note("plot: wrote " + p.scatter_svg());
    } else if (report->parsed()) {
      return cmd_report(report_files);
    }
    return 0;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const ShapeError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const DataError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const DivergenceError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
