// Command-line front end: data generation, training, evaluation of composed
// translators, the fusion sweep, gradient checks and plotting.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "mixmatch/config.hpp"
#include "mixmatch/experiment.hpp"
#include "mixmatch/gradcheck.hpp"
#include "mixmatch/plot.hpp"

namespace fs = std::filesystem;
using namespace mixmatch;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "out";
};

ExperimentConfig load(const Globals& g) {
  return g.config.empty() ? parse_config(nlohmann::json::object()) : load_config(g.config);
}

Splits obtain_splits(const std::string& data_dir, const ExperimentConfig& cfg) {
  if (fs::exists(fs::path(data_dir) / "d1.mmd")) return load_splits(data_dir);
  std::cerr << "no dataset in " << data_dir << ", generating from the configured split\n";
  return make_splits(cfg.split);
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << text;
}

std::vector<std::string> parse_path(const std::string& text) {
  std::vector<std::string> path;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) path.push_back(canonical_modality(item));
  return path;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mix-and-match encoder/decoder translation between RGB, depth and segmentation"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand
  Globals g;
  app.add_option("--config", g.config, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Overrides the split seed (gen-data) or training seed");
  app.add_option("--out-dir", g.out_dir, "Output directory")->capture_default_str();

  std::string data_dir;
  std::string run_dir;

  auto* gen = app.add_subcommand("gen-data", "Generate the D1/D2/D3 and validation splits");

  auto* train_cmd = app.add_subcommand("train", "Train all encoders and decoders");
  train_cmd->add_option("--data", data_dir, "Dataset directory (default <out-dir>/data)");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate seen, zero-pair and cascaded translators");
  eval_cmd->add_option("--data", data_dir, "Dataset directory (default <out-dir>/data)");
  eval_cmd->add_option("--run", run_dir, "Trained run directory (default <out-dir>/run)");

  std::string path_text;
  auto* compose_cmd = app.add_subcommand("compose", "Evaluate one encoder/decoder chain on D3");
  compose_cmd->add_option("--path", path_text, "Modalities, e.g. D,S or D,R,S")->required();
  compose_cmd->add_option("--data", data_dir, "Dataset directory (default <out-dir>/data)");
  compose_cmd->add_option("--run", run_dir, "Trained run directory (default <out-dir>/run)");

  std::vector<double> alphas;
  std::vector<std::string> sources;
  auto* sweep_cmd = app.add_subcommand("sweep-alpha", "mIoU of fused (R,D)->S over alpha");
  sweep_cmd->add_option("--data", data_dir, "Dataset directory (default <out-dir>/data)");
  sweep_cmd->add_option("--run", run_dir, "Trained run directory (default <out-dir>/run)");
  sweep_cmd->add_option("--alphas", alphas, "Alpha grid (default from config)")->delimiter(',');
  sweep_cmd->add_option("--index-sources", sources, "Index sources (default rgb,depth)")
      ->delimiter(',');

  std::uint64_t grad_seed = 0;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference checks of every primitive and loss");
  grad_cmd->add_option("--suite-seed", grad_seed, "Seed of the random test tensors");

  std::string csv_path;
  std::string svg_path;
  auto* plot_cmd = app.add_subcommand("plot", "Render an alpha-sweep CSV as SVG");
  plot_cmd->add_option("--csv", csv_path, "Sweep CSV")->required()->check(CLI::ExistingFile);
  plot_cmd->add_option("--out", svg_path, "SVG path (default <out-dir>/alpha_sweep.svg)");

  std::string experiment_name;
  std::string cache_dir;
  auto* exp_cmd = app.add_subcommand("experiment", "Run a named experiment (training runs are cached)");
  exp_cmd->add_option("--name", experiment_name, "Experiment")
      ->required()
      ->check(CLI::IsMember(kExperimentNames));
  exp_cmd->add_option("--data", data_dir, "Dataset directory (default <out-dir>/data)");
  exp_cmd->add_option("--cache", cache_dir, "Run cache directory (default <out-dir>/runs)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return static_cast<int>(ErrorCategory::kConfig);
  }

  try {
    auto cfg = load(g);
    const fs::path out(g.out_dir);
    if (data_dir.empty()) data_dir = (out / "data").string();
    if (run_dir.empty()) run_dir = (out / "run").string();

    if (gen->parsed()) {
      if (g.seed) cfg.split.seed = *g.seed;
      const auto splits = make_splits(cfg.split);
      save_splits(splits, out / "data");
      std::cout << "wrote " << splits.d1.items.size() << "/" << splits.d2.items.size() << "/"
                << splits.d3.items.size() << " scenes to " << (out / "data").string() << "\n";
      return 0;
    }
    if (g.seed) cfg.train.seed = *g.seed;
    if (train_cmd->parsed()) {
      const auto splits = obtain_splits(data_dir, cfg);
      fs::create_directories(run_dir);
      train_and_save(splits, cfg.train, run_dir, &std::cerr);
      std::cout << "saved run to " << run_dir << "\n";
      return 0;
    }
    if (eval_cmd->parsed()) {
      const auto splits = obtain_splits(data_dir, cfg);
      auto graph = TranslationGraph<float>::load(run_dir);
      nlohmann::json report;
      report["R->S"] = to_json(evaluate_seg(*graph, {"rgb", "seg"}, splits.d3));
      report["R->D"] = to_json(evaluate_depth(*graph, {"rgb", "depth"}, splits.d3));
      report["D->S"] = to_json(evaluate_seg(*graph, {"depth", "seg"}, splits.d3));
      report["S->D"] = to_json(evaluate_depth(*graph, {"seg", "depth"}, splits.d3));
      report["D->R->S"] = to_json(evaluate_seg(*graph, {"depth", "rgb", "seg"}, splits.d3));
      report["S->R->D"] = to_json(evaluate_depth(*graph, {"seg", "rgb", "depth"}, splits.d3));
      auto fused = to_json(evaluate_fused_seg(*graph, cfg.fusion, splits.d3));
      fused["alpha"] = cfg.fusion.alpha;
      fused["index_source"] = cfg.fusion.index_source;
      report["(R,D)->S"] = fused;
      const std::string text = report.dump(2) + "\n";
      write_file(out / "eval.json", text);
      std::cout << text;
      return 0;
    }
    if (compose_cmd->parsed()) {
      const auto splits = obtain_splits(data_dir, cfg);
      auto graph = TranslationGraph<float>::load(run_dir);
      const auto path = parse_path(path_text);
      if (path.size() < 2) throw CompositionError("--path needs at least two modalities");
      const auto kind = graph->modality(path.back()).loss_kind;
      nlohmann::json report;
      if (kind == LossKind::kSegmentationCe) {
        report = to_json(evaluate_seg(*graph, path, splits.d3));
      } else if (kind == LossKind::kDepthBerhu) {
        report = to_json(evaluate_depth(*graph, path, splits.d3));
      } else {
        throw ContractError("D3 holds no RGB ground truth to score against");
      }
      std::cout << report.dump(2) << "\n";
      return 0;
    }
    if (sweep_cmd->parsed()) {
      const auto splits = obtain_splits(data_dir, cfg);
      auto graph = TranslationGraph<float>::load(run_dir);
      const auto points = alpha_sweep(*graph, splits.d3, alphas.empty() ? cfg.sweep.alphas : alphas,
                                      sources.empty() ? cfg.sweep.index_sources : sources);
      const std::string csv = sweep_csv(points);
      write_file(out / "alpha_sweep.csv", csv);
      std::cout << csv;
      return 0;
    }
    if (grad_cmd->parsed()) {
      bool ok = true;
      for (const auto& entry : run_gradient_suite(grad_seed)) {
        const bool pass = entry.max_relative_error < 1e-3;
        ok = ok && pass;
        std::printf("%-26s %.3e %s\n", entry.name.c_str(), entry.max_relative_error,
                    pass ? "ok" : "FAIL");
      }
      if (!ok) throw NumericError("gradient check exceeded 1e-3 relative error");
      return 0;
    }
    if (plot_cmd->parsed()) {
      const fs::path target = svg_path.empty() ? out / "alpha_sweep.svg" : fs::path(svg_path);
      if (target.has_parent_path()) fs::create_directories(target.parent_path());
      emit_plot(csv_path, target);
      std::cout << "wrote " << target.string() << "\n";
      return 0;
    }
    if (exp_cmd->parsed()) {
      const auto splits = obtain_splits(data_dir, cfg);
      RunCache cache(cache_dir.empty() ? out / "runs" : fs::path(cache_dir), &std::cerr);
      const auto report = run_experiment(experiment_name, cfg, splits, cache);
      const std::string text = report.dump(2) + "\n";
      write_file(out / (experiment_name + ".json"), text);
      std::cout << text;
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ErrorCategory::kGeneric);
  }
  return 0;
}
