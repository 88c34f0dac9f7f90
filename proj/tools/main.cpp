// Command-line front end; all functionality goes through the shared-library C
// API in sempred.h.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "sempred.h"

namespace {

using nlohmann::json;

int report_failure(sempred_status status, const std::string& what) {
  std::cerr << "error: " << what << ": " << sempred_last_error() << " (status " << status << ")\n";
  return 1;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    std::cerr << "error: cannot open " << path << "\n";
    std::exit(1);
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<double> parse_alpha_list(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    out.push_back(std::stod(item));
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Boolean semantic predicates over embedded document collections via a "
               "query-specific proxy encoder and an accuracy-calibrated oracle cascade"};
  app.set_version_flag("--version", std::string(sempred_version()));
  app.require_subcommand(1);

  // synth ------------------------------------------------------------------
  auto* synth = app.add_subcommand("synth", "Generate a synthetic workload (embeddings, query, labels)");
  std::string synth_out = "workload";
  std::uint64_t synth_seed = 0;
  std::size_t synth_n = 10000;
  int synth_dim = 64;
  double synth_fraction = 0.5, synth_separation = 4.0, synth_sigma = 0.1, synth_alpha = 0.9;
  std::string synth_query = "synthetic positive-cluster membership";
  synth->add_option("--out", synth_out, "Output directory")->capture_default_str();
  synth->add_option("--n-docs", synth_n, "Number of documents")->capture_default_str();
  synth->add_option("--dim", synth_dim, "Embedding dimension")->capture_default_str();
  synth->add_option("--positive-fraction", synth_fraction, "Fraction of positive documents")
      ->capture_default_str();
  synth->add_option("--separation", synth_separation, "Class mean separation in noise sigmas")
      ->capture_default_str();
  synth->add_option("--noise-sigma", synth_sigma, "Per-dimension noise sigma")->capture_default_str();
  synth->add_option("--seed", synth_seed, "Random seed")->capture_default_str();
  synth->add_option("--accuracy-target", synth_alpha, "Default accuracy target")->capture_default_str();
  synth->add_option("--query-text", synth_query, "Query text")->capture_default_str();

  // train ------------------------------------------------------------------
  auto* train = app.add_subcommand("train", "Train the proxy encoder on a labeled subset");
  std::string train_embeddings, train_query, train_labels, train_cfg_path, train_out = "params.json";
  std::string train_query_text = "semantic predicate";
  std::uint64_t train_seed = 0;
  train->add_option("--embeddings", train_embeddings, "Embedding manifest")->required();
  train->add_option("--query", train_query, "Query embedding manifest")->required();
  train->add_option("--labels", train_labels, "Training labels (JSONL)")->required();
  train->add_option("--query-text", train_query_text, "Query text")->capture_default_str();
  train->add_option("--config", train_cfg_path, "Training config JSON file");
  train->add_option("--seed", train_seed, "Random seed")->capture_default_str();
  train->add_option("--out", train_out, "Output params manifest")->capture_default_str();

  // score ------------------------------------------------------------------
  auto* score = app.add_subcommand("score", "Score every document with a trained encoder");
  std::string score_embeddings, score_query, score_params, score_out = "scores.csv";
  int score_threads = 0;
  score->add_option("--embeddings", score_embeddings, "Embedding manifest")->required();
  score->add_option("--query", score_query, "Query embedding manifest")->required();
  score->add_option("--params", score_params, "Trained params manifest")->required();
  score->add_option("--threads", score_threads, "Worker threads (0 = auto)")->capture_default_str();
  score->add_option("--out", score_out, "Output scores CSV")->capture_default_str();

  // calibrate ----------------------------------------------------------------
  auto* calibrate = app.add_subcommand(
      "calibrate", "Reconstruct per-class score distributions from a labeled sample and select thresholds");
  std::string cal_scores, cal_labels, cal_out = "calibration";
  int cal_bins = 64, cal_window = 3;
  std::uint64_t cal_seed = 0;
  double cal_alpha = 0.90;
  calibrate->add_option("--scores", cal_scores, "Scores CSV")->required();
  calibrate->add_option("--labels", cal_labels, "Sampled labels (JSONL)")->required();
  calibrate->add_option("--bins", cal_bins, "Histogram bins")->capture_default_str();
  calibrate->add_option("--window", cal_window, "Smoothing window (odd)")->capture_default_str();
  calibrate->add_option("--seed", cal_seed, "Random seed")->capture_default_str();
  calibrate->add_option("--alpha", cal_alpha, "Accuracy target")->capture_default_str();
  calibrate->add_option("--out", cal_out, "Output directory")->capture_default_str();

  // run ----------------------------------------------------------------------
  auto* run = app.add_subcommand("run", "Run the full pipeline from a config file");
  std::string run_cfg_path, run_output_dir;
  double run_alpha = -1.0, run_train_fraction = -1.0, run_cal_fraction = -1.0;
  std::int64_t run_seed = -1;
  int run_bins = -1;
  run->add_option("--config", run_cfg_path, "Pipeline config JSON")->required();
  run->add_option("--output-dir", run_output_dir, "Override output directory");
  run->add_option("--accuracy-target", run_alpha, "Override accuracy target");
  run->add_option("--train-fraction", run_train_fraction, "Override training fraction");
  run->add_option("--calibration-fraction", run_cal_fraction, "Override calibration fraction");
  run->add_option("--seed", run_seed, "Override seed");
  run->add_option("--bins", run_bins, "Override histogram bins");

  // eval ---------------------------------------------------------------------
  auto* eval = app.add_subcommand("eval", "Evaluate cascade decisions against ground truth");
  std::string eval_decisions, eval_truth, eval_out = "eval.json";
  eval->add_option("--decisions", eval_decisions, "Decisions JSONL")->required();
  eval->add_option("--truth", eval_truth, "Ground-truth labels JSONL")->required();
  eval->add_option("--out", eval_out, "Output metrics JSON")->capture_default_str();

  // sweep --------------------------------------------------------------------
  auto* sweep = app.add_subcommand("sweep", "Threshold/cascade sweep over accuracy targets");
  std::string sweep_cfg_path;
  std::string sweep_alphas = "0.80,0.82,0.84,0.86,0.88,0.90,0.92,0.94,0.96";
  std::string sweep_output_dir;
  std::int64_t sweep_seed = -1;
  sweep->add_option("--config", sweep_cfg_path, "Pipeline config JSON")->required();
  sweep->add_option("--alphas", sweep_alphas, "Comma-separated accuracy targets")->capture_default_str();
  sweep->add_option("--output-dir", sweep_output_dir, "Override output directory");
  sweep->add_option("--seed", sweep_seed, "Override seed");

  CLI11_PARSE(app, argc, argv);

  if (synth->parsed()) {
    json spec;
    spec["n_docs"] = synth_n;
    spec["dim"] = synth_dim;
    spec["positive_fraction"] = synth_fraction;
    spec["separation"] = synth_separation;
    spec["noise_sigma"] = synth_sigma;
    spec["seed"] = synth_seed;
    spec["accuracy_target"] = synth_alpha;
    spec["query_text"] = synth_query;
    if (auto st = sempred_synth_generate(spec.dump().c_str(), synth_out.c_str()); st != SEMPRED_OK)
      return report_failure(st, "synth");
    std::cout << "wrote workload to " << synth_out << "\n";
    return 0;
  }

  if (train->parsed()) {
    std::string cfg_text;
    if (!train_cfg_path.empty()) cfg_text = read_file(train_cfg_path);
    if (auto st = sempred_train(train_embeddings.c_str(), train_query.c_str(), train_labels.c_str(),
                                train_query_text.c_str(), cfg_text.empty() ? nullptr : cfg_text.c_str(),
                                train_seed, train_out.c_str());
        st != SEMPRED_OK)
      return report_failure(st, "train");
    std::cout << "wrote params to " << train_out << "\n";
    return 0;
  }

  if (score->parsed()) {
    if (auto st = sempred_score(score_embeddings.c_str(), score_query.c_str(), score_params.c_str(),
                                score_threads, score_out.c_str());
        st != SEMPRED_OK)
      return report_failure(st, "score");
    std::cout << "wrote scores to " << score_out << "\n";
    return 0;
  }

  if (calibrate->parsed()) {
    if (auto st = sempred_calibrate(cal_scores.c_str(), cal_labels.c_str(), cal_bins, cal_window, cal_seed,
                                    cal_alpha, cal_out.c_str());
        st != SEMPRED_OK)
      return report_failure(st, "calibrate");
    std::cout << "wrote calibration to " << cal_out << "\n";
    return 0;
  }

  if (run->parsed() || sweep->parsed()) {
    const std::string cfg_path = run->parsed() ? run_cfg_path : sweep_cfg_path;
    json cfg = json::parse(read_file(cfg_path), nullptr, false);
    if (cfg.is_discarded()) {
      std::cerr << "error: invalid JSON in " << cfg_path << "\n";
      return 1;
    }
    const std::string base_dir = std::filesystem::path(cfg_path).parent_path().string();

    if (run->parsed()) {
      if (!run_output_dir.empty()) cfg["output_dir"] = run_output_dir;
      if (run_alpha >= 0.0) cfg["accuracy_target"] = run_alpha;
      if (run_train_fraction >= 0.0) cfg["train_fraction"] = run_train_fraction;
      if (run_cal_fraction >= 0.0) cfg["calibration_fraction"] = run_cal_fraction;
      if (run_seed >= 0) cfg["seed"] = static_cast<std::uint64_t>(run_seed);
      if (run_bins > 0) cfg["n_bins"] = run_bins;
      char* report = nullptr;
      if (auto st = sempred_run(cfg.dump().c_str(), base_dir.empty() ? "." : base_dir.c_str(), &report);
          st != SEMPRED_OK)
        return report_failure(st, "run");
      if (report) {
        std::cout << report;
        sempred_string_free(report);
      }
      return 0;
    }

    if (!sweep_output_dir.empty()) cfg["output_dir"] = sweep_output_dir;
    if (sweep_seed >= 0) cfg["seed"] = static_cast<std::uint64_t>(sweep_seed);
    const auto alphas = parse_alpha_list(sweep_alphas);
    if (alphas.empty()) {
      std::cerr << "error: no accuracy targets given\n";
      return 1;
    }
    if (auto st = sempred_sweep(cfg.dump().c_str(), base_dir.empty() ? "." : base_dir.c_str(), alphas.data(),
                                alphas.size());
        st != SEMPRED_OK)
      return report_failure(st, "sweep");
    std::cout << "wrote sweep results under " << (cfg.contains("output_dir") ? cfg["output_dir"].get<std::string>() : std::string("run"))
              << "\n";
    return 0;
  }

  if (eval->parsed()) {
    if (auto st = sempred_eval(eval_decisions.c_str(), eval_truth.c_str(), eval_out.c_str());
        st != SEMPRED_OK)
      return report_failure(st, "eval");
    std::cout << read_file(eval_out);
    return 0;
  }

  return 0;
}
