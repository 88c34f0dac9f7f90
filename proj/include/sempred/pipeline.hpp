#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "sempred/calibrate.hpp"
#include "sempred/cascade.hpp"
#include "sempred/core.hpp"
#include "sempred/oracle.hpp"
#include "sempred/proxy.hpp"
#include "sempred/synth.hpp"

namespace sempred {

struct OraclePipelineConfig {
  enum class Mode { mock, http };
  Mode mode = Mode::mock;
  std::string labels_path;     // mock: ground-truth label file
  LlmEndpointConfig endpoint;  // http
  std::string doc_texts_path;  // http: JSONL of {"doc_id","text"}
};

struct PipelineConfig {
  std::string embeddings_path;
  std::string query_path;
  std::string query_text = "semantic predicate";
  OraclePipelineConfig oracle;
  std::string output_dir = "run";
  double train_fraction = 0.10;
  double calibration_fraction = 0.05;
  double accuracy_target = 0.90;
  int n_bins = 64;
  int smoothing_window = 3;
  int score_threads = 0;
  std::uint64_t seed = 0;
  TrainingConfig training;

  void validate() const;
  static PipelineConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
  nlohmann::ordered_json to_json() const;
};

struct StageTimings {
  double label_train_s = 0.0;
  double train_s = 0.0;
  double score_s = 0.0;
  double calibrate_s = 0.0;
  double select_s = 0.0;
  double cascade_s = 0.0;
  double total_s = 0.0;
};

struct RunReport {
  std::size_t n_docs = 0;
  std::size_t n_train = 0;
  std::size_t n_online = 0;
  std::size_t n_calibration = 0;
  std::size_t n_unfiltered = 0;
  std::size_t oracle_call_count = 0;    // distinct documents labeled in the whole run
  std::size_t oracle_calls_online = 0;  // calibration plus freshly labeled unfiltered docs
  double data_reduction = 0.0;          // 1 - oracle_calls_online / n_online
  ThresholdPair thresholds;
  double unfiltered_rate = 0.0;
  double estimated_accuracy = 1.0;
  double realized_accuracy = -1.0;  // < 0 when ground truth is unavailable
  ClassPriors priors{};
  double accuracy_target = 0.0;
  std::uint64_t seed = 0;
  bool fallback_oracle_only = false;
  std::string fallback_reason;
  StageTimings timings;  // written to timings.json, never to report.json

  nlohmann::ordered_json to_json() const;
};

// Full online phase: split + label the training sample, train the proxy,
// score the remaining documents, calibrate from a stratified sample, select
// thresholds, execute the cascade, and write the run directory.
RunReport run_pipeline(const PipelineConfig& config);

struct EvalMetrics {
  double realized_accuracy = 0.0;
  double precision_positive = 0.0;
  double recall_positive = 0.0;
  double precision_negative = 0.0;
  double recall_negative = 0.0;
  double data_reduction = 0.0;  // 1 - oracle-provenance fraction
  std::size_t oracle_calls = 0;
  std::size_t n_docs = 0;

  nlohmann::ordered_json to_json() const;
};

EvalMetrics eval_report(const CascadeResult& result, const LabelSet& truth);

struct SweepRow {
  double alpha = 0.0;
  ThresholdPair thresholds;
  double unfiltered_rate = 0.0;
  double estimated_accuracy = 0.0;
  double realized_accuracy = -1.0;
  double data_reduction = 0.0;
  std::size_t oracle_calls_online = 0;
};

// Shares one trained proxy and calibration across all accuracy targets and
// writes tradeoff.csv into the output directory.
std::vector<SweepRow> run_sweep(const PipelineConfig& config, std::span<const double> alphas);

// Figure-style artifacts for one finished run.
void write_calibration_csv(const std::filesystem::path& path, const Distribution& pdf_p, const Distribution& pdf_n);
void write_histogram_csv(const std::filesystem::path& path, const BinGrid& grid, const ScoreSet& scores,
                         const CascadeResult& decisions, const LabelSet* truth);
void write_jsd_json(const std::filesystem::path& path, const Distribution& pdf_p, const Distribution& pdf_n,
                    const ScoreSet& scores, const LabelSet* truth);

// Synthetic workload emission in the standard on-disk formats.
void write_synth_workload(const SynthSpec& spec, const std::filesystem::path& out_dir);

}  // namespace sempred
