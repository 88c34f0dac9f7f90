#include "sempred/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <memory>
#include <optional>
#include <unordered_map>
#include <unordered_set>

namespace sempred {

namespace {

using ordered_json = nlohmann::ordered_json;

double now_s() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

std::string resolve(const std::filesystem::path& base, const std::string& p) {
  if (p.empty()) return p;
  std::filesystem::path pp(p);
  if (pp.is_absolute()) return p;
  return (base / pp).lexically_normal().string();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::io, "cannot write: " + path.string());
  out << text;
  if (!out) fail(ErrorCode::io, "write failure: " + path.string());
}

TrainingConfig training_from_json(const nlohmann::json& j) {
  TrainingConfig t;
  if (j.contains("temperature")) t.temperature = j["temperature"].get<double>();
  if (j.contains("lambda")) t.lambda = j["lambda"].get<double>();
  if (j.contains("learning_rate")) t.learning_rate = j["learning_rate"].get<double>();
  if (j.contains("epochs_phase1")) t.epochs_phase1 = j["epochs_phase1"].get<int>();
  if (j.contains("epochs_phase2")) t.epochs_phase2 = j["epochs_phase2"].get<int>();
  if (j.contains("batch_size")) t.batch_size = j["batch_size"].get<int>();
  if (j.contains("seed")) t.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("rebalance_min_ratio")) t.rebalance_min_ratio = j["rebalance_min_ratio"].get<double>();
  if (j.contains("noise_sigma_scale")) t.noise_sigma_scale = j["noise_sigma_scale"].get<double>();
  if (j.contains("hidden1")) t.hidden1 = j["hidden1"].get<int>();
  if (j.contains("hidden2")) t.hidden2 = j["hidden2"].get<int>();
  if (j.contains("latent_dim")) t.latent_dim = j["latent_dim"].get<int>();
  if (j.contains("projector_hidden")) t.projector_hidden = j["projector_hidden"].get<int>();
  if (j.contains("projector_dim")) t.projector_dim = j["projector_dim"].get<int>();
  if (j.contains("bellwether_prose")) t.bellwether_prose = j["bellwether_prose"].get<bool>();
  return t;
}

ordered_json training_to_json(const TrainingConfig& t) {
  ordered_json j;
  j["temperature"] = t.temperature;
  j["lambda"] = t.lambda;
  j["learning_rate"] = t.learning_rate;
  j["epochs_phase1"] = t.epochs_phase1;
  j["epochs_phase2"] = t.epochs_phase2;
  j["batch_size"] = t.batch_size;
  j["rebalance_min_ratio"] = t.rebalance_min_ratio;
  j["noise_sigma_scale"] = t.noise_sigma_scale;
  j["hidden1"] = t.hidden1;
  j["hidden2"] = t.hidden2;
  j["latent_dim"] = t.latent_dim;
  j["projector_hidden"] = t.projector_hidden;
  j["projector_dim"] = t.projector_dim;
  j["bellwether_prose"] = t.bellwether_prose;
  return j;
}

std::unordered_map<std::string, std::string> load_doc_texts(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io, "cannot open doc text file: " + path.string());
  std::unordered_map<std::string, std::string> texts;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    ordered_json j = ordered_json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("doc_id") || !j.contains("text"))
      fail(ErrorCode::format, path.string() + ":" + std::to_string(lineno) + ": expected {\"doc_id\",\"text\"}");
    texts[j["doc_id"].get<std::string>()] = j["text"].get<std::string>();
  }
  return texts;
}

std::unique_ptr<Oracle> make_oracle(const OraclePipelineConfig& cfg, LabelSet* truth_out, bool* have_truth) {
  if (cfg.mode == OraclePipelineConfig::Mode::mock) {
    if (cfg.labels_path.empty()) fail(ErrorCode::invalid_argument, "mock oracle requires a labels file");
    LabelSet truth = LabelSet::load_jsonl(cfg.labels_path);
    if (truth_out) *truth_out = truth;
    if (have_truth) *have_truth = true;
    return std::make_unique<MockOracle>(std::move(truth));
  }
  if (have_truth) *have_truth = false;
  if (cfg.doc_texts_path.empty())
    fail(ErrorCode::invalid_argument, "http oracle requires a doc_texts file with document contents");
  auto texts = std::make_shared<std::unordered_map<std::string, std::string>>(load_doc_texts(cfg.doc_texts_path));
  DocTextProvider provider = [texts](const std::string& doc_id) -> std::string {
    auto it = texts->find(doc_id);
    if (it == texts->end()) fail(ErrorCode::invalid_argument, "no document text for doc_id: " + doc_id);
    return it->second;
  };
  return std::make_unique<HttpLlmOracle>(cfg.endpoint, std::move(provider));
}

LabelSet labels_from_batch(const std::vector<std::string>& ids, const std::vector<std::uint8_t>& values) {
  LabelSet out;
  for (std::size_t i = 0; i < ids.size(); ++i) out.set(ids[i], values[i] != 0);
  return out;
}

double realized_accuracy_or_negative(const CascadeResult& result, const LabelSet& truth) {
  std::size_t correct = 0;
  for (std::size_t i = 0; i < result.ids.size(); ++i) {
    if (!truth.contains(result.ids[i])) return -1.0;
    correct += (result.labels[i] != 0) == truth.at(result.ids[i]);
  }
  return result.ids.empty() ? 1.0 : static_cast<double>(correct) / static_cast<double>(result.ids.size());
}

// Everything in the online phase that does not depend on the accuracy
// target. run_pipeline and run_sweep share it.
struct Session {
  PipelineConfig cfg;
  std::unique_ptr<Oracle> oracle;
  LabelSet truth;
  bool have_truth = false;
  Workload workload;
  std::vector<std::string> train_ids;
  std::vector<std::string> online_ids;
  LabelSet train_labels;
  bool trained = false;
  std::string train_fallback;
  EncoderParams params;
  Workload online;
  ScoreSet scores;
  BinGrid grid;
  std::vector<std::string> calibration_ids;
  std::optional<CalibrationResult> calibration;
  std::string calibration_fallback;
  StageTimings timings;
};

Session prepare_session(const PipelineConfig& config) {
  config.validate();
  Session s;
  s.cfg = config;

  s.oracle = make_oracle(config.oracle, &s.truth, &s.have_truth);

  EmbeddingStore store = load_embeddings(config.embeddings_path);
  s.workload.query_text = config.query_text;
  s.workload.query_embedding = load_query_embedding(config.query_path);
  s.workload.collection = std::move(store);
  s.workload.accuracy_target = config.accuracy_target;
  s.workload.validate();

  std::tie(s.train_ids, s.online_ids) = split_sample(s.workload.collection, config.train_fraction, config.seed);

  double t0 = now_s();
  s.train_labels = labels_from_batch(s.train_ids, s.oracle->label_batch(config.query_text, s.train_ids));
  s.timings.label_train_s = now_s() - t0;

  TrainingConfig tcfg = config.training;
  tcfg.seed = derive_seed(config.seed, 71);
  t0 = now_s();
  try {
    s.params = train_proxy(s.workload, s.train_labels, tcfg);
    s.trained = true;
  } catch (const Error& e) {
    if (e.code() != ErrorCode::degenerate) throw;
    s.train_fallback = e.what();
  }
  s.timings.train_s = now_s() - t0;
  if (!s.trained) return s;

  EmbeddingStore online_store(s.workload.collection.dim());
  for (const auto& id : s.online_ids) {
    auto e = s.workload.collection.embedding_of(id);
    online_store.add(id, {e.begin(), e.end()});
  }
  s.online.query_text = config.query_text;
  s.online.query_embedding = s.workload.query_embedding;
  s.online.collection = std::move(online_store);
  s.online.accuracy_target = config.accuracy_target;

  t0 = now_s();
  s.scores = score_all(s.params, s.online, config.score_threads);
  s.timings.score_s = now_s() - t0;

  s.grid = discretize(s.scores, config.n_bins).first;

  t0 = now_s();
  s.calibration_ids = stratified_sample(s.scores, s.grid, config.calibration_fraction, derive_seed(config.seed, 72));
  LabelSet calib_labels =
      labels_from_batch(s.calibration_ids, s.oracle->label_batch(config.query_text, s.calibration_ids));
  try {
    s.calibration = calibrate(s.scores, calib_labels, s.grid, derive_seed(config.seed, 73), config.smoothing_window);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::degenerate) throw;
    s.calibration_fallback = e.what();
  }
  s.timings.calibrate_s = now_s() - t0;
  return s;
}

// All online documents straight to the oracle (single-class training sample).
CascadeResult oracle_only_cascade(Session& s) {
  CascadeResult result;
  result.thresholds = {0.0, 1.0};
  result.unfiltered_rate = 1.0;
  result.estimated_accuracy = 1.0;
  result.ids = s.online_ids;
  result.labels = s.oracle->label_batch(s.cfg.query_text, s.online_ids);
  result.provenance.assign(s.online_ids.size(), Provenance::oracle);
  result.oracle_calls = s.online_ids.size();
  return result;
}

std::size_t distinct_online_oracle_docs(const Session& s, const CascadeResult& result) {
  std::unordered_set<std::string> docs(s.calibration_ids.begin(), s.calibration_ids.end());
  for (std::size_t i = 0; i < result.ids.size(); ++i)
    if (result.provenance[i] == Provenance::oracle) docs.insert(result.ids[i]);
  return docs.size();
}

ordered_json timings_to_json(const StageTimings& t) {
  ordered_json j;
  j["label_train_s"] = t.label_train_s;
  j["train_s"] = t.train_s;
  j["score_s"] = t.score_s;
  j["calibrate_s"] = t.calibrate_s;
  j["select_s"] = t.select_s;
  j["cascade_s"] = t.cascade_s;
  j["total_s"] = t.total_s;
  return j;
}

}  // namespace

void PipelineConfig::validate() const {
  if (embeddings_path.empty()) fail(ErrorCode::invalid_argument, "config: embeddings path is required");
  if (query_path.empty()) fail(ErrorCode::invalid_argument, "config: query path is required");
  if (output_dir.empty()) fail(ErrorCode::invalid_argument, "config: output_dir is required");
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    fail(ErrorCode::invalid_argument, "config: train_fraction must be in (0, 1)");
  if (!(calibration_fraction > 0.0 && calibration_fraction < 1.0))
    fail(ErrorCode::invalid_argument, "config: calibration_fraction must be in (0, 1)");
  if (!(accuracy_target > 0.0 && accuracy_target <= 1.0))
    fail(ErrorCode::invalid_argument, "config: accuracy_target must be in (0, 1]");
  if (n_bins < 2) fail(ErrorCode::invalid_argument, "config: n_bins must be >= 2");
  if (smoothing_window < 1 || smoothing_window % 2 == 0)
    fail(ErrorCode::invalid_argument, "config: smoothing_window must be odd");
  training.validate();
}

PipelineConfig PipelineConfig::from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  PipelineConfig c;
  if (j.contains("embeddings")) c.embeddings_path = resolve(base_dir, j["embeddings"].get<std::string>());
  if (j.contains("query")) c.query_path = resolve(base_dir, j["query"].get<std::string>());
  if (j.contains("query_text")) c.query_text = j["query_text"].get<std::string>();
  if (j.contains("output_dir")) c.output_dir = resolve(base_dir, j["output_dir"].get<std::string>());
  if (j.contains("train_fraction")) c.train_fraction = j["train_fraction"].get<double>();
  if (j.contains("calibration_fraction")) c.calibration_fraction = j["calibration_fraction"].get<double>();
  if (j.contains("accuracy_target")) c.accuracy_target = j["accuracy_target"].get<double>();
  if (j.contains("n_bins")) c.n_bins = j["n_bins"].get<int>();
  if (j.contains("smoothing_window")) c.smoothing_window = j["smoothing_window"].get<int>();
  if (j.contains("score_threads")) c.score_threads = j["score_threads"].get<int>();
  if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("training")) c.training = training_from_json(j["training"]);

  if (j.contains("oracle")) {
    const auto& o = j["oracle"];
    const std::string mode = o.value("mode", "mock");
    if (mode == "mock") {
      c.oracle.mode = OraclePipelineConfig::Mode::mock;
      if (o.contains("labels")) c.oracle.labels_path = resolve(base_dir, o["labels"].get<std::string>());
    } else if (mode == "http") {
      c.oracle.mode = OraclePipelineConfig::Mode::http;
      if (o.contains("base_url")) c.oracle.endpoint.base_url = o["base_url"].get<std::string>();
      if (o.contains("path")) c.oracle.endpoint.path = o["path"].get<std::string>();
      if (o.contains("api_key_env")) c.oracle.endpoint.api_key_env = o["api_key_env"].get<std::string>();
      if (o.contains("model")) c.oracle.endpoint.model = o["model"].get<std::string>();
      if (o.contains("system_prompt")) c.oracle.endpoint.system_prompt = o["system_prompt"].get<std::string>();
      if (o.contains("prompt_template")) c.oracle.endpoint.prompt_template = o["prompt_template"].get<std::string>();
      if (o.contains("tokens_per_minute"))
        c.oracle.endpoint.rate.tokens_per_minute = o["tokens_per_minute"].get<std::uint64_t>();
      if (o.contains("max_concurrent")) c.oracle.endpoint.rate.max_concurrent = o["max_concurrent"].get<int>();
      if (o.contains("max_attempts")) c.oracle.endpoint.rate.max_attempts = o["max_attempts"].get<int>();
      if (o.contains("backoff_ms")) c.oracle.endpoint.rate.backoff_base_ms = o["backoff_ms"].get<std::uint64_t>();
      if (o.contains("doc_texts")) c.oracle.doc_texts_path = resolve(base_dir, o["doc_texts"].get<std::string>());
    } else {
      fail(ErrorCode::invalid_argument, "config: oracle.mode must be \"mock\" or \"http\"");
    }
  }
  return c;
}

nlohmann::ordered_json PipelineConfig::to_json() const {
  ordered_json j;
  j["embeddings"] = embeddings_path;
  j["query"] = query_path;
  j["query_text"] = query_text;
  ordered_json o;
  if (oracle.mode == OraclePipelineConfig::Mode::mock) {
    o["mode"] = "mock";
    o["labels"] = oracle.labels_path;
  } else {
    o["mode"] = "http";
    o["base_url"] = oracle.endpoint.base_url;
    o["path"] = oracle.endpoint.path;
    o["api_key_env"] = oracle.endpoint.api_key_env;
    o["model"] = oracle.endpoint.model;
    o["system_prompt"] = oracle.endpoint.system_prompt;
    o["prompt_template"] = oracle.endpoint.prompt_template;
    o["tokens_per_minute"] = oracle.endpoint.rate.tokens_per_minute;
    o["max_concurrent"] = oracle.endpoint.rate.max_concurrent;
    o["max_attempts"] = oracle.endpoint.rate.max_attempts;
    o["backoff_ms"] = oracle.endpoint.rate.backoff_base_ms;
    o["doc_texts"] = oracle.doc_texts_path;
  }
  j["oracle"] = o;
  j["output_dir"] = output_dir;
  j["train_fraction"] = train_fraction;
  j["calibration_fraction"] = calibration_fraction;
  j["accuracy_target"] = accuracy_target;
  j["n_bins"] = n_bins;
  j["smoothing_window"] = smoothing_window;
  j["score_threads"] = score_threads;
  j["seed"] = seed;
  j["training"] = training_to_json(training);
  return j;
}

nlohmann::ordered_json RunReport::to_json() const {
  ordered_json j;
  j["n_docs"] = n_docs;
  j["n_train"] = n_train;
  j["n_online"] = n_online;
  j["n_calibration"] = n_calibration;
  j["n_unfiltered"] = n_unfiltered;
  j["oracle_call_count"] = oracle_call_count;
  j["oracle_calls_online"] = oracle_calls_online;
  j["data_reduction"] = data_reduction;
  j["thresholds"] = ordered_json{{"lb", thresholds.lb}, {"rb", thresholds.rb}};
  j["unfiltered_rate"] = unfiltered_rate;
  j["estimated_accuracy"] = estimated_accuracy;
  if (realized_accuracy >= 0.0)
    j["realized_accuracy"] = realized_accuracy;
  else
    j["realized_accuracy"] = nullptr;
  j["priors"] = ordered_json{{"positive", priors.positive}, {"negative", priors.negative}};
  j["accuracy_target"] = accuracy_target;
  j["seed"] = seed;
  j["fallback_oracle_only"] = fallback_oracle_only;
  j["fallback_reason"] = fallback_reason;
  return j;
}

void write_calibration_csv(const std::filesystem::path& path, const Distribution& pdf_p, const Distribution& pdf_n) {
  if (!(pdf_p.grid() == pdf_n.grid())) fail(ErrorCode::invalid_argument, "calibration csv: grid mismatch");
  std::string text = "edge,pdf_p,pdf_n\n";
  const auto& edges = pdf_p.grid().edges;
  for (std::size_t i = 0; i < edges.size(); ++i) {
    text += format_double(edges[i]);
    text += ',';
    text += format_double(pdf_p.density()[i]);
    text += ',';
    text += format_double(pdf_n.density()[i]);
    text += '\n';
  }
  write_text(path, text);
}

void write_histogram_csv(const std::filesystem::path& path, const BinGrid& grid, const ScoreSet& scores,
                         const CascadeResult& decisions, const LabelSet* truth) {
  std::vector<std::size_t> dec_pos(static_cast<std::size_t>(grid.n_bins), 0);
  std::vector<std::size_t> dec_neg(static_cast<std::size_t>(grid.n_bins), 0);
  std::vector<std::size_t> tru_pos(static_cast<std::size_t>(grid.n_bins), 0);
  std::vector<std::size_t> tru_neg(static_cast<std::size_t>(grid.n_bins), 0);
  bool have_truth = truth != nullptr;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const auto b = static_cast<std::size_t>(grid.bin_of(scores.values()[i]));
    (decisions.labels[i] != 0 ? dec_pos : dec_neg)[b]++;
    if (have_truth && truth->contains(scores.ids()[i]))
      (truth->at(scores.ids()[i]) ? tru_pos : tru_neg)[b]++;
  }
  std::string text = have_truth ? "bin_lo,bin_hi,decided_pos,decided_neg,truth_pos,truth_neg\n"
                                : "bin_lo,bin_hi,decided_pos,decided_neg\n";
  for (int b = 0; b < grid.n_bins; ++b) {
    text += format_double(grid.edges[static_cast<std::size_t>(b)]);
    text += ',';
    text += format_double(grid.edges[static_cast<std::size_t>(b) + 1]);
    text += ',';
    text += std::to_string(dec_pos[static_cast<std::size_t>(b)]);
    text += ',';
    text += std::to_string(dec_neg[static_cast<std::size_t>(b)]);
    if (have_truth) {
      text += ',';
      text += std::to_string(tru_pos[static_cast<std::size_t>(b)]);
      text += ',';
      text += std::to_string(tru_neg[static_cast<std::size_t>(b)]);
    }
    text += '\n';
  }
  write_text(path, text);
}

void write_jsd_json(const std::filesystem::path& path, const Distribution& pdf_p, const Distribution& pdf_n,
                    const ScoreSet& scores, const LabelSet* truth) {
  ordered_json j;
  j["between_classes"] = jsd(pdf_p, pdf_n);
  j["positive_vs_truth"] = nullptr;
  j["negative_vs_truth"] = nullptr;
  if (truth) {
    const auto& grid = pdf_p.grid();
    std::vector<double> mass_p(static_cast<std::size_t>(grid.n_bins), 0.0);
    std::vector<double> mass_n(static_cast<std::size_t>(grid.n_bins), 0.0);
    double np = 0.0, nn = 0.0;
    bool complete = true;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (!truth->contains(scores.ids()[i])) {
        complete = false;
        break;
      }
      const auto b = static_cast<std::size_t>(grid.bin_of(scores.values()[i]));
      if (truth->at(scores.ids()[i])) {
        mass_p[b] += 1.0;
        np += 1.0;
      } else {
        mass_n[b] += 1.0;
        nn += 1.0;
      }
    }
    if (complete && np > 0.0) j["positive_vs_truth"] = jsd_from_masses(pdf_p.bin_masses(), mass_p);
    if (complete && nn > 0.0) j["negative_vs_truth"] = jsd_from_masses(pdf_n.bin_masses(), mass_n);
  }
  write_text(path, j.dump(2) + "\n");
}

EvalMetrics eval_report(const CascadeResult& result, const LabelSet& truth) {
  EvalMetrics m;
  m.n_docs = result.ids.size();
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  for (std::size_t i = 0; i < result.ids.size(); ++i) {
    if (!truth.contains(result.ids[i]))
      fail(ErrorCode::invalid_argument, "eval: no ground-truth label for doc_id: " + result.ids[i]);
    const bool predicted = result.labels[i] != 0;
    const bool actual = truth.at(result.ids[i]);
    if (predicted && actual)
      ++tp;
    else if (predicted && !actual)
      ++fp;
    else if (!predicted && !actual)
      ++tn;
    else
      ++fn;
  }
  const auto total = static_cast<double>(result.ids.size());
  m.realized_accuracy = total == 0.0 ? 1.0 : static_cast<double>(tp + tn) / total;
  // Vacuous denominators count as perfect.
  m.precision_positive = (tp + fp) == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
  m.recall_positive = (tp + fn) == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
  m.precision_negative = (tn + fn) == 0 ? 1.0 : static_cast<double>(tn) / static_cast<double>(tn + fn);
  m.recall_negative = (tn + fp) == 0 ? 1.0 : static_cast<double>(tn) / static_cast<double>(tn + fp);
  m.oracle_calls = result.count(Provenance::oracle);
  m.data_reduction = total == 0.0 ? 0.0 : 1.0 - static_cast<double>(m.oracle_calls) / total;
  return m;
}

nlohmann::ordered_json EvalMetrics::to_json() const {
  ordered_json j;
  j["n_docs"] = n_docs;
  j["realized_accuracy"] = realized_accuracy;
  j["precision_positive"] = precision_positive;
  j["recall_positive"] = recall_positive;
  j["precision_negative"] = precision_negative;
  j["recall_negative"] = recall_negative;
  j["oracle_calls"] = oracle_calls;
  j["data_reduction"] = data_reduction;
  return j;
}

RunReport run_pipeline(const PipelineConfig& config) {
  const double t_begin = now_s();
  Session s = prepare_session(config);
  const std::filesystem::path out_dir(config.output_dir);
  std::filesystem::create_directories(out_dir);

  RunReport report;
  report.n_docs = s.workload.collection.size();
  report.n_train = s.train_ids.size();
  report.n_online = s.online_ids.size();
  report.accuracy_target = config.accuracy_target;
  report.seed = config.seed;

  s.train_labels.save_jsonl(out_dir / "train_labels.jsonl");

  CascadeResult result;
  if (!s.trained) {
    report.fallback_oracle_only = true;
    report.fallback_reason = s.train_fallback;
    result = oracle_only_cascade(s);
    report.thresholds = result.thresholds;
    report.unfiltered_rate = result.unfiltered_rate;
    report.estimated_accuracy = 1.0;
    report.n_unfiltered = result.oracle_calls;
  } else {
    s.params.save(out_dir / "params.json");
    s.scores.save_csv(out_dir / "scores.csv");

    ThresholdPair thresholds{0.0, 1.0};
    double estimated = 1.0;
    if (s.calibration) {
      const double t0 = now_s();
      thresholds = select_thresholds(s.calibration->pdf_p, s.calibration->pdf_n, s.calibration->priors, s.grid,
                                     config.accuracy_target);
      estimated = estimate_accuracy(s.calibration->pdf_p, s.calibration->pdf_n, s.calibration->priors, thresholds);
      s.timings.select_s = now_s() - t0;
      report.priors = s.calibration->priors;
      write_calibration_csv(out_dir / "calibration.csv", s.calibration->pdf_p, s.calibration->pdf_n);
    } else {
      report.fallback_reason = s.calibration_fallback;
    }

    LabelSet calib_labels;
    for (const auto& id : s.calibration_ids) calib_labels.set(id, s.oracle->label(config.query_text, id));
    calib_labels.save_jsonl(out_dir / "calibration_labels.jsonl");
    report.n_calibration = s.calibration_ids.size();

    const double t0 = now_s();
    result = execute_cascade(s.scores, thresholds, *s.oracle, s.online);
    s.timings.cascade_s = now_s() - t0;
    result.estimated_accuracy = estimated;

    report.thresholds = thresholds;
    report.estimated_accuracy = estimated;
    report.unfiltered_rate = result.unfiltered_rate;
    report.n_unfiltered = result.count(Provenance::oracle);

    write_histogram_csv(out_dir / "histogram.csv", s.grid, s.scores, result, s.have_truth ? &s.truth : nullptr);
    if (s.calibration)
      write_jsd_json(out_dir / "jsd.json", s.calibration->pdf_p, s.calibration->pdf_n, s.scores,
                     s.have_truth ? &s.truth : nullptr);
  }

  result.save_jsonl(out_dir / "decisions.jsonl");

  report.oracle_call_count = s.oracle->invocation_count();
  report.oracle_calls_online = distinct_online_oracle_docs(s, result);
  report.data_reduction =
      report.n_online == 0
          ? 0.0
          : 1.0 - static_cast<double>(report.oracle_calls_online) / static_cast<double>(report.n_online);
  if (s.have_truth) report.realized_accuracy = realized_accuracy_or_negative(result, s.truth);

  s.timings.total_s = now_s() - t_begin;
  report.timings = s.timings;

  write_text(out_dir / "report.json", report.to_json().dump(2) + "\n");
  write_text(out_dir / "timings.json", timings_to_json(report.timings).dump(2) + "\n");
  write_text(out_dir / "config.json", config.to_json().dump(2) + "\n");
  return report;
}

std::vector<SweepRow> run_sweep(const PipelineConfig& config, std::span<const double> alphas) {
  if (alphas.empty()) fail(ErrorCode::invalid_argument, "sweep: need at least one accuracy target");
  for (double a : alphas)
    if (!(a > 0.0 && a <= 1.0)) fail(ErrorCode::invalid_argument, "sweep: accuracy targets must be in (0, 1]");

  Session s = prepare_session(config);
  const std::filesystem::path out_dir(config.output_dir);
  std::filesystem::create_directories(out_dir);

  std::vector<SweepRow> rows;
  for (double alpha : alphas) {
    SweepRow row;
    row.alpha = alpha;
    CascadeResult result;
    if (!s.trained) {
      result = oracle_only_cascade(s);
      row.thresholds = result.thresholds;
      row.estimated_accuracy = 1.0;
    } else {
      ThresholdPair thresholds{0.0, 1.0};
      double estimated = 1.0;
      if (s.calibration) {
        thresholds =
            select_thresholds(s.calibration->pdf_p, s.calibration->pdf_n, s.calibration->priors, s.grid, alpha);
        estimated = estimate_accuracy(s.calibration->pdf_p, s.calibration->pdf_n, s.calibration->priors, thresholds);
      }
      result = execute_cascade(s.scores, thresholds, *s.oracle, s.online);
      row.thresholds = thresholds;
      row.estimated_accuracy = estimated;
    }
    row.unfiltered_rate = result.unfiltered_rate;
    row.oracle_calls_online = distinct_online_oracle_docs(s, result);
    row.data_reduction = s.online_ids.empty()
                             ? 0.0
                             : 1.0 - static_cast<double>(row.oracle_calls_online) /
                                         static_cast<double>(s.online_ids.size());
    if (s.have_truth) row.realized_accuracy = realized_accuracy_or_negative(result, s.truth);
    rows.push_back(row);
  }

  std::string text = "alpha,lb,rb,unfiltered_rate,estimated_accuracy,realized_accuracy,data_reduction,oracle_calls_online\n";
  for (const auto& r : rows) {
    text += format_double(r.alpha);
    text += ',';
    text += format_double(r.thresholds.lb);
    text += ',';
    text += format_double(r.thresholds.rb);
    text += ',';
    text += format_double(r.unfiltered_rate);
    text += ',';
    text += format_double(r.estimated_accuracy);
    text += ',';
    text += r.realized_accuracy >= 0.0 ? format_double(r.realized_accuracy) : std::string("");
    text += ',';
    text += format_double(r.data_reduction);
    text += ',';
    text += std::to_string(r.oracle_calls_online);
    text += '\n';
  }
  write_text(out_dir / "tradeoff.csv", text);
  return rows;
}

void write_synth_workload(const SynthSpec& spec, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  auto [workload, labels] = generate(spec);

  save_embeddings(workload.collection, out_dir / "embeddings.json");
  EmbeddingStore query_store(workload.collection.dim());
  query_store.add("query", workload.query_embedding);
  save_embeddings(query_store, out_dir / "query.json");
  labels.save_jsonl(out_dir / "labels.jsonl");

  ordered_json w;
  w["query_text"] = workload.query_text;
  w["collection"] = "embeddings.json";
  w["query"] = "query.json";
  w["labels"] = "labels.jsonl";
  w["accuracy_target"] = workload.accuracy_target;
  w["n_docs"] = spec.n_docs;
  w["dim"] = spec.dim;
  w["positive_fraction"] = spec.positive_fraction;
  w["separation"] = spec.separation;
  w["noise_sigma"] = spec.noise_sigma;
  w["seed"] = spec.seed;
  write_text(out_dir / "workload.json", w.dump(2) + "\n");

  ordered_json cfg;
  cfg["embeddings"] = "embeddings.json";
  cfg["query"] = "query.json";
  cfg["query_text"] = workload.query_text;
  cfg["oracle"] = ordered_json{{"mode", "mock"}, {"labels", "labels.jsonl"}};
  cfg["output_dir"] = "run";
  cfg["accuracy_target"] = workload.accuracy_target;
  cfg["seed"] = spec.seed;
  write_text(out_dir / "config.json", cfg.dump(2) + "\n");
}

}  // namespace sempred
