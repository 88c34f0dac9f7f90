#include "sempred.h"

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "json.hpp"
#include "sempred/calibrate.hpp"
#include "sempred/cascade.hpp"
#include "sempred/core.hpp"
#include "sempred/pipeline.hpp"
#include "sempred/proxy.hpp"
#include "sempred/synth.hpp"

struct sempred_store {
  sempred::EmbeddingStore impl;
};
struct sempred_params {
  sempred::EncoderParams impl;
};
struct sempred_scores {
  sempred::ScoreSet impl;
};

namespace {

thread_local std::string g_last_error;

sempred_status status_of(sempred::ErrorCode code) {
  switch (code) {
    case sempred::ErrorCode::io:
      return SEMPRED_ERR_IO;
    case sempred::ErrorCode::format:
      return SEMPRED_ERR_FORMAT;
    case sempred::ErrorCode::invalid_argument:
      return SEMPRED_ERR_INVALID;
    case sempred::ErrorCode::degenerate:
      return SEMPRED_ERR_DEGENERATE;
    case sempred::ErrorCode::oracle:
      return SEMPRED_ERR_ORACLE;
    case sempred::ErrorCode::internal:
      return SEMPRED_ERR_INTERNAL;
  }
  return SEMPRED_ERR_INTERNAL;
}

template <typename Fn>
sempred_status guarded(Fn&& fn) {
  try {
    fn();
    return SEMPRED_OK;
  } catch (const sempred::Error& e) {
    g_last_error = e.what();
    return status_of(e.code());
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return SEMPRED_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return SEMPRED_ERR_INTERNAL;
  }
}

sempred_status invalid(const char* msg) {
  g_last_error = msg;
  return SEMPRED_ERR_INVALID;
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out) std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

nlohmann::json parse_json_text(const char* text, const char* what) {
  nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded()) sempred::fail(sempred::ErrorCode::format, std::string("invalid JSON for ") + what);
  return j;
}

sempred::SynthSpec synth_spec_from_json(const nlohmann::json& j) {
  sempred::SynthSpec spec;
  if (j.contains("n_docs")) spec.n_docs = j["n_docs"].get<std::size_t>();
  if (j.contains("dim")) spec.dim = j["dim"].get<int>();
  if (j.contains("positive_fraction")) spec.positive_fraction = j["positive_fraction"].get<double>();
  if (j.contains("separation")) spec.separation = j["separation"].get<double>();
  if (j.contains("noise_sigma")) spec.noise_sigma = j["noise_sigma"].get<double>();
  if (j.contains("seed")) spec.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("accuracy_target")) spec.accuracy_target = j["accuracy_target"].get<double>();
  if (j.contains("query_text")) spec.query_text = j["query_text"].get<std::string>();
  return spec;
}

}  // namespace

extern "C" {

const char* sempred_version(void) { return "0.1.0"; }

const char* sempred_last_error(void) { return g_last_error.c_str(); }

void sempred_string_free(char* s) { std::free(s); }

sempred_status sempred_store_load(const char* manifest_path, sempred_store** out) {
  if (!manifest_path || !out) return invalid("null argument");
  return guarded([&] {
    auto* handle = new sempred_store{sempred::load_embeddings(manifest_path)};
    *out = handle;
  });
}

sempred_status sempred_store_save(const sempred_store* store, const char* manifest_path) {
  if (!store || !manifest_path) return invalid("null argument");
  return guarded([&] { sempred::save_embeddings(store->impl, manifest_path); });
}

void sempred_store_free(sempred_store* store) { delete store; }

int64_t sempred_store_count(const sempred_store* store) {
  return store ? static_cast<int64_t>(store->impl.size()) : -1;
}

int32_t sempred_store_dim(const sempred_store* store) { return store ? store->impl.dim() : -1; }

const char* sempred_store_doc_id(const sempred_store* store, int64_t index) {
  if (!store || index < 0 || static_cast<std::size_t>(index) >= store->impl.size()) return nullptr;
  return store->impl.id(static_cast<std::size_t>(index)).c_str();
}

sempred_status sempred_store_embedding(const sempred_store* store, int64_t index, float* out) {
  if (!store || !out) return invalid("null argument");
  if (index < 0 || static_cast<std::size_t>(index) >= store->impl.size()) return invalid("index out of range");
  const auto row = store->impl.embedding(static_cast<std::size_t>(index));
  std::memcpy(out, row.data(), row.size() * sizeof(float));
  return SEMPRED_OK;
}

sempred_status sempred_params_load(const char* manifest_path, sempred_params** out) {
  if (!manifest_path || !out) return invalid("null argument");
  return guarded([&] { *out = new sempred_params{sempred::EncoderParams::load(manifest_path)}; });
}

sempred_status sempred_params_save(const sempred_params* params, const char* manifest_path) {
  if (!params || !manifest_path) return invalid("null argument");
  return guarded([&] { params->impl.save(manifest_path); });
}

void sempred_params_free(sempred_params* params) { delete params; }

sempred_status sempred_scores_load(const char* csv_path, sempred_scores** out) {
  if (!csv_path || !out) return invalid("null argument");
  return guarded([&] { *out = new sempred_scores{sempred::ScoreSet::load_csv(csv_path)}; });
}

sempred_status sempred_scores_save(const sempred_scores* scores, const char* csv_path) {
  if (!scores || !csv_path) return invalid("null argument");
  return guarded([&] { scores->impl.save_csv(csv_path); });
}

void sempred_scores_free(sempred_scores* scores) { delete scores; }

int64_t sempred_scores_count(const sempred_scores* scores) {
  return scores ? static_cast<int64_t>(scores->impl.size()) : -1;
}

sempred_status sempred_scores_get(const sempred_scores* scores, const char* doc_id, double* out) {
  if (!scores || !doc_id || !out) return invalid("null argument");
  return guarded([&] { *out = scores->impl.at(doc_id); });
}

sempred_status sempred_score_store(const sempred_params* params, const sempred_store* store,
                                   const sempred_store* query, int n_threads, sempred_scores** out) {
  if (!params || !store || !query || !out) return invalid("null argument");
  return guarded([&] {
    if (query->impl.size() != 1)
      sempred::fail(sempred::ErrorCode::invalid_argument, "query store must contain exactly one row");
    sempred::Workload workload;
    workload.query_text = "";
    auto q = query->impl.embedding(0);
    workload.query_embedding.assign(q.begin(), q.end());
    workload.collection = store->impl;
    workload.accuracy_target = 0.9;
    *out = new sempred_scores{sempred::score_all(params->impl, workload, n_threads)};
  });
}

sempred_status sempred_synth_generate(const char* spec_json, const char* out_dir) {
  if (!spec_json || !out_dir) return invalid("null argument");
  return guarded([&] {
    const auto spec = synth_spec_from_json(parse_json_text(spec_json, "synth spec"));
    sempred::write_synth_workload(spec, out_dir);
  });
}

sempred_status sempred_train(const char* embeddings_manifest, const char* query_manifest,
                             const char* labels_jsonl, const char* query_text,
                             const char* training_config_json, uint64_t seed,
                             const char* params_out_manifest) {
  if (!embeddings_manifest || !query_manifest || !labels_jsonl || !params_out_manifest)
    return invalid("null argument");
  return guarded([&] {
    nlohmann::json cfg_json = nlohmann::json::object();
    if (training_config_json) cfg_json = parse_json_text(training_config_json, "training config");
    nlohmann::json full;
    full["training"] = cfg_json;
    sempred::PipelineConfig pc = sempred::PipelineConfig::from_json(full, ".");
    sempred::TrainingConfig tcfg = pc.training;
    tcfg.seed = seed;

    sempred::Workload workload;
    workload.query_text = query_text ? query_text : "";
    workload.query_embedding = sempred::load_query_embedding(query_manifest);
    workload.collection = sempred::load_embeddings(embeddings_manifest);
    workload.accuracy_target = 0.9;

    const sempred::LabelSet labels = sempred::LabelSet::load_jsonl(labels_jsonl);
    const sempred::EncoderParams params = sempred::train_proxy(workload, labels, tcfg);
    params.save(params_out_manifest);
  });
}

sempred_status sempred_score(const char* embeddings_manifest, const char* query_manifest,
                             const char* params_manifest, int n_threads, const char* scores_csv_out) {
  if (!embeddings_manifest || !query_manifest || !params_manifest || !scores_csv_out)
    return invalid("null argument");
  return guarded([&] {
    sempred::Workload workload;
    workload.query_text = "";
    workload.query_embedding = sempred::load_query_embedding(query_manifest);
    workload.collection = sempred::load_embeddings(embeddings_manifest);
    workload.accuracy_target = 0.9;
    const sempred::EncoderParams params = sempred::EncoderParams::load(params_manifest);
    sempred::score_all(params, workload, n_threads).save_csv(scores_csv_out);
  });
}

sempred_status sempred_calibrate(const char* scores_csv, const char* labels_jsonl, int n_bins,
                                 int smoothing_window, uint64_t seed, double alpha, const char* out_dir) {
  if (!scores_csv || !labels_jsonl || !out_dir) return invalid("null argument");
  return guarded([&] {
    const auto scores = sempred::ScoreSet::load_csv(scores_csv);
    const auto labels = sempred::LabelSet::load_jsonl(labels_jsonl);
    const auto grid = sempred::BinGrid::uniform(n_bins);
    const auto cal = sempred::calibrate(scores, labels, grid, seed, smoothing_window);

    const std::filesystem::path dir(out_dir);
    std::filesystem::create_directories(dir);
    sempred::write_calibration_csv(dir / "calibration.csv", cal.pdf_p, cal.pdf_n);

    nlohmann::ordered_json priors;
    priors["positive"] = cal.priors.positive;
    priors["negative"] = cal.priors.negative;
    priors["sample_size"] = cal.sample.entries.size();
    std::ofstream pout(dir / "priors.json", std::ios::trunc);
    pout << priors.dump(2) << "\n";

    const auto t = sempred::select_thresholds(cal.pdf_p, cal.pdf_n, cal.priors, grid, alpha);
    nlohmann::ordered_json tj;
    tj["alpha"] = alpha;
    tj["lb"] = t.lb;
    tj["rb"] = t.rb;
    tj["estimated_accuracy"] = sempred::estimate_accuracy(cal.pdf_p, cal.pdf_n, cal.priors, t);
    tj["estimated_unfiltered_mass"] = sempred::estimated_unfiltered_mass(cal.pdf_p, cal.pdf_n, cal.priors, t);
    std::ofstream tout(dir / "thresholds.json", std::ios::trunc);
    tout << tj.dump(2) << "\n";
  });
}

sempred_status sempred_run(const char* config_json, const char* base_dir, char** report_json_out) {
  if (!config_json) return invalid("null argument");
  return guarded([&] {
    const auto j = parse_json_text(config_json, "pipeline config");
    const auto cfg = sempred::PipelineConfig::from_json(j, base_dir ? base_dir : ".");
    const sempred::RunReport report = sempred::run_pipeline(cfg);
    if (report_json_out) *report_json_out = dup_string(report.to_json().dump(2) + "\n");
  });
}

sempred_status sempred_eval(const char* decisions_jsonl, const char* truth_jsonl, const char* report_out) {
  if (!decisions_jsonl || !truth_jsonl || !report_out) return invalid("null argument");
  return guarded([&] {
    const auto decisions = sempred::CascadeResult::load_jsonl(decisions_jsonl);
    const auto truth = sempred::LabelSet::load_jsonl(truth_jsonl);
    const auto metrics = sempred::eval_report(decisions, truth);
    std::ofstream out(report_out, std::ios::trunc);
    if (!out) sempred::fail(sempred::ErrorCode::io, std::string("cannot write: ") + report_out);
    out << metrics.to_json().dump(2) << "\n";
  });
}

sempred_status sempred_sweep(const char* config_json, const char* base_dir, const double* alphas,
                             size_t n_alphas) {
  if (!config_json || (!alphas && n_alphas > 0)) return invalid("null argument");
  return guarded([&] {
    const auto j = parse_json_text(config_json, "pipeline config");
    const auto cfg = sempred::PipelineConfig::from_json(j, base_dir ? base_dir : ".");
    sempred::run_sweep(cfg, std::span<const double>(alphas, n_alphas));
  });
}

}  // extern "C"
