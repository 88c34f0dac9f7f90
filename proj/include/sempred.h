/* Semantic-predicate proxy cascade: C interface to the shared library.
 *
 * Every function returns a status code; sempred_last_error() holds the
 * message for the most recent failure on the calling thread. Handles are
 * opaque and must be released with the matching *_free function.
 */
#ifndef SEMPRED_H
#define SEMPRED_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum sempred_status {
  SEMPRED_OK = 0,
  SEMPRED_ERR_IO = 1,
  SEMPRED_ERR_FORMAT = 2,
  SEMPRED_ERR_INVALID = 3,
  SEMPRED_ERR_DEGENERATE = 4,
  SEMPRED_ERR_ORACLE = 5,
  SEMPRED_ERR_INTERNAL = 6
} sempred_status;

const char* sempred_version(void);
const char* sempred_last_error(void);
void sempred_string_free(char* s);

typedef struct sempred_store sempred_store;
typedef struct sempred_params sempred_params;
typedef struct sempred_scores sempred_scores;

/* -- embedding stores (JSON manifest + f32le payload) -------------------- */
sempred_status sempred_store_load(const char* manifest_path, sempred_store** out);
sempred_status sempred_store_save(const sempred_store* store, const char* manifest_path);
void sempred_store_free(sempred_store* store);
int64_t sempred_store_count(const sempred_store* store);
int32_t sempred_store_dim(const sempred_store* store);
const char* sempred_store_doc_id(const sempred_store* store, int64_t index);
/* Copies one row (dim floats) into out. */
sempred_status sempred_store_embedding(const sempred_store* store, int64_t index, float* out);

/* -- trained encoder parameters ------------------------------------------ */
sempred_status sempred_params_load(const char* manifest_path, sempred_params** out);
sempred_status sempred_params_save(const sempred_params* params, const char* manifest_path);
void sempred_params_free(sempred_params* params);

/* -- decision scores ------------------------------------------------------ */
sempred_status sempred_scores_load(const char* csv_path, sempred_scores** out);
sempred_status sempred_scores_save(const sempred_scores* scores, const char* csv_path);
void sempred_scores_free(sempred_scores* scores);
int64_t sempred_scores_count(const sempred_scores* scores);
sempred_status sempred_scores_get(const sempred_scores* scores, const char* doc_id, double* out);

/* Scores every document in `store` against the single-row query store.
 * n_threads = 0 picks the hardware default. */
sempred_status sempred_score_store(const sempred_params* params, const sempred_store* store,
                                   const sempred_store* query, int n_threads, sempred_scores** out);

/* -- file-driven pipeline stages ------------------------------------------ */

/* spec_json: {"n_docs","dim","positive_fraction","separation","noise_sigma",
 * "seed","accuracy_target","query_text"}; writes embeddings/query/labels/
 * workload/config files into out_dir. */
sempred_status sempred_synth_generate(const char* spec_json, const char* out_dir);

/* training_config_json may be NULL for defaults. */
sempred_status sempred_train(const char* embeddings_manifest, const char* query_manifest,
                             const char* labels_jsonl, const char* query_text,
                             const char* training_config_json, uint64_t seed,
                             const char* params_out_manifest);

sempred_status sempred_score(const char* embeddings_manifest, const char* query_manifest,
                             const char* params_manifest, int n_threads, const char* scores_csv_out);

/* Distribution reconstruction from a labeled sample plus threshold selection
 * at the given accuracy target; writes calibration.csv, priors.json and
 * thresholds.json into out_dir. */
sempred_status sempred_calibrate(const char* scores_csv, const char* labels_jsonl, int n_bins,
                                 int smoothing_window, uint64_t seed, double alpha, const char* out_dir);

/* config_json is the full pipeline configuration document; relative paths
 * resolve against base_dir. On success *report_json_out (optional) receives
 * a malloc'd copy of report.json. */
sempred_status sempred_run(const char* config_json, const char* base_dir, char** report_json_out);

sempred_status sempred_eval(const char* decisions_jsonl, const char* truth_jsonl, const char* report_out);

/* One run per accuracy target over a shared proxy + calibration; writes
 * tradeoff.csv under the configured output_dir. */
sempred_status sempred_sweep(const char* config_json, const char* base_dir, const double* alphas,
                             size_t n_alphas);

#ifdef __cplusplus
}
#endif

#endif /* SEMPRED_H */
