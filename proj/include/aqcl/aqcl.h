#ifndef AQCL_AQCL_H
#define AQCL_AQCL_H

/* C interface to the aqcl library. Every function returns an aqcl_status;
 * on failure a message is available from aqcl_last_error() on the calling
 * thread until the next call. Strings returned through char** outputs are
 * owned by the caller and released with aqcl_string_free(). JSON arguments
 * may be NULL where noted, meaning "empty object". */

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define AQCL_API __declspec(dllexport)
#else
#define AQCL_API __attribute__((visibility("default")))
#endif

typedef enum aqcl_status {
  AQCL_OK = 0,
  AQCL_INVALID_ARGUMENT = 1,
  AQCL_CONFIG = 2,
  AQCL_IO = 3,
  AQCL_PARSE = 4,
  AQCL_SHAPE = 5,
  AQCL_INDEX = 6,
  AQCL_DIVERGED = 7,
  AQCL_UNDEFINED = 8,
  AQCL_INTERNAL = 9
} aqcl_status;

typedef struct aqcl_dataset aqcl_dataset;
typedef struct aqcl_model aqcl_model;

AQCL_API const char* aqcl_version(void);
AQCL_API const char* aqcl_status_name(aqcl_status status);
AQCL_API const char* aqcl_last_error(void);
AQCL_API void aqcl_string_free(char* s);

/* Warnings (e.g. a contrastive batch without negatives) go to stderr unless a
 * callback is installed. Pass NULL to restore the default. */
typedef void (*aqcl_warning_fn)(const char* message, void* user_data);
AQCL_API void aqcl_set_warning_callback(aqcl_warning_fn fn, void* user_data);

/* Layers default < file_json < overrides_json and returns the fully
 * materialised configuration. Either input may be NULL. */
AQCL_API aqcl_status aqcl_config_resolve(const char* file_json, const char* overrides_json,
                                         char** resolved_json);

/* ---- data ---------------------------------------------------------------- */

/* Synthetic dataset from the "generator" section and top-level "seed". */
AQCL_API aqcl_status aqcl_dataset_generate(const char* config_json, aqcl_dataset** out);
/* Reads a delimited file using the "data" section's schema. report_json
 * (optional) receives row counts and the malformed/rejected line lists. */
AQCL_API aqcl_status aqcl_dataset_ingest(const char* path, const char* config_json,
                                         aqcl_dataset** out, char** report_json);
/* Loads data.path when set, otherwise generates. */
AQCL_API aqcl_status aqcl_dataset_load(const char* config_json, aqcl_dataset** out);
AQCL_API aqcl_status aqcl_dataset_write(const aqcl_dataset* ds, const char* path);
AQCL_API aqcl_status aqcl_dataset_size(const aqcl_dataset* ds, size_t* n_samples);
/* Split sizes and activity-bucket thresholds as JSON. */
AQCL_API aqcl_status aqcl_dataset_summary(const aqcl_dataset* ds, const char* config_json,
                                          char** summary_json);
AQCL_API void aqcl_dataset_free(aqcl_dataset* ds);

/* ---- training and evaluation -------------------------------------------- */

/* Trains on the dataset's training split with early stopping on validation.
 * trace_path (optional) receives the line-delimited training trace; it is
 * kept when training diverges. summary_json (optional) receives the epoch
 * records and the best epoch. */
AQCL_API aqcl_status aqcl_train(const aqcl_dataset* ds, const char* config_json,
                                const char* trace_path, aqcl_model** out, char** summary_json);
AQCL_API aqcl_status aqcl_model_save(const aqcl_model* model, const char* path);
AQCL_API aqcl_status aqcl_model_load(const char* path, aqcl_model** out);
/* Resolved configuration stored with the model. */
AQCL_API aqcl_status aqcl_model_config(const aqcl_model* model, char** config_json);
AQCL_API void aqcl_model_free(aqcl_model* model);

/* split is "train", "val" or "test". Activity buckets come from the
 * dataset's training split. */
AQCL_API aqcl_status aqcl_evaluate(const aqcl_model* model, const aqcl_dataset* ds,
                                   const char* split, char** report_json);
/* Same report as a tab-separated table. */
AQCL_API aqcl_status aqcl_report_table(const char* report_json, char** table_tsv);

/* Grid search over the alpha schedule. result_json receives the winner,
 * the per-candidate table and failures; timings_json (optional) the wall
 * time per candidate; table_tsv (optional) one row per candidate. */
AQCL_API aqcl_status aqcl_search_alpha(const aqcl_dataset* ds, const char* config_json,
                                       unsigned parallel, char** result_json,
                                       char** timings_json, char** table_tsv);

/* RelaImpr of target against base for overall and every bucket. */
AQCL_API aqcl_status aqcl_compare(const char* target_report_json, const char* base_report_json,
                                  char** out_json, char** table_tsv);

/* Writes one row per sample of the split: the latent code h followed by the
 * interest id (top-1 codeword of the projected representation, -1 when the
 * model has no codebook). */
AQCL_API aqcl_status aqcl_export_reps(const aqcl_model* model, const aqcl_dataset* ds,
                                      const char* split, const char* path, size_t* rows);

/* ---- scalar helpers ------------------------------------------------------ */

/* AQCL_UNDEFINED when the base AUC is not above 0.5. */
AQCL_API aqcl_status aqcl_rela_impr(double target_auc, double base_auc, double* out);
/* AQCL_UNDEFINED when only one class is present. */
AQCL_API aqcl_status aqcl_auc(const double* scores, const int* labels, size_t n, double* out);
AQCL_API aqcl_status aqcl_alpha(double w1, double w2, double mean_length, double length,
                                double* out);
/* 64-bit FNV-1a of a file's bytes. */
AQCL_API aqcl_status aqcl_file_digest(const char* path, uint64_t* out);
AQCL_API uint64_t aqcl_bytes_digest(const void* data, size_t n);

#ifdef __cplusplus
}
#endif

#endif
