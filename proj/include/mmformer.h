/* C interface to the mmformer library. Every function returns an mmf_status;
 * on failure mmf_last_error() describes the problem (thread-local, valid until
 * the next call on the same thread). Handles are opaque and owned by the
 * caller, who releases them with the matching *_free function. Strings
 * returned through char** are released with mmf_string_free. */
#ifndef MMFORMER_H
#define MMFORMER_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define MMF_API __declspec(dllexport)
#else
#define MMF_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum mmf_status {
  MMF_OK = 0,
  MMF_ERR_INVALID_ARGUMENT = 1,
  MMF_ERR_CONFIG = 2,
  MMF_ERR_SHAPE = 3,
  MMF_ERR_FORMAT = 4,
  MMF_ERR_IO = 5,
  MMF_ERR_NUMERIC = 6,
  MMF_ERR_INTERNAL = 7
} mmf_status;

typedef enum mmf_format { MMF_FORMAT_CSV = 0, MMF_FORMAT_MARKDOWN = 1 } mmf_format;

typedef enum mmf_variant {
  MMF_VARIANT_FULL = 0,
  MMF_VARIANT_NO_INTRA = 1,
  MMF_VARIANT_NO_INTER = 2,
  MMF_VARIANT_NO_AUX = 3
} mmf_variant;

typedef struct mmf_experiment mmf_experiment; /* model + training + data settings */
typedef struct mmf_dataset mmf_dataset;       /* synthetic train/val split */
typedef struct mmf_model mmf_model;           /* trained parameters + optimizer state */
typedef struct mmf_table mmf_table;           /* per-subset DSC table */
typedef struct mmf_ablation mmf_ablation;     /* one table per variant */

/* Progress callbacks. `label` names the run (variant key or "train"). */
typedef void (*mmf_epoch_callback)(const char* label, int epoch, double mean_loss, void* user);
typedef void (*mmf_gradcheck_callback)(const char* name, double rel_error, double tolerance, int passed,
                                       void* user);

MMF_API const char* mmf_version(void);
MMF_API const char* mmf_last_error(void);
MMF_API const char* mmf_status_name(mmf_status status);
MMF_API void mmf_string_free(char* s);

/* Experiments. `path` may be NULL for defaults. */
MMF_API mmf_status mmf_experiment_load(const char* path, mmf_experiment** out);
/* Overrides one key (same keys as the config file), re-validating the whole config. */
MMF_API mmf_status mmf_experiment_set(mmf_experiment* exp, const char* key, const char* value);
/* Applies several `key=value` lines at once; the config is validated only
 * after all of them are in place, and left unchanged on error. */
MMF_API mmf_status mmf_experiment_apply(mmf_experiment* exp, const char* overrides);
MMF_API mmf_status mmf_experiment_to_text(const mmf_experiment* exp, char** out);
MMF_API void mmf_experiment_free(mmf_experiment* exp);

/* Datasets. */
MMF_API mmf_status mmf_dataset_generate(const mmf_experiment* exp, mmf_dataset** out);
MMF_API mmf_status mmf_dataset_counts(const mmf_dataset* ds, size_t* n_train, size_t* n_val);
/* Writes <dir>/{train,val}/<index>_{flair,t1c,t1,t2,label}.mmfv. */
MMF_API mmf_status mmf_dataset_save(const mmf_dataset* ds, const char* dir);
MMF_API void mmf_dataset_free(mmf_dataset* ds);

/* Training. `checkpoint_path` may be NULL; otherwise it receives the final
 * state (and periodic states if the config asks for them). */
MMF_API mmf_status mmf_train(const mmf_experiment* exp, const mmf_dataset* ds, mmf_variant variant,
                     const char* checkpoint_path, mmf_epoch_callback cb, void* user, mmf_model** out);
/* `exp` may be NULL; otherwise the checkpoint's model must match it. */
MMF_API mmf_status mmf_model_load(const char* checkpoint_path, const mmf_experiment* exp, mmf_model** out);
MMF_API mmf_status mmf_model_save(const mmf_model* model, const char* checkpoint_path);
MMF_API mmf_status mmf_model_info(const mmf_model* model, int64_t* parameters, int* epochs, double* final_loss);
MMF_API void mmf_model_free(mmf_model* model);

/* Evaluation. `mask_bits` lists subsets (bit 0 FLAIR, 1 T1c, 2 T1, 3 T2);
 * NULL or count 0 sweeps all 15. */
MMF_API mmf_status mmf_evaluate(const mmf_model* model, const mmf_dataset* ds, const uint8_t* mask_bits, size_t count,
                        mmf_table** out);
MMF_API mmf_status mmf_table_rows(const mmf_table* t, size_t* rows);
MMF_API mmf_status mmf_table_row(const mmf_table* t, size_t i, uint8_t* mask_bits, double* et, double* tc, double* wt);
MMF_API mmf_status mmf_table_format(const mmf_table* t, mmf_format format, char** out);
/* Missing-count summary; needs all 15 rows. */
MMF_API mmf_status mmf_table_summary(const mmf_table* t, mmf_format format, char** out);
MMF_API mmf_status mmf_table_parse_csv(const char* text, mmf_table** out);
MMF_API void mmf_table_free(mmf_table* t);

/* Parses a modality list such as "FLAIR,T2" into mask bits. */
MMF_API mmf_status mmf_parse_mask(const char* csv, uint8_t* mask_bits);
MMF_API mmf_status mmf_parse_variant(const char* key, mmf_variant* out);

/* Ablation: trains and sweeps each listed variant (all four when NULL/0). */
MMF_API mmf_status mmf_ablate(const mmf_experiment* exp, const mmf_dataset* ds, const mmf_variant* variants, size_t count,
                      mmf_epoch_callback cb, void* user, mmf_ablation** out);
MMF_API mmf_status mmf_ablation_format(const mmf_ablation* a, mmf_format format, char** out);
MMF_API mmf_status mmf_ablation_count(const mmf_ablation* a, size_t* count);
/* Borrowed view valid while `a` lives. */
MMF_API mmf_status mmf_ablation_table(const mmf_ablation* a, size_t i, const mmf_table** table);
MMF_API void mmf_ablation_free(mmf_ablation* a);

/* Runs the finite-difference suite; *all_passed is 1 iff every entry passed. */
MMF_API mmf_status mmf_gradcheck(mmf_gradcheck_callback cb, void* user, int* all_passed);

#ifdef __cplusplus
}
#endif

#endif /* MMFORMER_H */
