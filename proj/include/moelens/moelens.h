/* SPDX-License-Identifier: Apache-2.0 */

/* C interface to moelens. Every object is an opaque handle released with its
 * *_free function. Functions return a moelens_status; on failure
 * moelens_last_error() describes the problem (per thread, valid until the
 * next call). Strings returned through char** are owned by the caller and
 * released with moelens_string_free. */

#ifndef MOELENS_MOELENS_H
#define MOELENS_MOELENS_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  if defined(MOELENS_BUILDING_LIBRARY)
#    define MOELENS_API __declspec(dllexport)
#  else
#    define MOELENS_API __declspec(dllimport)
#  endif
#else
#  define MOELENS_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum moelens_status {
    MOELENS_OK = 0,
    MOELENS_ERR_INVALID_INPUT = 1,
    MOELENS_ERR_CONFIG = 2,
    MOELENS_ERR_EMPTY_DOMAIN = 3,
    MOELENS_ERR_CLASSIFICATION = 4,
    MOELENS_ERR_SCHEMA = 5,
    MOELENS_ERR_MALFORMED = 6,
    MOELENS_ERR_TRAINING = 7,
    MOELENS_ERR_IO = 8,
    MOELENS_ERR_INTERNAL = 9
} moelens_status;

typedef struct moelens_model moelens_model;
typedef struct moelens_corpus moelens_corpus;
typedef struct moelens_task moelens_task;
typedef struct moelens_trace moelens_trace;
typedef struct moelens_scores moelens_scores;
typedef struct moelens_causal moelens_causal;
typedef struct moelens_drivers moelens_drivers;
typedef struct moelens_plans moelens_plans;

typedef struct moelens_model_spec {
    uint32_t n_layers;
    uint32_t n_experts;
    uint32_t top_k;
    uint32_t d_model;
    uint32_t d_ff;
    uint32_t vocab_size;
    uint64_t seed;
} moelens_model_spec;

MOELENS_API const char* moelens_version(void);
MOELENS_API const char* moelens_status_name(moelens_status status);
MOELENS_API const char* moelens_last_error(void);
MOELENS_API void moelens_string_free(char* s);

/* ---- models ------------------------------------------------------------ */

MOELENS_API moelens_status moelens_model_create_random(const moelens_model_spec* spec, moelens_model** out);
/* planted_spec_json may be NULL for the reference spec. ground_truth_json may
 * be NULL. */
MOELENS_API moelens_status moelens_model_create_planted(const char* planted_spec_json, moelens_model** out,
                                                        char** ground_truth_json);
MOELENS_API moelens_status moelens_default_planted_spec(char** json);
MOELENS_API moelens_status moelens_model_load(const char* path, moelens_model** out);
MOELENS_API moelens_status moelens_model_save(const moelens_model* model, const char* path);
MOELENS_API moelens_status moelens_model_get_spec(const moelens_model* model, moelens_model_spec* out);
MOELENS_API moelens_status moelens_model_descriptor(const moelens_model* model, char** out);
/* distributions: n * vocab_size doubles. topk_ids / topk_probs: NULL or
 * n * n_layers * top_k entries. */
MOELENS_API moelens_status moelens_model_forward(const moelens_model* model, const uint32_t* tokens, size_t n,
                                                 double* distributions, uint32_t* topk_ids, double* topk_probs);
MOELENS_API moelens_status moelens_model_train(moelens_model* model, const moelens_corpus* corpus,
                                               double learning_rate, uint32_t steps, uint32_t batch_size,
                                               uint64_t seed, double* initial_loss, double* final_loss);
MOELENS_API void moelens_model_free(moelens_model* model);

/* ---- corpora and tasks ------------------------------------------------- */

MOELENS_API moelens_status moelens_corpus_read(const char* path, moelens_corpus** out);
MOELENS_API moelens_status moelens_corpus_write(const moelens_corpus* corpus, const char* path);
/* Samples sequences from the domains of a planted spec (NULL = reference). */
MOELENS_API moelens_status moelens_corpus_synthesize(const char* planted_spec_json, uint32_t sequences_per_domain,
                                                     uint32_t min_length, uint32_t max_length, uint64_t seed,
                                                     moelens_corpus** out);
MOELENS_API moelens_status moelens_corpus_size(const moelens_corpus* corpus, size_t* n_sequences,
                                               size_t* n_tokens);
MOELENS_API void moelens_corpus_free(moelens_corpus* corpus);

MOELENS_API moelens_status moelens_task_read(const char* path, moelens_task** out);
MOELENS_API moelens_status moelens_task_write(const moelens_task* task, const char* path);
MOELENS_API moelens_status moelens_task_synthesize(const char* planted_spec_json, uint32_t examples_per_domain,
                                                   uint32_t min_length, uint32_t max_length, uint64_t seed,
                                                   moelens_task** out);
MOELENS_API moelens_status moelens_task_size(const moelens_task* task, size_t* n_examples);
MOELENS_API void moelens_task_free(moelens_task* task);

/* ---- routing traces ---------------------------------------------------- */

MOELENS_API moelens_status moelens_trace_run(const moelens_model* model, const moelens_corpus* corpus,
                                             moelens_trace** out);
MOELENS_API moelens_status moelens_trace_read(const char* path, moelens_trace** out);
MOELENS_API moelens_status moelens_trace_write(const moelens_trace* trace, const char* path);
MOELENS_API moelens_status moelens_trace_record_count(const moelens_trace* trace, size_t* n);
/* report (nullable) receives one violation per line. */
MOELENS_API moelens_status moelens_trace_validate(const moelens_trace* trace, size_t* n_violations, char** report);
MOELENS_API void moelens_trace_free(moelens_trace* trace);

/* ---- domain metrics ---------------------------------------------------- */

MOELENS_API moelens_status moelens_scores_compute(const moelens_trace* trace, moelens_scores** out);
MOELENS_API moelens_status moelens_scores_get(const moelens_scores* scores, uint32_t layer, uint32_t expert,
                                              const char* domain, double* H, double* A, double* S,
                                              uint64_t* support);
MOELENS_API moelens_status moelens_scores_write(const moelens_scores* scores, const char* path,
                                                const char* provenance);
MOELENS_API moelens_status moelens_scores_plot(const moelens_scores* scores, const char* svg_path,
                                               const char* provenance);
/* Writes the taxonomy table and reports how many experts got a domain label. */
MOELENS_API moelens_status moelens_taxonomy_write(const moelens_scores* scores, double rho, double sigma_max,
                                                  const char* path, const char* provenance,
                                                  size_t* n_domain_experts);
/* Domain-labelled experts; fills up to capacity entries, *n gets the total. */
MOELENS_API moelens_status moelens_domain_experts(const moelens_scores* scores, double rho, double sigma_max,
                                                  uint32_t* layers, uint32_t* experts, size_t capacity, size_t* n);
MOELENS_API void moelens_scores_free(moelens_scores* scores);

/* ---- causal effects and drivers ---------------------------------------- */

MOELENS_API moelens_status moelens_causal_compute(const moelens_model* model, const moelens_corpus* corpus,
                                                  double magnitude, int sign, moelens_causal** out);
MOELENS_API moelens_status moelens_causal_get(const moelens_causal* causal, uint32_t layer, uint32_t expert,
                                              double* ce);
MOELENS_API moelens_status moelens_causal_write(const moelens_causal* causal, const char* path,
                                                const char* provenance);
MOELENS_API void moelens_causal_free(moelens_causal* causal);

MOELENS_API moelens_status moelens_drivers_identify(const moelens_causal* causal, double quantile,
                                                    moelens_drivers** out);
MOELENS_API moelens_status moelens_drivers_read(const char* path, moelens_drivers** out);
MOELENS_API moelens_status moelens_drivers_from_list(const uint32_t* layers, const uint32_t* experts, size_t n,
                                                     moelens_drivers** out);
MOELENS_API moelens_status moelens_drivers_count(const moelens_drivers* drivers, size_t* n);
MOELENS_API moelens_status moelens_drivers_get(const moelens_drivers* drivers, size_t index, uint32_t* layer,
                                               uint32_t* expert);
/* Newline-separated warnings, empty when there are none. */
MOELENS_API moelens_status moelens_drivers_warnings(const moelens_drivers* drivers, char** out);
MOELENS_API moelens_status moelens_drivers_write(const moelens_drivers* drivers, const char* path,
                                                 const char* provenance);
MOELENS_API void moelens_drivers_free(moelens_drivers* drivers);

/* rates: capacity >= n_layers. */
MOELENS_API moelens_status moelens_causal_rate(const moelens_trace* trace, const moelens_drivers* drivers,
                                               double* rates, size_t capacity);
/* svg_path may be NULL. */
MOELENS_API moelens_status moelens_causal_rate_write(const moelens_trace* trace, const moelens_drivers* drivers,
                                                     const char* path, const char* svg_path,
                                                     const char* provenance);

/* ---- token analysis (expert sets as parallel layer/expert arrays) ------- */

/* fractions: 5 doubles. *total gets the qualifying-token count (0 = no
 * support, fractions all 0). */
MOELENS_API moelens_status moelens_position_bins(const moelens_trace* trace, const uint32_t* layers,
                                                 const uint32_t* experts, size_t n, const char* domain,
                                                 double* fractions, uint64_t* total);
/* One block of rows per trace domain. svg_path may be NULL. */
MOELENS_API moelens_status moelens_bins_write(const moelens_trace* trace, const uint32_t* layers,
                                              const uint32_t* experts, size_t n, const char* path,
                                              const char* svg_path, const char* provenance);
MOELENS_API moelens_status moelens_assoc_write(const moelens_trace* trace, const uint32_t* layers,
                                               const uint32_t* experts, size_t n, uint64_t min_count,
                                               const char* set_label, const char* path, const char* provenance,
                                               size_t* n_rows);

/* ---- interventions ----------------------------------------------------- */

MOELENS_API moelens_status moelens_plans_create(moelens_plans** out);
MOELENS_API moelens_status moelens_plans_read(const char* path, moelens_plans** out);
MOELENS_API moelens_status moelens_plans_add(moelens_plans* plans, const char* label);
/* Appends an edit to the most recently added plan. */
MOELENS_API moelens_status moelens_plans_add_edit(moelens_plans* plans, uint32_t layer, uint32_t expert,
                                                  double factor);
MOELENS_API moelens_status moelens_plans_count(const moelens_plans* plans, size_t* n);
MOELENS_API void moelens_plans_free(moelens_plans* plans);

/* plans may be NULL to evaluate the unmodified model (index ignored). */
MOELENS_API moelens_status moelens_evaluate(const moelens_model* model, const moelens_task* task,
                                            const moelens_plans* plans, size_t index, double* accuracy,
                                            double* weighted_f1);
/* Baseline row first, then one row per plan; an empty plan list writes the
 * baseline only. */
MOELENS_API moelens_status moelens_sweep_write(const moelens_model* model, const moelens_task* task,
                                               const moelens_plans* plans, const char* path,
                                               const char* provenance, size_t* n_rows);

/* ---- pipeline ---------------------------------------------------------- */

typedef struct moelens_pipeline_config {
    const char* model_path;
    const char* corpus_path;
    const char* task_path;
    const char* out_dir;
    double rho;
    double sigma_max;
    double quantile;
    uint64_t min_count;
    double magnitude;
    int sign;
    uint64_t seed;
} moelens_pipeline_config;

/* Fills the defaults: rho 2, sigma_max 0.25, quantile 0.05, min_count 5,
 * magnitude 1, sign -1, seed 0, all paths NULL. */
MOELENS_API void moelens_pipeline_config_init(moelens_pipeline_config* config);
/* summary (nullable) receives a short human-readable report. */
MOELENS_API moelens_status moelens_pipeline_run(const moelens_pipeline_config* config, char** summary);

#ifdef __cplusplus
}
#endif

#endif /* MOELENS_MOELENS_H */
