#ifndef ATTNLIMITS_H
#define ATTNLIMITS_H

/* C interface to the attnlimits library.
 *
 * Functions return an al_status. On failure the message is available through
 * al_last_error() (per thread, valid until the next call on that thread).
 * Strings returned through char** out-parameters are owned by the caller and
 * released with al_string_free. Models are released with al_model_free. */

#include <stddef.h>
#include <stdint.h>

#if defined(ATTNLIMITS_BUILDING_LIBRARY)
#define AL_API __attribute__((visibility("default")))
#else
#define AL_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum al_status {
  AL_OK = 0,
  AL_E_INPUT = 1,
  AL_E_CONFIG = 2,
  AL_E_SCHEMA = 3,
  AL_E_VERSION = 4,
  AL_E_UNSUPPORTED = 5,
  AL_E_NUMERIC = 6,
  AL_E_REDUCTION = 7,
  AL_E_IO = 8,
  AL_E_INTERNAL = 9
} al_status;

typedef struct al_model al_model;

AL_API const char* al_version(void);
AL_API const char* al_last_error(void);
AL_API const char* al_status_name(al_status status);
/* Process exit code for a status: 0 ok, 3 numeric, 4 reduction, 2 otherwise. */
AL_API int al_exit_code(al_status status);
AL_API void al_string_free(char* s);

AL_API al_status al_model_load(const char* path, al_model** out);
AL_API al_status al_model_from_json(const char* text, al_model** out);
AL_API al_status al_model_save(const al_model* model, const char* path);
AL_API al_status al_model_to_json(const al_model* model, char** out);
/* Config, vocabulary and parameter count as JSON. */
AL_API al_status al_model_info(const al_model* model, char** out);
AL_API void al_model_free(al_model* model);

/* config_json holds any subset of the model config keys (num_layers,
 * num_heads, model_dim, ff_hidden_dim, key_dim, attention, weighting,
 * combine, positional{kind,max_len,tag,base}); language picks the vocabulary. */
AL_API al_status al_random_model(const char* config_json, const char* language, uint64_t seed, double scale,
                                 al_model** out);

/* which: "ones_star", "anbn" or "parity" (N used only for parity). The report
 * lists the exhaustive verification result. */
AL_API al_status al_construct(const char* which, int N, size_t verify_upto, unsigned threads, al_model** out,
                              char** report_json);

/* Sampled comparison of a model against membership at length n. */
AL_API al_status al_verify_sampled(const al_model* model, const char* language, size_t n, size_t count,
                                   uint64_t seed, unsigned threads, char** report_json);

/* Label probability, decision and final activation; with full_trace the
 * activations, scores, weights and head outputs of every layer. */
AL_API al_status al_forward(const al_model* model, const char* word, int full_trace, char** out_json);

/* mode: "process" or "uniform". One JSON record per line. */
AL_API al_status al_generate(const char* language, const char* mode, double p, size_t count, size_t max_len,
                             uint64_t seed, char** out_jsonl);

/* Depth reduction of a hard-attention model at word length n followed by the
 * counterexample search. c = 0 lifts the model (layer-0 tables from its
 * embeddings); c = 1 or 2 uses random tables reading c positions. language
 * may be NULL to infer it from the vocabulary. */
AL_API al_status al_restrict(const al_model* model, size_t n, int c, const char* stage_params, const char* language,
                             uint64_t seed, unsigned threads, char** report_json);

/* Flip-influence sweep; CSV columns n,max_delta,analytic_bound,slope_running. */
AL_API al_status al_perturb(const al_model* model, const char* n_grid, size_t trials, uint64_t seed,
                            unsigned threads, char** csv, char** summary_json);

/* Next-symbol cross-entropy at every length of n_grid ("256" for one). */
AL_API al_status al_evaluate(const al_model* model, const char* language, double p, const char* n_grid,
                             size_t samples, uint64_t seed, unsigned threads, char** report_json, char** csv);

#ifdef __cplusplus
}
#endif

#endif
