/*
 * nst — noise-enhanced dialogue state tracker, C API.
 *
 * Every function returns an nst_status code; on failure a human-readable
 * message is available from nst_last_error() until the next call on the same
 * thread. Strings returned through out-parameters are heap-allocated and must
 * be released with nst_free().
 */
#ifndef NST_H
#define NST_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define NST_API __declspec(dllexport)
#else
#define NST_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum nst_status {
  NST_OK = 0,
  NST_ERROR_IO = 1,
  NST_ERROR_PARSE = 2,
  NST_ERROR_INVALID_ARGUMENT = 3,
  NST_ERROR_RUNTIME = 4
} nst_status;

/* Opaque handle over a loaded checkpoint (model + vocabulary + ontology). */
typedef struct nst_model nst_model;

NST_API const char *nst_version(void);
NST_API const char *nst_last_error(void);
NST_API void nst_free(char *ptr);

/* Writes ontology.json, train.json, valid.json, test.json and events.json
 * into out_dir. config_json holds the synthetic-corpus settings plus an
 * optional "fractions":[train,valid,test]; pass NULL or "{}" for defaults. */
NST_API int nst_generate_corpus(const char *config_json, const char *out_dir);

/* Trains on corpus_dir/{ontology,train,valid}.json with the given experiment
 * config (JSON text) and writes the best-validation checkpoint plus
 * training_report.json into checkpoint_dir. */
NST_API int nst_train(const char *config_json, const char *corpus_dir,
                      const char *checkpoint_dir);

/* Trains once per threshold and returns CSV "noise_threshold,val_joint_accuracy". */
NST_API int nst_sweep_noise_threshold(const char *config_json, const char *corpus_dir,
                                      const double *thresholds, size_t n_thresholds,
                                      char **csv_out);

/* Scores a predictions JSONL file against its gold states. events_json may be
 * NULL; when given, the report gains "change_turn_joint" over turns with a
 * change event. */
NST_API int nst_evaluate(const char *predictions_jsonl, const char *ontology_json,
                         const char *events_json, char **report_json_out);

/* Momentum counters only: {"wrong_pairs_total", "wrong_pairs_carried",
 * "momentum_proportion", "gold_carryover_ratio"}. */
NST_API int nst_momentum_report(const char *predictions_jsonl, const char *ontology_json,
                                char **report_json_out);

NST_API int nst_model_open(const char *checkpoint_dir, nst_model **out_model);
NST_API void nst_model_close(nst_model *model);

/* Multi-turn rollout over a corpus file; one JSONL record per turn. With
 * oracle_prev_state != 0 the gold previous state is fed instead of the
 * model's own prediction. */
NST_API int nst_model_predict(nst_model *model, const char *corpus_json,
                              int oracle_prev_state, const char *out_jsonl);

/* Oracle-previous-state evaluation under noised states; returns CSV
 * "ratio,joint_accuracy,mean_l2_distance" with one row per ratio. */
NST_API int nst_model_probe_noise(nst_model *model, const char *corpus_json,
                                  const double *ratios, size_t n_ratios, uint64_t seed,
                                  char **csv_out);

/* Overall attention scores of one slot over one turn's context tokens,
 * {"tokens": [...], "scores": [...], "slot": ...}. turn_index is 1-based. */
NST_API int nst_model_attention(nst_model *model, const char *corpus_json,
                                const char *dialogue_id, int turn_index, const char *slot,
                                int oracle_prev_state, char **json_out);

#ifdef __cplusplus
}
#endif

#endif /* NST_H */
