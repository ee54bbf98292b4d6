#ifndef HYBRIDREC_H
#define HYBRIDREC_H

/* Generated by cbindgen from hybridrec-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes; nonzero means failure. The numeric values match the CLI
 * exit-code contract (2 config, 3 empty data, 4 missing artifact).
 */
typedef enum HrStatus {
  HR_OK = 0,
  HR_INTERNAL = 1,
  HR_CONFIG = 2,
  HR_EMPTY_DATA = 3,
  HR_MISSING_ARTIFACT = 4,
  HR_NULL_POINTER = 5,
  HR_INVALID_UTF8 = 6,
} HrStatus;

/**
 * Opaque handle around a loaded hybrid model. Queries are serialized
 * internally, so a handle may be shared across threads.
 */
typedef struct HrRecommender HrRecommender;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Last error message on this thread, as a newly allocated C string, or null
 * when no error has been recorded. Free with [`hr_string_free`].
 */
char *hr_last_error(void);

/**
 * Frees a string allocated by this library.
 *
 * # Safety
 * `s` must be null or a pointer previously returned by a `hr_*` function and
 * not yet freed.
 */
void hr_string_free(char *s);

/**
 * Generates the synthetic dataset into `out_dir`. `config_path` and
 * `overrides` may be null.
 *
 * # Safety
 * Pointer arguments must be null or valid NUL-terminated strings.
 */
enum HrStatus hr_run_synth(const char *out_dir, const char *config_path, const char *overrides);

/**
 * Scores, reduces and materializes the interaction matrix and training rows.
 *
 * # Safety
 * Pointer arguments must be null or valid NUL-terminated strings.
 */
enum HrStatus hr_run_prep(const char *out_dir, const char *config_path, const char *overrides);

/**
 * Fits the implicit-feedback ALS factor model.
 *
 * # Safety
 * Pointer arguments must be null or valid NUL-terminated strings.
 */
enum HrStatus hr_run_als(const char *out_dir, const char *config_path, const char *overrides);

/**
 * Trains the hybrid network and writes the model directory.
 *
 * # Safety
 * Pointer arguments must be null or valid NUL-terminated strings.
 */
enum HrStatus hr_run_train(const char *out_dir, const char *config_path, const char *overrides);

/**
 * Evaluates the trained model on the validation split.
 *
 * # Safety
 * Pointer arguments must be null or valid NUL-terminated strings.
 */
enum HrStatus hr_run_eval(const char *out_dir, const char *config_path, const char *overrides);

/**
 * Runs the greedy coverage analysis. `seed_device` may be null.
 *
 * # Safety
 * Pointer arguments must be null or valid NUL-terminated strings.
 */
enum HrStatus hr_run_coverage(const char *out_dir,
                              const char *config_path,
                              const char *overrides,
                              const char *seed_device);

/**
 * Loads a trained model directory (the `model/` directory written by
 * `hr_run_train`) into a recommender handle.
 *
 * # Safety
 * `model_dir` must be a valid NUL-terminated string; `out` must be a valid
 * pointer to writable storage for one pointer.
 */
enum HrStatus hr_recommender_open(const char *model_dir, struct HrRecommender **out);

/**
 * Releases a recommender handle.
 *
 * # Safety
 * `rec` must be null or a pointer from [`hr_recommender_open`] not yet
 * closed.
 */
void hr_recommender_close(struct HrRecommender *rec);

/**
 * Number of ranked devices the model can produce (the upper bound for `k`).
 *
 * # Safety
 * `rec` must be a live handle from [`hr_recommender_open`].
 */
uint32_t hr_recommender_device_count(const struct HrRecommender *rec);

/**
 * Ranks devices for a visitor. `visitor_id` null means unknown (cold),
 * `sequence`/`features` may be null/empty for cold queries. Writes `k`
 * device-id strings (free each with [`hr_string_free`]) and `k` scores.
 *
 * # Safety
 * `rec` must be a live handle. `sequence` must point to `sequence_len` valid
 * strings, `features` to `features_len` doubles, `out_device_ids` and
 * `out_scores` to `k` writable slots each.
 */
enum HrStatus hr_recommend(struct HrRecommender *rec,
                           const char *visitor_id,
                           const char *const *sequence,
                           uintptr_t sequence_len,
                           const double *features,
                           uintptr_t features_len,
                           uint32_t k,
                           bool include_seen,
                           char **out_device_ids,
                           double *out_scores);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HYBRIDREC_H */
