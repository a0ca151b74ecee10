#ifndef TACHORN_H
#define TACHORN_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum TachornStatus {
  TACHORN_STATUS_OK = 0,
  TACHORN_STATUS_NULL_ARGUMENT = 1,
  TACHORN_STATUS_INVALID_UTF8 = 2,
  TACHORN_STATUS_PARSE_ERROR = 3,
  TACHORN_STATUS_INVALID_MODEL = 4,
  TACHORN_STATUS_INVALID_ARGUMENT = 5,
  TACHORN_STATUS_ENCODE_ERROR = 6,
  TACHORN_STATUS_SOLVER_NOT_FOUND = 7,
  TACHORN_STATUS_SOLVER_ERROR = 8,
  TACHORN_STATUS_ORACLE_ABORTED = 9,
  TACHORN_STATUS_PANIC = 10,
} TachornStatus;

typedef enum TachornVerdict {
  TACHORN_VERDICT_SAFE = 0,
  TACHORN_VERDICT_UNSAFE = 1,
  TACHORN_VERDICT_UNKNOWN = 2,
} TachornVerdict;

/**
 * Settings for [`tachorn_check`].
 */
typedef struct TachornConfig TachornConfig;

/**
 * A parsed system model.
 */
typedef struct TachornModel TachornModel;

/**
 * Outcome of [`tachorn_check`].
 */
typedef struct TachornResult TachornResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Description of the last failure on this thread, or null. The pointer
 * stays valid until the next call into the library on this thread.
 */
const char *tachorn_last_error(void);

/**
 * Library version as a static string.
 */
const char *tachorn_version(void);

/**
 * Releases a string returned by the library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed before.
 */
void tachorn_string_free(char *s);

/**
 * Parses and validates a model.
 *
 * # Safety
 * `text` must be a nul-terminated string and `out` a valid pointer.
 */
enum TachornStatus tachorn_model_parse(const char *text, struct TachornModel **out);

/**
 * # Safety
 * `model` must come from [`tachorn_model_parse`] or be null.
 */
void tachorn_model_free(struct TachornModel *model);

/**
 * Number of process templates of the model.
 *
 * # Safety
 * `model` must be a live model handle or null.
 */
size_t tachorn_model_template_count(const struct TachornModel *model);

/**
 * Pretty-prints the model in the input language.
 *
 * # Safety
 * `model` must be a live model handle and `out` a valid pointer.
 */
enum TachornStatus tachorn_model_print(const struct TachornModel *model, char **out);

/**
 * Emits the SMT-LIB Horn clauses of the model for `schema`, e.g. `"(1,3)"`.
 *
 * # Safety
 * `model` must be a live model handle, `schema` a nul-terminated string
 * and `out` a valid pointer.
 */
enum TachornStatus tachorn_encode(const struct TachornModel *model, const char *schema, char **out);

/**
 * A configuration with default settings; the solver command comes from
 * the `TACHORN_SOLVER` environment variable when set.
 */
struct TachornConfig *tachorn_config_new(void);

/**
 * # Safety
 * `cfg` must come from [`tachorn_config_new`] or be null.
 */
void tachorn_config_free(struct TachornConfig *cfg);

/**
 * Sets the solver command line; `{file}` stands for the script path.
 *
 * # Safety
 * `cfg` must be a live configuration and `command` a nul-terminated string.
 */
enum TachornStatus tachorn_config_set_solver(struct TachornConfig *cfg, const char *command);

/**
 * Sets the per-query solver timeout.
 *
 * # Safety
 * `cfg` must be a live configuration.
 */
enum TachornStatus tachorn_config_set_timeout_ms(struct TachornConfig *cfg, uint64_t millis);

/**
 * Sets the largest vector sum the refinement may reach.
 *
 * # Safety
 * `cfg` must be a live configuration.
 */
enum TachornStatus tachorn_config_set_cap(struct TachornConfig *cfg, size_t cap);

/**
 * Runs the refinement loop. `cfg` may be null for defaults.
 *
 * # Safety
 * `model` must be a live model handle, `cfg` a live configuration or null
 * and `out` a valid pointer.
 */
enum TachornStatus tachorn_check(const struct TachornModel *model,
                                 const struct TachornConfig *cfg,
                                 struct TachornResult **out);

/**
 * # Safety
 * `result` must come from [`tachorn_check`] or be null.
 */
void tachorn_result_free(struct TachornResult *result);

/**
 * Verdict of a finished check; `Unknown` for a null handle.
 *
 * # Safety
 * `result` must be a live result handle or null.
 */
enum TachornVerdict tachorn_result_verdict(const struct TachornResult *result);

/**
 * The schema of the final attempt, e.g. `"(1,3)"`.
 *
 * # Safety
 * `result` must be a live result handle and `out` a valid pointer.
 */
enum TachornStatus tachorn_result_schema(const struct TachornResult *result, char **out);

/**
 * The verdict and attempt history as JSON.
 *
 * # Safety
 * `result` must be a live result handle and `out` a valid pointer.
 */
enum TachornStatus tachorn_result_json(const struct TachornResult *result, char **out);

/**
 * The error trace of an unsafe verdict in the line format; `*out` is set
 * to null for other verdicts.
 *
 * # Safety
 * `result` must be a live result handle and `out` a valid pointer.
 */
enum TachornStatus tachorn_result_trace(const struct TachornResult *result, char **out);

/**
 * Searches the instantiation with `counts[i]` instances of template `i`
 * for an error trace of at most `depth` steps. `*reachable` is set to 1
 * when one is found, and `trace_out`, when not null, receives it (or null).
 *
 * # Safety
 * `counts` must point to `n_counts` values, `reachable` must be valid and
 * `trace_out` valid or null.
 */
enum TachornStatus tachorn_oracle(const struct TachornModel *model,
                                  const size_t *counts,
                                  size_t n_counts,
                                  size_t depth,
                                  int32_t *reachable,
                                  char **trace_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TACHORN_H */
