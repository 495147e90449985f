#ifndef SURGPLAN_H
#define SURGPLAN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes shared by every function.
 */
typedef enum SpStatus {
  SP_STATUS_OK = 0,
  SP_STATUS_NULL_ARGUMENT = 1,
  SP_STATUS_INVALID_ARGUMENT = 2,
  SP_STATUS_BUFFER_TOO_SMALL = 3,
  SP_STATUS_IO = 4,
  SP_STATUS_CHECKPOINT = 5,
  SP_STATUS_EPISODE_DONE = 6,
  SP_STATUS_NUMERIC = 7,
  SP_STATUS_GRAD_CHECK_FAILED = 8,
  SP_STATUS_INTERNAL = 9,
  SP_STATUS_PANIC = 10,
} SpStatus;

/**
 * An environment instance.
 */
typedef struct SpEnv SpEnv;

/**
 * A policy loaded from a checkpoint.
 */
typedef struct SpPolicy SpPolicy;

/**
 * Outcome of one environment step.
 */
typedef struct SpStepResult {
  double reward;
  bool done;
  bool success;
  /**
   * Tool column after the step.
   */
  uint32_t tool_x;
  /**
   * Tool row after the step.
   */
  uint32_t tool_y;
} SpStepResult;

typedef struct SpEvalReport {
  uint64_t episodes;
  uint64_t successes;
  double success_rate;
  double mean_return;
  double mean_episode_length;
} SpEvalReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Number of `f64` values in one rendered observation (channels × height × width).
 */
size_t sp_observation_len(void);

/**
 * Number of discrete actions; action ids are `0..sp_action_count()`.
 */
uint32_t sp_action_count(void);

/**
 * Copies the calling thread's last error message into `buf`.
 *
 * Returns the buffer size needed including the terminating NUL; a return of
 * 1 means no error is recorded.
 *
 * # Safety
 * `buf` must be null or valid for `cap` bytes.
 */
size_t sp_last_error_message(char *buf, size_t cap);

/**
 * Creates an environment by name (`deflect`, `reach`, `cut`, `thread`, `place`).
 *
 * # Safety
 * `name` must be a NUL-terminated string; `out` must be valid for writes.
 */
enum SpStatus sp_env_new(const char *name, bool shaping, struct SpEnv **out);

/**
 * Releases an environment. Null is ignored.
 *
 * # Safety
 * `env` must be null or come from [`sp_env_new`] and not be used afterwards.
 */
void sp_env_free(struct SpEnv *env);

/**
 * Starts an episode and writes the first observation.
 *
 * # Safety
 * `env` must be a live handle; `obs` must be valid for `obs_len` doubles.
 */
enum SpStatus sp_env_reset(struct SpEnv *env, uint64_t seed, double *obs, size_t obs_len);

/**
 * Writes the current episode's target sequence (object indices in order).
 *
 * # Safety
 * `env` must be a live handle; `targets` valid for `cap` values; `len` valid for writes.
 */
enum SpStatus sp_env_targets(const struct SpEnv *env, uint32_t *targets, size_t cap, size_t *len);

/**
 * Applies one action and writes the next observation.
 *
 * # Safety
 * `env` must be a live handle; `obs` valid for `obs_len` doubles; `result` valid for writes.
 */
enum SpStatus sp_env_step(struct SpEnv *env,
                          uint32_t action,
                          double *obs,
                          size_t obs_len,
                          struct SpStepResult *result);

/**
 * Loads and validates a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid for writes.
 */
enum SpStatus sp_policy_load(const char *path, struct SpPolicy **out);

/**
 * Releases a policy. Null is ignored.
 *
 * # Safety
 * `policy` must be null or come from [`sp_policy_load`] and not be used afterwards.
 */
void sp_policy_free(struct SpPolicy *policy);

/**
 * Copies the checkpoint's content hash (64 hex digits) into `buf`.
 *
 * # Safety
 * `policy` must be a live handle; `buf` valid for `cap` bytes.
 */
enum SpStatus sp_policy_hash(const struct SpPolicy *policy, char *buf, size_t cap);

/**
 * Writes the action distribution for one observation and token vector.
 *
 * # Safety
 * `policy` must be a live handle; `obs` valid for `obs_len`, `tokens` for
 * `tokens_len` and `probs` for `probs_len` doubles.
 */
enum SpStatus sp_policy_action_probs(const struct SpPolicy *policy,
                                     const double *obs,
                                     size_t obs_len,
                                     const double *tokens,
                                     size_t tokens_len,
                                     double *probs,
                                     size_t probs_len);

/**
 * Evaluates the policy on its training task and token provider with sampled
 * actions on the evaluation stream `seed`.
 *
 * # Safety
 * `policy` must be a live handle; `report` valid for writes.
 */
enum SpStatus sp_policy_evaluate(const struct SpPolicy *policy,
                                 size_t episodes,
                                 uint64_t seed,
                                 struct SpEvalReport *report);

/**
 * Runs the finite-difference gradient check. Returns `SP_STATUS_OK` on pass
 * and `SP_STATUS_GRAD_CHECK_FAILED` otherwise; `max_rel_err` is written either way.
 *
 * # Safety
 * `max_rel_err` must be valid for writes.
 */
enum SpStatus sp_gradcheck(uint64_t seed, double *max_rel_err);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SURGPLAN_H */
