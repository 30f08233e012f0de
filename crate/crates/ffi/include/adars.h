#ifndef ADARS_H
#define ADARS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Result code of every fallible call.
 */
typedef enum AdarsStatus {
  ADARS_STATUS_OK = 0,
  ADARS_STATUS_NULL_POINTER = 1,
  ADARS_STATUS_INVALID_UTF8 = 2,
  ADARS_STATUS_INVALID_ARGUMENT = 3,
  ADARS_STATUS_IO = 4,
  ADARS_STATUS_PARSE = 5,
  ADARS_STATUS_NO_ACCEPTED_PAIRS = 6,
  ADARS_STATUS_INVALID_DATA = 7,
  ADARS_STATUS_PANIC = 8,
} AdarsStatus;

typedef enum AdarsZeroSigma {
  ADARS_ZERO_SIGMA_ACCEPT_ALL = 0,
  ADARS_ZERO_SIGMA_DISCARD_GROUP = 1,
} AdarsZeroSigma;

typedef enum AdarsFilterMode {
  ADARS_FILTER_MODE_PAIRS = 0,
  ADARS_FILTER_MODE_GROUP = 1,
} AdarsFilterMode;

typedef enum AdarsMethod {
  ADARS_METHOD_ADA_RS_DPO = 0,
  ADARS_METHOD_ADA_RS_DAPO = 1,
  ADARS_METHOD_DPO_SIMPLE = 2,
  ADARS_METHOD_SFT = 3,
} AdarsMethod;

typedef enum AdarsGate {
  /**
   * The policy decides whether to think.
   */
  ADARS_GATE_FREE = 0,
  ADARS_GATE_THINK_ON = 1,
  ADARS_GATE_THINK_OFF = 2,
} AdarsGate;

/**
 * A run configuration plus the reward/sampler settings used by filtering.
 */
typedef struct AdarsPipeline AdarsPipeline;

/**
 * A policy together with the configuration (world, evaluation) it runs in.
 */
typedef struct AdarsPolicy AdarsPolicy;

typedef struct AdarsPipelineStats {
  size_t contexts;
  size_t candidates;
  size_t considered;
  size_t accepted;
  size_t ties_discarded;
  double acceptance_rate;
  double mean_solve_rate;
} AdarsPipelineStats;

typedef struct AdarsEvalSummary {
  size_t tasks;
  double accuracy;
  double thinking_rate;
  double avg_output_tokens;
  double avg_reasoning_tokens;
} AdarsEvalSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *adars_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *adars_version(void);

/**
 * Counts reasoning sentences in a NUL-terminated UTF-8 think trace.
 *
 * # Safety
 * `think_text` must be NULL or a valid NUL-terminated string; `out` must be
 * NULL or writable.
 */
enum AdarsStatus adars_count_think_sentences(const char *think_text, size_t *out);

/**
 * Length-penalized reward of one rollout.
 *
 * # Safety
 * `out` must be NULL or writable.
 */
enum AdarsStatus adars_alp_reward(bool correct,
                                  size_t think_sentences,
                                  double solve_rate,
                                  double alpha,
                                  double *out);

/**
 * Acceptance probability of a preference pair with reward gap `gap`.
 *
 * # Safety
 * `out` must be NULL or writable.
 */
enum AdarsStatus adars_pairwise_accept_prob(double gap,
                                            double delta_max,
                                            double beta_rs,
                                            double *out);

/**
 * Per-candidate acceptance probabilities for one group of `n` rewards,
 * written to `out[0..n]`.
 *
 * # Safety
 * `rewards` and `out` must point to `n` readable / writable doubles.
 */
enum AdarsStatus adars_groupwise_accept_probs(const double *rewards,
                                              size_t n,
                                              double beta_rs,
                                              enum AdarsZeroSigma zero_sigma,
                                              double *out);

/**
 * Creates a filtering pipeline from a TOML run configuration (NULL:
 * defaults). Only the `[reward]`, `[sampler]` and `seed` entries matter.
 *
 * # Safety
 * `config_toml` must be NULL or a valid string; `out` must be writable.
 */
enum AdarsStatus adars_pipeline_new(const char *config_toml, struct AdarsPipeline **out);

/**
 * Overrides the length-penalty coefficient, rejection temperature and seed.
 *
 * # Safety
 * `pipeline` must be a live handle.
 */
enum AdarsStatus adars_pipeline_set(struct AdarsPipeline *pipeline,
                                    double alpha,
                                    double beta_rs,
                                    uint64_t seed);

/**
 * Reads rollout JSONL from `input_path`, filters it, and writes the result
 * to `output_path` with statistics in `<stem>.stats.json` beside it.
 * `stats` may be NULL.
 *
 * # Safety
 * `pipeline` must be a live handle; paths must be valid strings.
 */
enum AdarsStatus adars_pipeline_run(const struct AdarsPipeline *pipeline,
                                    enum AdarsFilterMode mode,
                                    const char *input_path,
                                    const char *output_path,
                                    struct AdarsPipelineStats *stats);

/**
 * Releases a pipeline handle. NULL is ignored.
 *
 * # Safety
 * `pipeline` must be NULL or a handle not yet freed.
 */
void adars_pipeline_free(struct AdarsPipeline *pipeline);

/**
 * The base (think-heavy) policy of a configuration (NULL: defaults).
 *
 * # Safety
 * `config_toml` must be NULL or a valid string; `out` must be writable.
 */
enum AdarsStatus adars_policy_base(const char *config_toml, struct AdarsPolicy **out);

/**
 * Trains `method` under a configuration (NULL: defaults) on its training split.
 *
 * # Safety
 * `config_toml` must be NULL or a valid string; `out` must be writable.
 */
enum AdarsStatus adars_policy_train(const char *config_toml,
                                    enum AdarsMethod method,
                                    struct AdarsPolicy **out);

/**
 * Loads a checkpoint JSON file written by the `train` command or
 * [`adars_policy_save`]. Evaluation settings come from `config_toml`
 * (NULL: defaults); the world comes from the checkpoint when recorded.
 *
 * # Safety
 * `path` must be a valid string, `config_toml` NULL or valid, `out` writable.
 */
enum AdarsStatus adars_policy_load(const char *path,
                                   const char *config_toml,
                                   struct AdarsPolicy **out);

/**
 * Writes the policy as a checkpoint JSON file, including its world.
 *
 * # Safety
 * `policy` must be a live handle and `path` a valid string.
 */
enum AdarsStatus adars_policy_save(const struct AdarsPolicy *policy, const char *path);

/**
 * Evaluates the policy on `n_tasks` held-out tasks with the configured
 * decoding mode.
 *
 * # Safety
 * `policy` must be a live handle; `out` must be writable.
 */
enum AdarsStatus adars_policy_evaluate(const struct AdarsPolicy *policy,
                                       size_t n_tasks,
                                       enum AdarsGate gate,
                                       struct AdarsEvalSummary *out);

/**
 * Releases a policy handle. NULL is ignored.
 *
 * # Safety
 * `policy` must be NULL or a handle not yet freed.
 */
void adars_policy_free(struct AdarsPolicy *policy);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ADARS_H */
