#ifndef MMB_H
#define MMB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MmbStatus {
  MMB_STATUS_OK = 0,
  MMB_STATUS_NULL_POINTER = 1,
  MMB_STATUS_INVALID_ARGUMENT = 2,
  MMB_STATUS_INVALID_CONFIG = 3,
  MMB_STATUS_DIMENSION_MISMATCH = 4,
  MMB_STATUS_NUMERICAL = 5,
  MMB_STATUS_QOS_INFEASIBLE = 6,
  MMB_STATUS_IO = 7,
  MMB_STATUS_PARSE = 8,
  MMB_STATUS_BUFFER_TOO_SMALL = 9,
  MMB_STATUS_PANIC = 10,
} MmbStatus;

typedef enum MmbSolver {
  MMB_SOLVER_STANDARD = 0,
  MMB_SOLVER_RANDOMIZED = 1,
} MmbSolver;

typedef enum MmbVerdict {
  MMB_VERDICT_FEASIBLE = 0,
  MMB_VERDICT_INFEASIBLE = 1,
  MMB_VERDICT_UNDECIDED = 2,
} MmbVerdict;

/*
 Opaque max-min result handle.
 */
typedef struct MmbMaxMinResult MmbMaxMinResult;

/*
 Opaque scenario handle.
 */
typedef struct MmbScenario MmbScenario;

/*
 Solver settings. Fill with [`mmb_solver_options_default`] or
 [`mmb_solver_options_qos_default`] and adjust.
 */
typedef struct MmbSolverOptions {
  enum MmbSolver solver;
  double beta;
  double alpha;
  double alpha_bar;
  uint64_t max_iter;
  double opg_tol;
  double feas_tol;
  uint64_t seed;
  uint32_t threads;
  bool warm_start;
} MmbSolverOptions;

/*
 Outcome of one feasibility check.
 */
typedef struct MmbCheckResult {
  enum MmbVerdict verdict;
  double final_f;
  uint64_t iterations;
} MmbCheckResult;

/*
 Outcome of a min-power solve.
 */
typedef struct MmbQosResult {
  enum MmbVerdict verdict;
  double total_power;
  double min_user_rate;
  uint64_t iterations;
} MmbQosResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or null. Valid until the next `mmb_*` call
 on the same thread.
 */
const char *mmb_last_error_message(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *mmb_version(void);

/*
 # Safety
 `s` must be null or a string returned by this library, not yet freed.
 */
void mmb_string_free(char *s);

/*
 Max-min defaults.

 # Safety
 `options` must be null or point to writable memory for one `MmbSolverOptions`.
 */
enum MmbStatus mmb_solver_options_default(struct MmbSolverOptions *options);

/*
 Min-power defaults.

 # Safety
 As for [`mmb_solver_options_default`].
 */
enum MmbStatus mmb_solver_options_qos_default(struct MmbSolverOptions *options);

/*
 Draws a scenario with default geometry and a uniform per-AP budget `power_w` (watts).

 # Safety
 `scenario` must point to writable memory for one pointer.
 */
enum MmbStatus mmb_scenario_generate(size_t num_aps,
                                     size_t antennas_per_ap,
                                     size_t num_users,
                                     double power_w,
                                     uint64_t seed,
                                     struct MmbScenario **scenario);

/*
 Draws a scenario from a JSON scenario configuration.

 # Safety
 `config_json` must be a NUL-terminated string; `scenario` as in [`mmb_scenario_generate`].
 */
enum MmbStatus mmb_scenario_generate_from_config(const char *config_json,
                                                 struct MmbScenario **scenario);

/*
 # Safety
 `json` must be a NUL-terminated string; `scenario` as in [`mmb_scenario_generate`].
 */
enum MmbStatus mmb_scenario_from_json(const char *json, struct MmbScenario **scenario);

/*
 # Safety
 `path` must be a NUL-terminated string; `scenario` as in [`mmb_scenario_generate`].
 */
enum MmbStatus mmb_scenario_load(const char *path, struct MmbScenario **scenario);

/*
 Serializes a scenario; release the string with [`mmb_string_free`].

 # Safety
 `scenario` must be a live handle; `json` must point to writable memory for one pointer.
 */
enum MmbStatus mmb_scenario_to_json(const struct MmbScenario *scenario, char **json);

/*
 # Safety
 `scenario` must be a live handle; the output pointers must be writable.
 */
enum MmbStatus mmb_scenario_dims(const struct MmbScenario *scenario,
                                 size_t *num_aps,
                                 size_t *antennas_per_ap,
                                 size_t *num_users);

/*
 # Safety
 `scenario` must be null or a handle from this library, not yet freed.
 */
void mmb_scenario_free(struct MmbScenario *scenario);

/*
 One feasibility check at `rate` (bit/s/Hz). `options` may be null for the defaults.

 # Safety
 `scenario` must be a live handle, `options` null or valid, `result` writable.
 */
enum MmbStatus mmb_check_feasibility(const struct MmbScenario *scenario,
                                     double rate,
                                     const struct MmbSolverOptions *options,
                                     struct MmbCheckResult *result);

/*
 Bisection over `[s_min, s_max]` down to width `s_ter`. `options` may be null.

 # Safety
 `scenario` must be a live handle, `options` null or valid, `result` writable.
 */
enum MmbStatus mmb_bisect(const struct MmbScenario *scenario,
                          double s_min,
                          double s_max,
                          double s_ter,
                          const struct MmbSolverOptions *options,
                          struct MmbMaxMinResult **result);

/*
 # Safety
 `result` must be a live handle; `rate` writable.
 */
enum MmbStatus mmb_maxmin_result_rate(const struct MmbMaxMinResult *result, double *rate);

/*
 # Safety
 `result` must be a live handle; `checks` writable.
 */
enum MmbStatus mmb_maxmin_result_checks(const struct MmbMaxMinResult *result, size_t *checks);

/*
 Copies the K achieved rates into `buf`. `needed` (nullable) receives K.

 # Safety
 `result` must be a live handle and `buf` writable for `len` doubles.
 */
enum MmbStatus mmb_maxmin_result_user_rates(const struct MmbMaxMinResult *result,
                                            double *buf,
                                            size_t len,
                                            size_t *needed);

/*
 Copies the beamformers as interleaved `re, im` pairs, user-major then AP then antenna
 (`2 * K * M * N` doubles). `needed` (nullable) receives that count.

 # Safety
 `result` must be a live handle and `buf` writable for `len` doubles.
 */
enum MmbStatus mmb_maxmin_result_beamformers(const struct MmbMaxMinResult *result,
                                             double *buf,
                                             size_t len,
                                             size_t *needed);

/*
 Full result as JSON; release with [`mmb_string_free`].

 # Safety
 `result` must be a live handle; `json` writable.
 */
enum MmbStatus mmb_maxmin_result_to_json(const struct MmbMaxMinResult *result, char **json);

/*
 # Safety
 `result` must be null or a handle from this library, not yet freed.
 */
void mmb_maxmin_result_free(struct MmbMaxMinResult *result);

/*
 Minimum total power meeting `rate` for every user. `options` may be null for the min-power
 defaults. Returns `QosInfeasible` when the power cap is hit.

 # Safety
 `scenario` must be a live handle, `options` null or valid, `result` writable.
 */
enum MmbStatus mmb_qos_min_power(const struct MmbScenario *scenario,
                                 double rate,
                                 const struct MmbSolverOptions *options,
                                 struct MmbQosResult *result);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MMB_H */
