/* C interface to the actuator-selection LQR simulator. */

#ifndef ACTSEL_H
#define ACTSEL_H

/* Generated from the actsel-ffi crate by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call in this interface. `OK` is zero; all other
// codes leave a message readable via `actsel_last_error_message`.
typedef enum ActselStatus {
  // Success.
  ACTSEL_STATUS_OK = 0,
  // A required pointer argument was null.
  ACTSEL_STATUS_NULL_POINTER = 1,
  // A string argument was not valid UTF-8.
  ACTSEL_STATUS_UTF8 = 2,
  // An argument was structurally invalid (bad dimension, range, subset).
  ACTSEL_STATUS_INVALID_ARGUMENT = 3,
  // The requested epoch schedule cannot exist for the given horizon.
  ACTSEL_STATUS_INFEASIBLE_SCHEDULE = 4,
  // A numerical routine failed (factorization, convergence, identity check).
  ACTSEL_STATUS_NUMERICAL = 5,
  // Random instance generation exhausted its retry budget.
  ACTSEL_STATUS_GENERATION = 6,
  // A verification campaign found violations.
  ACTSEL_STATUS_VERIFICATION_FAILED = 7,
  // A structured input file did not match the expected format.
  ACTSEL_STATUS_FORMAT = 8,
  // An underlying I/O operation failed.
  ACTSEL_STATUS_IO = 9,
  // An internal panic was caught at the boundary.
  ACTSEL_STATUS_PANIC = 10,
} ActselStatus;

// Opaque handle to a certified system instance.
typedef struct ActselInstance ActselInstance;

// Opaque handle to a finished online run and its full regret accounting.
typedef struct ActselRun ActselRun;

// Parameters of one online run over the identity cost family
// `Q = q_scale I`, `Q_f = qf_scale I`, `R = r_scale I`.
//
// Obtain defaults from `actsel_run_options_default` and override fields as
// needed before calling `actsel_run_execute`.
typedef struct ActselRunOptions {
  // Number of rounds `T`; must be at least 1.
  size_t horizon;
  // Episode length `N` (stages per round); must be at least 1.
  size_t n_steps;
  // Master seed; every random draw in the run derives from it.
  uint64_t seed;
  // Ridge weight of the least-squares estimator; must be positive.
  double lambda;
  // Fixed estimation-phase length. Zero selects the logarithmic default
  // `tau1 = tau1_log_c * ceil(ln T)` instead.
  size_t tau1_fixed;
  // Multiplier of the logarithmic default; ignored when `tau1_fixed > 0`.
  size_t tau1_log_c;
  // Fixed reward-normalization ceiling. A non-positive or non-finite
  // value selects the adaptive running maximum.
  double ceiling;
  // Scale of the per-stage state cost.
  double q_scale;
  // Scale of the terminal state cost.
  double qf_scale;
  // Scale of the input cost.
  double r_scale;
} ActselRunOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Version of the library as a static nul-terminated string.
const char *actsel_version(void);

// Message of the most recent failure on the calling thread (empty until a
// call fails). The pointer stays valid until the next failing call on the
// same thread.
const char *actsel_last_error_message(void);

// Generate a certified random instance.
//
// `block_widths` may be null, in which case every one of the
// `actuator_count` actuators gets a single input column; otherwise it must
// point at `actuator_count` entries. On success `*out` owns the instance;
// release it with `actsel_instance_free`.
//
// # Safety
// `block_widths` is either null or readable for `actuator_count` entries,
// and `out` must be a valid destination pointer.
enum ActselStatus actsel_instance_generate(size_t state_dim,
                                           size_t actuator_count,
                                           const size_t *block_widths,
                                           size_t budget,
                                           double spectral_radius,
                                           double sigma,
                                           uint64_t seed,
                                           struct ActselInstance **out);

// Load an instance from its JSON file format.
//
// # Safety
// `path` must be a readable nul-terminated string and `out` a valid
// destination pointer.
enum ActselStatus actsel_instance_load(const char *path, struct ActselInstance **out);

// Save an instance to its JSON file format (bitwise reproducible).
//
// # Safety
// `instance` must be a live handle and `path` a readable nul-terminated
// string.
enum ActselStatus actsel_instance_save(const struct ActselInstance *instance, const char *path);

// Release an instance handle. Null is ignored.
//
// # Safety
// `instance` must be null or a handle returned by this library that has not
// been freed yet.
void actsel_instance_free(struct ActselInstance *instance);

// State dimension `n` (zero when the handle is null).
//
// # Safety
// `instance` must be null or a live handle.
size_t actsel_instance_state_dim(const struct ActselInstance *instance);

// Number of actuators `q` (zero when the handle is null).
//
// # Safety
// `instance` must be null or a live handle.
size_t actsel_instance_actuator_count(const struct ActselInstance *instance);

// Total input dimension `m` (zero when the handle is null).
//
// # Safety
// `instance` must be null or a live handle.
size_t actsel_instance_input_dim(const struct ActselInstance *instance);

// Selection budget `H` (zero when the handle is null).
//
// # Safety
// `instance` must be null or a live handle.
size_t actsel_instance_budget(const struct ActselInstance *instance);

// Number of exploration groups `p` (zero when the handle is null).
//
// # Safety
// `instance` must be null or a live handle.
size_t actsel_instance_group_count(const struct ActselInstance *instance);

// Process-noise standard deviation (NaN when the handle is null).
//
// # Safety
// `instance` must be null or a live handle.
double actsel_instance_sigma(const struct ActselInstance *instance);

// Exact expected episode cost of the optimal controller for one actuator
// subset under the identity cost family, written to `*out_cost`.
//
// `indices` must point at `index_count` strictly increasing actuator
// indices.
//
// # Safety
// `instance` must be a live handle, `indices` readable for `index_count`
// entries, and `out_cost` a valid destination pointer.
enum ActselStatus actsel_subset_optimal_cost(const struct ActselInstance *instance,
                                             const size_t *indices,
                                             size_t index_count,
                                             size_t n_steps,
                                             double q_scale,
                                             double qf_scale,
                                             double r_scale,
                                             double *out_cost);

// Default run options: episode length 5, unit ridge weight, logarithmic
// estimation schedule with multiplier 1, adaptive ceiling, and the
// `Q = I`, `Q_f = 2I`, `R = I` cost family.
struct ActselRunOptions actsel_run_options_default(size_t horizon, uint64_t seed);

// Execute one full online run (explore, estimate, select, control) and
// hand back the finished report. On success `*out` owns the run; release
// it with `actsel_run_free`.
//
// # Safety
// `instance` must be a live handle, `options` readable, and `out` a valid
// destination pointer.
enum ActselStatus actsel_run_execute(const struct ActselInstance *instance,
                                     const struct ActselRunOptions *options,
                                     struct ActselRun **out);

// Release a run handle. Null is ignored.
//
// # Safety
// `run` must be null or a handle returned by this library that has not been
// freed yet.
void actsel_run_free(struct ActselRun *run);

// Number of rounds in the run (zero when the handle is null).
//
// # Safety
// `run` must be null or a live handle.
size_t actsel_run_horizon(const struct ActselRun *run);

// Cumulative regret `R_A` (NaN when the handle is null).
//
// # Safety
// `run` must be null or a live handle.
double actsel_run_regret(const struct ActselRun *run);

// Sum of realized episode costs (NaN when the handle is null).
//
// # Safety
// `run` must be null or a live handle.
double actsel_run_cumulative_cost(const struct ActselRun *run);

// Sum of per-round offline optima (NaN when the handle is null).
//
// # Safety
// `run` must be null or a live handle.
double actsel_run_oracle_total(const struct ActselRun *run);

// Resolved estimation-phase length (zero when the handle is null).
//
// # Safety
// `run` must be null or a live handle.
size_t actsel_run_tau1(const struct ActselRun *run);

// Number of epochs in the run's schedule (zero when the handle is null).
//
// # Safety
// `run` must be null or a live handle.
size_t actsel_run_epoch_count(const struct ActselRun *run);

// Number of bandit arms (admissible subsets; zero when the handle is null).
//
// # Safety
// `run` must be null or a live handle.
size_t actsel_run_action_count(const struct ActselRun *run);

// Final reward-normalization ceiling (NaN when the handle is null).
//
// # Safety
// `run` must be null or a live handle.
double actsel_run_final_ceiling(const struct ActselRun *run);

// Copy the prefix-averaged regret series `R_A(t)/t`, `t = 1..=T`, into
// `buffer` (up to `capacity` values) and return the full series length.
// Call with a null buffer (capacity zero) to query the required size.
//
// # Safety
// `run` must be null or a live handle; `buffer` must be null or writable
// for `capacity` entries.
size_t actsel_run_regret_per_round(const struct ActselRun *run, double *buffer, size_t capacity);

// Write the run's per-round table to `path` in the same CSV schema the
// command-line tool emits.
//
// # Safety
// `run` must be a live handle and `path` a readable nul-terminated string.
enum ActselStatus actsel_run_save_csv(const struct ActselRun *run, const char *path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ACTSEL_H */
