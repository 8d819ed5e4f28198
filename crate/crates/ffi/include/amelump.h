#ifndef AMELUMP_H
#define AMELUMP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum AmelumpStatus {
  AMELUMP_STATUS_OK = 0,
  AMELUMP_STATUS_NULL_ARGUMENT = 1,
  AMELUMP_STATUS_INVALID_UTF8 = 2,
  AMELUMP_STATUS_INVALID_MODEL = 3,
  AMELUMP_STATUS_CAPACITY = 4,
  AMELUMP_STATUS_NUMERICAL = 5,
  AMELUMP_STATUS_IO = 6,
  AMELUMP_STATUS_INVALID_ARGUMENT = 7,
  AMELUMP_STATUS_BUFFER_TOO_SMALL = 8,
  AMELUMP_STATUS_PANIC = 9,
} AmelumpStatus;

/**
 * Parsed and validated model.
 */
typedef struct AmelumpModel AmelumpModel;

/**
 * Global state fractions on a uniform time grid.
 */
typedef struct AmelumpTrajectory AmelumpTrajectory;

/**
 * Parameters of the refinement heuristic; see [`amelump_auto_config_default`].
 */
typedef struct AmelumpAutoConfig {
  uint32_t c0;
  double r;
  double eps;
  size_t max_iterations;
  bool approximate;
} AmelumpAutoConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Valid until the
 * next call into the library on the same thread.
 */
const char *amelump_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *amelump_version(void);

/**
 * Parses and validates a model from a JSON document.
 *
 * # Safety
 * `json` must be a valid NUL-terminated string and `out` a writable pointer.
 */
enum AmelumpStatus amelump_model_from_json(const char *json, struct AmelumpModel **out);

/**
 * Loads and validates a model file.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string and `out` a writable pointer.
 */
enum AmelumpStatus amelump_model_load(const char *path, struct AmelumpModel **out);

/**
 * # Safety
 * `model` must be null or a handle from this library not yet freed.
 */
void amelump_model_free(struct AmelumpModel *model);

/**
 * Number of node states, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t amelump_model_num_states(const struct AmelumpModel *model);

/**
 * Writes the name of state `index` into `buf` (NUL-terminated). `needed`
 * receives the required size including the terminator.
 *
 * # Safety
 * `model` must be a live handle; `buf` must hold `len` bytes or be null with
 * `len == 0`; `needed` may be null.
 */
enum AmelumpStatus amelump_model_state_name(const struct AmelumpModel *model,
                                            size_t index,
                                            char *buf,
                                            size_t len,
                                            size_t *needed);

/**
 * Integrates the full system.
 *
 * # Safety
 * `model` must be a live handle and `out` a writable pointer.
 */
enum AmelumpStatus amelump_solve_full(const struct AmelumpModel *model,
                                      struct AmelumpTrajectory **out);

/**
 * Integrates the lumped system with `degree_intervals` degree groups and `p`
 * cells per simplex coordinate. `num_clusters` may be null.
 *
 * # Safety
 * `model` must be a live handle, `out` writable, `num_clusters` null or writable.
 */
enum AmelumpStatus amelump_solve_lumped(const struct AmelumpModel *model,
                                        size_t degree_intervals,
                                        uint32_t p,
                                        bool approximate,
                                        struct AmelumpTrajectory **out,
                                        size_t *num_clusters);

struct AmelumpAutoConfig amelump_auto_config_default(void);

/**
 * Runs the refinement heuristic. `iterations` and `num_clusters` (of the
 * returned solution) may be null.
 *
 * # Safety
 * `model` and `config` must be valid; `out` writable; the counters null or writable.
 */
enum AmelumpStatus amelump_auto_lump(const struct AmelumpModel *model,
                                     const struct AmelumpAutoConfig *config,
                                     struct AmelumpTrajectory **out,
                                     size_t *iterations,
                                     size_t *num_clusters);

/**
 * Mean of `runs` Gillespie runs on fresh `nodes`-node networks.
 *
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum AmelumpStatus amelump_simulate(const struct AmelumpModel *model,
                                    size_t nodes,
                                    size_t runs,
                                    uint64_t seed,
                                    struct AmelumpTrajectory **out);

/**
 * # Safety
 * `traj` must be null or a handle from this library not yet freed.
 */
void amelump_trajectory_free(struct AmelumpTrajectory *traj);

/**
 * Number of time points, or 0 for a null handle.
 *
 * # Safety
 * `traj` must be null or a live handle.
 */
size_t amelump_trajectory_len(const struct AmelumpTrajectory *traj);

/**
 * Number of states per time point, or 0 for a null handle.
 *
 * # Safety
 * `traj` must be null or a live handle.
 */
size_t amelump_trajectory_num_states(const struct AmelumpTrajectory *traj);

/**
 * Copies the time grid into `buf`, which must hold `len` time points.
 *
 * # Safety
 * `traj` must be a live handle and `buf` must hold `len` doubles.
 */
enum AmelumpStatus amelump_trajectory_times(const struct AmelumpTrajectory *traj,
                                            double *buf,
                                            size_t len);

/**
 * Copies the fractions row-major (`time × state`) into `buf`.
 *
 * # Safety
 * `traj` must be a live handle and `buf` must hold `len` doubles.
 */
enum AmelumpStatus amelump_trajectory_values(const struct AmelumpTrajectory *traj,
                                             double *buf,
                                             size_t len);

/**
 * Maximal Euclidean distance over time between two trajectories on the same grid.
 *
 * # Safety
 * Both handles must be live and `out` writable.
 */
enum AmelumpStatus amelump_trajectory_distance(const struct AmelumpTrajectory *a,
                                               const struct AmelumpTrajectory *b,
                                               double *out);

/**
 * Writes the trajectory as CSV to `path`.
 *
 * # Safety
 * `traj` must be a live handle and `path` a NUL-terminated string.
 */
enum AmelumpStatus amelump_trajectory_write_csv(const struct AmelumpTrajectory *traj,
                                                const char *path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AMELUMP_H */
