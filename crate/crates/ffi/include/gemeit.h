/* Generated by cbindgen from src/lib.rs; do not edit. */

#ifndef GEMEIT_H
#define GEMEIT_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/*
 Result of every fallible call.
 */
typedef enum GemeitStatus {
  GEMEIT_STATUS_OK = 0,
  GEMEIT_STATUS_NULL_POINTER = 1,
  GEMEIT_STATUS_INVALID_UTF8 = 2,
  /*
   Configuration syntax or validation error.
   */
  GEMEIT_STATUS_CONFIG = 3,
  /*
   A parameter, grid, schedule or pulse was rejected.
   */
  GEMEIT_STATUS_INVALID_PARAMETER = 4,
  /*
   The integrator failed (step underflow or non-finite state).
   */
  GEMEIT_STATUS_SOLVER = 5,
  /*
   An analysis stage (fit, fringe, filter design) failed.
   */
  GEMEIT_STATUS_ANALYSIS = 6,
  GEMEIT_STATUS_IO = 7,
  /*
   The requested quantity was not computed for this run.
   */
  GEMEIT_STATUS_UNAVAILABLE = 8,
  GEMEIT_STATUS_BUFFER_TOO_SMALL = 9,
  /*
   A Rust panic was caught at the boundary.
   */
  GEMEIT_STATUS_INTERNAL = 10,
} GemeitStatus;

/*
 Parsed, validated experiment configuration.
 */
typedef struct GemeitConfig GemeitConfig;

/*
 Completed simulation with its analysis summary.
 */
typedef struct GemeitRun GemeitRun;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version as a static NUL-terminated string.
 */
const char *gemeit_version(void);

/*
 Message of the last failed call on this thread ("" after a success).
 Valid until the next gemeit call on the same thread.
 */
const char *gemeit_last_error(void);

/*
 Loads a configuration file (includes resolve relative to it).

 # Safety
 `path` must be a NUL-terminated string; `out` must be writable.
 */
enum GemeitStatus gemeit_config_load(const char *path, struct GemeitConfig **out);

/*
 Parses configuration text; relative includes resolve against the working directory.

 # Safety
 `text` must be a NUL-terminated string; `out` must be writable.
 */
enum GemeitStatus gemeit_config_parse(const char *text, struct GemeitConfig **out);

/*
 Overrides one numeric parameter by dotted name, e.g. "pulse.separation".
 The configuration is unchanged if the new value fails validation.

 # Safety
 `cfg` must come from this library; `name` must be NUL-terminated.
 */
enum GemeitStatus gemeit_config_set(struct GemeitConfig *cfg, const char *name, double value);

/*
 Sets the seed for detector noise and shot phases.

 # Safety
 `cfg` must come from this library.
 */
enum GemeitStatus gemeit_config_set_seed(struct GemeitConfig *cfg, uint64_t seed);

/*
 Sets the directory sweeps write into and disables or enables plots.

 # Safety
 `cfg` must come from this library; `dir` must be NUL-terminated.
 */
enum GemeitStatus gemeit_config_set_output(struct GemeitConfig *cfg, const char *dir, bool plots);

/*
 Releases a configuration; null is ignored.

 # Safety
 `cfg` must come from this library and not be used afterwards.
 */
void gemeit_config_free(struct GemeitConfig *cfg);

/*
 Runs one simulation and its analyses.

 # Safety
 `cfg` must come from this library; `out` must be writable.
 */
enum GemeitStatus gemeit_run(const struct GemeitConfig *cfg, struct GemeitRun **out);

/*
 Releases a run; null is ignored.

 # Safety
 `run` must come from this library and not be used afterwards.
 */
void gemeit_run_free(struct GemeitRun *run);

/*
 Output energy over input energy.

 # Safety
 `run` must come from this library; `value` must be writable.
 */
enum GemeitStatus gemeit_run_efficiency(const struct GemeitRun *run, double *value);

/*
 Fourier-transform fidelity; `Unavailable` if the analysis was off.

 # Safety
 `run` must come from this library; `value` must be writable.
 */
enum GemeitStatus gemeit_run_fidelity(const struct GemeitRun *run, double *value);

/*
 Whether every acceptance check of the run passed.

 # Safety
 `run` must come from this library; `passed` must be writable.
 */
enum GemeitStatus gemeit_run_passed(const struct GemeitRun *run, bool *passed);

/*
 Sample count, start time and spacing (us) of the output envelope.

 # Safety
 `run` must come from this library; the out pointers must be writable.
 */
enum GemeitStatus gemeit_run_output_info(const struct GemeitRun *run,
                                         size_t *len,
                                         double *t0,
                                         double *dt);

/*
 Copies the output envelope into `re` and `im`, each of capacity `cap`.

 # Safety
 `re` and `im` must each point to `cap` writable doubles.
 */
enum GemeitStatus gemeit_run_output(const struct GemeitRun *run,
                                    double *re,
                                    double *im,
                                    size_t cap);

/*
 Run summary as JSON; release with `gemeit_string_free`.

 # Safety
 `run` must come from this library; `out` must be writable.
 */
enum GemeitStatus gemeit_run_summary_json(const struct GemeitRun *run, char **out);

/*
 Writes the run's CSV, JSON and plot artifacts into `dir`.

 # Safety
 `run` and `cfg` must come from this library; `dir` must be NUL-terminated.
 */
enum GemeitStatus gemeit_run_write_artifacts(const struct GemeitRun *run,
                                             const struct GemeitConfig *cfg,
                                             const char *dir);

/*
 Runs the configuration's sweep on `jobs` threads (0 = all cores), writes
 its artifacts to the configured output directory and returns the sweep
 summary as JSON (release with `gemeit_string_free`).

 # Safety
 `cfg` must come from this library; the out pointers must be writable.
 */
enum GemeitStatus gemeit_sweep(const struct GemeitConfig *cfg,
                               size_t jobs,
                               char **json,
                               bool *passed);

/*
 Releases a string returned by this library; null is ignored.

 # Safety
 `s` must come from this library and not be used afterwards.
 */
void gemeit_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GEMEIT_H */
