/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef SPINFP_H
#define SPINFP_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/*
 Maximum number of values in an [`FpEstimate`].
 */
#define FP_MAX_PARAMETERS 5

/*
 Result code of every call.
 */
typedef enum FpStatus {
  FP_STATUS_OK = 0,
  FP_STATUS_NULL_POINTER = 1,
  FP_STATUS_INVALID_INPUT = 2,
  FP_STATUS_DIMENSION = 3,
  FP_STATUS_DEGENERATE_SIGNAL = 4,
  FP_STATUS_STALE_DICTIONARY = 5,
  FP_STATUS_PARSE = 6,
  FP_STATUS_IO = 7,
  FP_STATUS_TOO_MANY_FAILURES = 8,
  FP_STATUS_BUFFER_TOO_SMALL = 9,
  FP_STATUS_PANIC = 10,
} FpStatus;

/*
 Relaxation and offset parameters that can vary across a dictionary.
 */
typedef enum FpParameter {
  FP_PARAMETER_T1 = 0,
  FP_PARAMETER_T2 = 1,
  FP_PARAMETER_FWHM = 2,
  FP_PARAMETER_CENTER = 3,
  FP_PARAMETER_RF_SCALE = 4,
} FpParameter;

/*
 Dictionary handle.
 */
typedef struct FpDictionary FpDictionary;

/*
 Pulse sequence handle.
 */
typedef struct FpSequence FpSequence;

/*
 Ensemble template. `fwhm_rad_per_s == 0` selects a single isochromat at
 `offset_rad_per_s`; a positive width selects a Lorentzian centered there,
 discretized on `n_points` offsets (0 means the default of 101).
 */
typedef struct FpEnsembleSpec {
  double t1_s;
  double t2_s;
  double rf_scale;
  double offset_rad_per_s;
  double fwhm_rad_per_s;
  size_t n_points;
} FpEnsembleSpec;

/*
 Nearest dictionary entry for a signal.
 */
typedef struct FpRecognition {
  size_t index;
  double residual;
  /*
   Another entry is equally close; the lowest index was returned.
   */
  bool tie;
} FpRecognition;

/*
 Matching followed by refinement. `values[i]` is the refined value of the
 i-th free parameter passed to [`fp_estimate`].
 */
typedef struct FpEstimate {
  size_t matched_index;
  double start_residual;
  double final_residual;
  size_t iterations_used;
  bool converged;
  size_t n_values;
  double values[FP_MAX_PARAMETERS];
} FpEstimate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the last failed call on this thread, or NULL after a
 successful call. Owned by the library.
 */
const char *fp_last_error_message(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *fp_version(void);

/*
 Sequence of `n_pulses` δ-pulses with areas `theta_x[k]`, `theta_y[k]` in
 radians, separated by `delay_t` seconds. `theta_y` may be NULL for x-only.

 # Safety
 Arrays must hold `n_pulses` doubles; `out` must be writable.
 */
enum FpStatus fp_sequence_new(const double *theta_x,
                              const double *theta_y,
                              size_t n_pulses,
                              double delay_t,
                              struct FpSequence **out);

/*
 Seeded random field with areas uniform in `[-bound, bound]` per axis.

 # Safety
 `out` must be writable.
 */
enum FpStatus fp_sequence_random(size_t n_pulses,
                                 double bound,
                                 double delay_t,
                                 uint64_t seed,
                                 struct FpSequence **out);

/*
 # Safety
 `seq` must be a live handle and `out` writable.
 */
enum FpStatus fp_sequence_len(const struct FpSequence *seq, size_t *out);

/*
 Copies the pulse areas into `theta_x` and `theta_y`, each holding `len`.

 # Safety
 `seq` live; both arrays writable for `len` doubles.
 */
enum FpStatus fp_sequence_areas(const struct FpSequence *seq,
                                double *theta_x,
                                double *theta_y,
                                size_t len);

/*
 Reads a sequence written by the `spinfp` tool or [`fp_sequence_save`].

 # Safety
 `path` NUL-terminated; `out` writable.
 */
enum FpStatus fp_sequence_load(const char *path, struct FpSequence **out);

/*
 # Safety
 `seq` live; `path` NUL-terminated.
 */
enum FpStatus fp_sequence_save(const struct FpSequence *seq, const char *path);

/*
 # Safety
 `seq` must be NULL or a handle not yet freed.
 */
void fp_sequence_free(struct FpSequence *seq);

/*
 Noiseless fingerprint of one ensemble under `seq`, written to `out` as
 `2 * n_pulses` doubles.

 # Safety
 `spec`, `seq` valid; `out` writable for `out_len` doubles.
 */
enum FpStatus fp_simulate(const struct FpEnsembleSpec *spec,
                          const struct FpSequence *seq,
                          double *out,
                          size_t out_len);

/*
 Normalized squared distance between two fingerprints of `n_samples` each.

 # Safety
 `f`, `g` readable for `2 * n_samples` doubles; `out` writable.
 */
enum FpStatus fp_distance(const double *f, const double *g, size_t n_samples, double *out);

/*
 Dictionary of `n_points` entries. Entry `i` sets parameter `params[j]` to
 `values[i * n_params + j]` on top of `spec`.

 # Safety
 Arrays sized as described; `spec`, `seq` valid; `out` writable.
 */
enum FpStatus fp_dictionary_build(const struct FpEnsembleSpec *spec,
                                  const struct FpSequence *seq,
                                  const enum FpParameter *params,
                                  size_t n_params,
                                  const double *values,
                                  size_t n_points,
                                  struct FpDictionary **out);

/*
 Loads a dictionary saved for the field `seq`. Fails with
 `FP_STATUS_STALE_DICTIONARY` if it was built for a different field.

 # Safety
 `path` NUL-terminated; `seq` valid; `out` writable.
 */
enum FpStatus fp_dictionary_load(const char *path,
                                 const struct FpSequence *seq,
                                 struct FpDictionary **out);

/*
 # Safety
 `dict` valid; `path` NUL-terminated.
 */
enum FpStatus fp_dictionary_save(const struct FpDictionary *dict, const char *path);

/*
 # Safety
 `dict` valid; `out` writable.
 */
enum FpStatus fp_dictionary_len(const struct FpDictionary *dict, size_t *out);

/*
 Copies entry `index`'s fingerprint into `out`.

 # Safety
 `dict` valid; `out` writable for `out_len` doubles.
 */
enum FpStatus fp_dictionary_entry(const struct FpDictionary *dict,
                                  size_t index,
                                  double *out,
                                  size_t out_len);

/*
 Figure of merit of the dictionary with unit weights.

 # Safety
 `dict` valid; `out` writable.
 */
enum FpStatus fp_dictionary_figure_of_merit(const struct FpDictionary *dict, double *out);

/*
 Nearest entry to a measured signal of `n_samples` samples.

 # Safety
 `dict` valid; `signal` readable for `2 * n_samples`; `out` writable.
 */
enum FpStatus fp_dictionary_recognize(const struct FpDictionary *dict,
                                      const double *signal,
                                      size_t n_samples,
                                      struct FpRecognition *out);

/*
 # Safety
 `dict` must be NULL or a handle not yet freed.
 */
void fp_dictionary_free(struct FpDictionary *dict);

/*
 Matches `signal` against `dict` and refines the `n_free` parameters in
 `free` with default fit settings.

 # Safety
 `dict` valid; `signal` readable for `2 * n_samples`; `free` for `n_free`;
 `out` writable.
 */
enum FpStatus fp_estimate(const struct FpDictionary *dict,
                          const double *signal,
                          size_t n_samples,
                          const enum FpParameter *free,
                          size_t n_free,
                          struct FpEstimate *out);

/*
 Optimizes an `n_pulses` field for the systems described as in
 [`fp_dictionary_build`], keeping the best of the default multi-starts.
 `max_iterations == 0` keeps the default. Writes the field and its figure of
 merit.

 # Safety
 As for [`fp_dictionary_build`]; `out` and `out_c_n` writable.
 */
enum FpStatus fp_optimize(const struct FpEnsembleSpec *spec,
                          const enum FpParameter *params,
                          size_t n_params,
                          const double *values,
                          size_t n_points,
                          size_t n_pulses,
                          double delay_t,
                          size_t max_iterations,
                          uint64_t seed,
                          struct FpSequence **out,
                          double *out_c_n);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPINFP_H */
