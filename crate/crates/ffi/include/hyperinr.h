#ifndef HYPERINR_H
#define HYPERINR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum HyperinrStatus {
  HYPERINR_STATUS_OK = 0,
  HYPERINR_STATUS_NULL_ARGUMENT = 1,
  HYPERINR_STATUS_IO = 2,
  HYPERINR_STATUS_FORMAT = 3,
  HYPERINR_STATUS_INVALID_ARGUMENT = 4,
  HYPERINR_STATUS_INPUT_TOO_SHORT = 5,
  HYPERINR_STATUS_DEGENERATE = 6,
  HYPERINR_STATUS_PANIC = 7,
} HyperinrStatus;

/**
 * Opaque INR weight set.
 */
typedef struct HyperinrInr HyperinrInr;

/**
 * Opaque hypernetwork handle.
 */
typedef struct HyperinrModel HyperinrModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *hyperinr_last_error(void);

/**
 * Loads an `HSCK` checkpoint.
 *
 * # Safety
 * `path` must be a nul-terminated string and `out` a valid pointer.
 */
enum HyperinrStatus hyperinr_model_load(const char *path, struct HyperinrModel **out);

/**
 * # Safety
 * `model` must come from [`hyperinr_model_load`] and not be used afterwards.
 */
void hyperinr_model_free(struct HyperinrModel *model);

/**
 * Native sampling rate of the model, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
uint32_t hyperinr_model_sample_rate(const struct HyperinrModel *model);

/**
 * Number of hypernetwork parameters, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t hyperinr_model_param_count(const struct HyperinrModel *model);

/**
 * Predicts INR weights for `len` samples at the model's native rate.
 *
 * # Safety
 * `samples` must point to `len` doubles; `out` must be a valid pointer.
 */
enum HyperinrStatus hyperinr_model_encode(const struct HyperinrModel *model,
                                          const double *samples,
                                          size_t len,
                                          struct HyperinrInr **out);

/**
 * Reads an `HSIR` file.
 *
 * # Safety
 * `path` must be a nul-terminated string and `out` a valid pointer.
 */
enum HyperinrStatus hyperinr_inr_load(const char *path, struct HyperinrInr **out);

/**
 * Writes an `HSIR` file.
 *
 * # Safety
 * `inr` must be a live handle and `path` a nul-terminated string.
 */
enum HyperinrStatus hyperinr_inr_save(const struct HyperinrInr *inr, const char *path);

/**
 * # Safety
 * `inr` must come from this library and not be used afterwards.
 */
void hyperinr_inr_free(struct HyperinrInr *inr);

/**
 * Length of the INR weight vector, or 0 for a null handle.
 *
 * # Safety
 * `inr` must be null or a live handle.
 */
size_t hyperinr_inr_param_count(const struct HyperinrInr *inr);

/**
 * Renders `len` samples on the uniform grid over `[0, 1]` into `out`.
 *
 * # Safety
 * `inr` must be a live handle and `out` must have room for `len` doubles.
 */
enum HyperinrStatus hyperinr_inr_render(const struct HyperinrInr *inr,
                                        uint32_t rate,
                                        double *out,
                                        size_t len);

/**
 * Output length when converting `len` samples between two rates.
 */
size_t hyperinr_resampled_len(size_t len, uint32_t source_rate, uint32_t target_rate);

/**
 * Parameter count of a target network with embedding size `l` and
 * `layers` hidden widths.
 *
 * # Safety
 * `widths` must point to `layers` values and `out` must be valid.
 */
enum HyperinrStatus hyperinr_target_param_count(size_t l,
                                                const size_t *widths,
                                                size_t layers,
                                                size_t *out);

/**
 * Mean squared error.
 *
 * # Safety
 * `x` and `y` must point to `len` doubles; `out` must be valid.
 */
enum HyperinrStatus hyperinr_mse(const double *x,
                                 const double *y,
                                 size_t len,
                                 uint32_t rate,
                                 double *out);

/**
 * Log-spectral distance.
 *
 * # Safety
 * `x` and `y` must point to `len` doubles; `out` must be valid.
 */
enum HyperinrStatus hyperinr_lsd(const double *x,
                                 const double *y,
                                 size_t len,
                                 uint32_t rate,
                                 double *out);

/**
 * Scale-invariant SNR in dB; `+inf` for a perfect estimate.
 *
 * # Safety
 * `x` and `y` must point to `len` doubles; `out` must be valid.
 */
enum HyperinrStatus hyperinr_si_snr(const double *x,
                                    const double *y,
                                    size_t len,
                                    uint32_t rate,
                                    double *out);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* HYPERINR_H */
