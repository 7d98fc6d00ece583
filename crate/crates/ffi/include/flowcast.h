/*
 * flowcast C interface.
 *
 * Load a trained forecasting checkpoint, inspect its window geometry, and
 * produce forecasts in the original units of the training series.
 */

#ifndef FLOWCAST_H
#define FLOWCAST_H

/* Generated by cbindgen from the flowcast-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of a fallible call.
 */
typedef enum FcStatus {
  /**
   * The call succeeded.
   */
  FC_STATUS_OK = 0,
  /**
   * A required pointer argument was NULL.
   */
  FC_STATUS_NULL_ARGUMENT = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  FC_STATUS_UTF8 = 2,
  /**
   * The checkpoint could not be read or failed validation.
   */
  FC_STATUS_LOAD = 3,
  /**
   * A buffer length did not match the model's window geometry.
   */
  FC_STATUS_LENGTH = 4,
  /**
   * A timestamp was outside the representable calendar range.
   */
  FC_STATUS_TIMESTAMP = 5,
  /**
   * An input value was not finite, or the forecast diverged.
   */
  FC_STATUS_NUMERIC = 6,
  /**
   * An internal invariant failed; the handle is still valid.
   */
  FC_STATUS_INTERNAL = 7,
} FcStatus;

/**
 * An opaque trained model handle.
 */
typedef struct FcModel FcModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Returns the message for the most recent failure on the calling thread, as
 * a NUL-terminated string. The pointer stays valid until the next failing
 * call on the same thread. Before any failure it is the empty string.
 */
const char *fc_last_error(void);

/**
 * Returns the library version as a static NUL-terminated string.
 */
const char *fc_version(void);

/**
 * Loads a trained checkpoint file into a new model handle.
 *
 * On success writes the handle to `*out_model` and returns `FC_STATUS_OK`.
 * On failure `*out_model` is untouched and the status tells the class of
 * problem; `fc_last_error` has the details.
 *
 * # Safety
 * `path` must point to a NUL-terminated string and `out_model` to writable
 * storage for one pointer; both must stay valid for the duration of the
 * call.
 */
enum FcStatus fc_model_load(const char *path, struct FcModel **out_model);

/**
 * Releases a handle returned by `fc_model_load`. NULL is ignored.
 *
 * # Safety
 * `model` must be NULL or a pointer obtained from `fc_model_load` that has
 * not been freed already; it must not be used afterwards.
 */
void fc_model_free(struct FcModel *model);

/**
 * Number of history steps one forecast consumes. Returns 0 for NULL.
 *
 * # Safety
 * `model` must be NULL or a live handle from `fc_model_load`.
 */
size_t fc_input_len(const struct FcModel *model);

/**
 * Number of future steps one forecast produces. Returns 0 for NULL.
 *
 * # Safety
 * `model` must be NULL or a live handle from `fc_model_load`.
 */
size_t fc_horizon(const struct FcModel *model);

/**
 * Forecasts the next `out_len` values from one history window.
 *
 * `counts` holds `len` observed values in original units and `timestamps`
 * the matching per-step times as Unix seconds (interpreted as civil time,
 * the same convention as the training CSV). `len` must equal
 * `fc_input_len`, `out_len` must equal `fc_horizon`, and on success `out`
 * receives the forecast in original units.
 *
 * # Safety
 * `model` must be a live handle; `counts` and `timestamps` must point to
 * `len` readable elements each; `out` must point to `out_len` writable
 * elements. Buffers must not overlap.
 */
enum FcStatus fc_forecast(const struct FcModel *model,
                          const double *counts,
                          const int64_t *timestamps,
                          size_t len,
                          double *out,
                          size_t out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FLOWCAST_H */
