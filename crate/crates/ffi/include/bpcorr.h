#ifndef BPCORR_H
#define BPCORR_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/*
 Result codes shared by all functions.
 */
typedef enum BpcorrStatus {
  BPCORR_STATUS_OK = 0,
  BPCORR_STATUS_NULL_POINTER = 1,
  BPCORR_STATUS_INVALID_ARGUMENT = 2,
  BPCORR_STATUS_INSUFFICIENT_DATA = 3,
  BPCORR_STATUS_INVALID_COVARIANCE = 4,
  BPCORR_STATUS_PARSE_ERROR = 5,
  BPCORR_STATUS_BUFFER_TOO_SMALL = 6,
  BPCORR_STATUS_CUFF_TOO_LOW = 7,
  BPCORR_STATUS_NO_INTERSECTION = 8,
  BPCORR_STATUS_DBP_UNREACHABLE = 9,
  BPCORR_STATUS_INSUFFICIENT_CROSSINGS = 10,
  BPCORR_STATUS_PANIC = 99,
} BpcorrStatus;

/*
 Opaque measurement-noise model.
 */
typedef struct BpcorrNoiseModel BpcorrNoiseModel;

/*
 One (SBP, DBP) pair in mmHg.
 */
typedef struct BpcorrReading {
  double sbp;
  double dbp;
} BpcorrReading;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Human-readable message for the last failed call on this thread. Empty
 after a success. Valid until the next call on the same thread.
 */
const char *bpcorr_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *bpcorr_version(void);

/*
 Creates a model with mean `(mu_sbp, mu_dbp)`, SDs and correlation `rho`.

 # Safety
 `out` must be a valid pointer to writable storage for one handle.
 */
enum BpcorrStatus bpcorr_noise_model_from_moments(double mu_sbp,
                                                  double mu_dbp,
                                                  double sd_sbp,
                                                  double sd_dbp,
                                                  double rho,
                                                  struct BpcorrNoiseModel **out);

/*
 Parses a noise model from its JSON form.

 # Safety
 `json` must be a NUL-terminated string; `out` must be writable.
 */
enum BpcorrStatus bpcorr_noise_model_from_json(const char *json, struct BpcorrNoiseModel **out);

/*
 Fits a model from `n` (measured, truth) pairs; needs `n >= 2`.

 # Safety
 `measured` and `truth` must each point to `n` readings; `out` must be writable.
 */
enum BpcorrStatus bpcorr_noise_model_fit(const struct BpcorrReading *measured,
                                         const struct BpcorrReading *truth,
                                         size_t n,
                                         struct BpcorrNoiseModel **out);

/*
 Copies the mean into `mu[0..2]` and the row-major covariance into `cov[0..4]`.
 Either output may be null.

 # Safety
 `model` must be a live handle; non-null outputs must be writable for 2 and 4 doubles.
 */
enum BpcorrStatus bpcorr_noise_model_params(const struct BpcorrNoiseModel *model,
                                            double *mu,
                                            double *cov);

/*
 Releases a handle. Null is ignored.

 # Safety
 `model` must be null or a handle not yet freed.
 */
void bpcorr_noise_model_free(struct BpcorrNoiseModel *model);

/*
 Mean of `n` repeated readings.

 # Safety
 `readings` must point to `n` readings; `out` must be writable.
 */
enum BpcorrStatus bpcorr_ls_estimate(const struct BpcorrReading *readings,
                                     size_t n,
                                     struct BpcorrReading *out);

/*
 Mean of `n` repeated readings minus the model's mean error.

 # Safety
 `readings` must point to `n` readings, `model` must be live and `out` writable.
 */
enum BpcorrStatus bpcorr_ml_estimate(const struct BpcorrReading *readings,
                                     size_t n,
                                     const struct BpcorrNoiseModel *model,
                                     struct BpcorrReading *out);

/*
 Simulated cuff reading of `n` pressure samples at `fs` Hz under a linear
 deflation from `initial_pressure` at `deflation_rate` mmHg/s.

 # Safety
 `samples` must point to `n` doubles; `out` must be writable.
 */
enum BpcorrStatus bpcorr_simulate_reading(const double *samples,
                                          size_t n,
                                          double fs,
                                          double initial_pressure,
                                          double deflation_rate,
                                          struct BpcorrReading *out);

/*
 Decodes a packed 12-bit (format 212) stream into raw ADC values. Pass a
 null `out` with `out_cap == 0` to query the sample count via `out_len`.

 # Safety
 `bytes` must point to `len` bytes, `out` to `out_cap` writable ints, `out_len` writable.
 */
enum BpcorrStatus bpcorr_decode_format212(const uint8_t *bytes,
                                          size_t len,
                                          int32_t *out,
                                          size_t out_cap,
                                          size_t *out_len);

/*
 Decodes little-endian 16-bit (format 16) samples; same buffer protocol
 as [`bpcorr_decode_format212`].

 # Safety
 As for [`bpcorr_decode_format212`].
 */
enum BpcorrStatus bpcorr_decode_format16(const uint8_t *bytes,
                                         size_t len,
                                         int32_t *out,
                                         size_t out_cap,
                                         size_t *out_len);

/*
 Sets `*out` to whether the samples contain a flat run of at least 0.5 s.

 # Safety
 `samples` must point to `n` doubles; `out` must be writable.
 */
enum BpcorrStatus bpcorr_detect_saturation(const double *samples, size_t n, double fs, bool *out);

/*
 Pulse pressure and mean arterial pressure of one reading.

 # Safety
 `pp` and `map` must be writable.
 */
enum BpcorrStatus bpcorr_pp_map(struct BpcorrReading reading, double *pp, double *map);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BPCORR_H */
