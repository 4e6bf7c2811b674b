#ifndef MCINFONCE_H
#define MCINFONCE_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum McStatus {
  MC_STATUS_OK = 0,
  MC_STATUS_NULL_POINTER = 1,
  /**
   * Invalid argument, configuration or dimension.
   */
  MC_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Numeric failure: degenerate normalization, sampler caps, non-finite loss.
   */
  MC_STATUS_NUMERIC = 3,
  MC_STATUS_IO = 4,
  MC_STATUS_CHECKPOINT = 5,
  MC_STATUS_PANIC = 6,
} McStatus;

/**
 * Posterior family codes accepted by [`mcinfonce_process_new`].
 */
typedef enum McFamily {
  MC_FAMILY_VMF = 0,
  MC_FAMILY_GAUSSIAN = 1,
  MC_FAMILY_LAPLACE = 2,
  MC_FAMILY_DIRAC = 3,
} McFamily;

/**
 * Opaque trained encoder.
 */
typedef struct McEncoder McEncoder;

/**
 * Opaque generative process.
 */
typedef struct McProcess McProcess;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL
 * terminated, truncated to `len`). Returns the full message length.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t mcinfonce_last_error(char *buf, size_t len);

/**
 * Builds a generative process. `out` receives a handle to free with
 * [`mcinfonce_process_free`].
 *
 * # Safety
 * `out` must be null or a valid pointer.
 */
enum McStatus mcinfonce_process_new(size_t dim,
                                    double kappa_min,
                                    double kappa_max,
                                    enum McFamily family,
                                    double kappa_pos,
                                    uint64_t seed,
                                    struct McProcess **out);

/**
 * # Safety
 * `p` must be null or a handle from [`mcinfonce_process_new`] not yet freed.
 */
void mcinfonce_process_free(struct McProcess *p);

/**
 * Input dimension of the process, 0 for a null handle.
 *
 * # Safety
 * `p` must be null or a live handle.
 */
size_t mcinfonce_process_dim(const struct McProcess *p);

/**
 * Loads an encoder checkpoint written by the CLI's `train` command.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` a valid pointer.
 */
enum McStatus mcinfonce_encoder_load(const char *path, struct McEncoder **out);

/**
 * # Safety
 * `e` must be null or a handle from [`mcinfonce_encoder_load`] not yet freed.
 */
void mcinfonce_encoder_free(struct McEncoder *e);

/**
 * Input and latent dimensions of the encoder.
 *
 * # Safety
 * `e` must be a live handle; `d_in`, `d_enc` valid pointers.
 */
enum McStatus mcinfonce_encoder_dims(const struct McEncoder *e, size_t *d_in, size_t *d_enc);

/**
 * True posteriors for `n` row-major observations. Writes `n·dim` mean
 * coordinates to `mu_out` and `n` concentrations (`inf` for Dirac) to
 * `kappa_out`.
 *
 * # Safety
 * `xs` must hold `n·dim` values, `mu_out` room for `n·dim`, `kappa_out` for `n`.
 */
enum McStatus mcinfonce_process_posterior(const struct McProcess *p,
                                          const double *xs,
                                          size_t n,
                                          double *mu_out,
                                          double *kappa_out);

/**
 * Predicted posteriors; as [`mcinfonce_process_posterior`] with `d_in`
 * inputs and `d_enc` mean coordinates per row.
 *
 * # Safety
 * `xs` must hold `n·d_in` values, `mu_out` room for `n·d_enc`, `kappa_out` for `n`.
 */
enum McStatus mcinfonce_encoder_posterior(const struct McEncoder *e,
                                          const double *xs,
                                          size_t n,
                                          double *mu_out,
                                          double *kappa_out);

/**
 * Dot-product threshold of the level-`p` credible interval of a vMF with
 * concentration `kappa` on the sphere in `dim` dimensions.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum McStatus mcinfonce_ci_threshold(double kappa, double p, size_t dim, double *out);

/**
 * Log of the marginal match probability `h` between two posteriors with
 * mean dot product `rho` and concentrations `kappa`, `kappa_plus`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum McStatus mcinfonce_log_marginal_h(double rho,
                                       double kappa,
                                       double kappa_plus,
                                       double kappa_pos,
                                       size_t dim,
                                       double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MCINFONCE_H */
