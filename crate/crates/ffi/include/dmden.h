/* C interface for the dmden denoising library. */

#ifndef DMDEN_H
#define DMDEN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

#define DMDEN_OK 0

#define DMDEN_ERR_PARAM 2

#define DMDEN_ERR_NUMERIC 3

#define DMDEN_ERR_IO 4

#define DMDEN_ERR_NULL 5

/**
 * Opaque denoiser handle (oracle or loaded network).
 */
typedef struct DmdenDenoiser DmdenDenoiser;

/**
 * Opaque Gaussian-mixture handle.
 */
typedef struct DmdenGmm DmdenGmm;

/**
 * Opaque noise schedule handle.
 */
typedef struct DmdenSchedule DmdenSchedule;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent failure on this thread, or NULL.
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *dmden_last_error(void);

/**
 * Build a linear schedule with inclusive endpoints.
 *
 * # Safety
 * `out` must be null or point to writable storage for one pointer.
 */
int32_t dmden_schedule_linear(uintptr_t t_steps,
                              double beta1,
                              double beta_t,
                              double gamma,
                              struct DmdenSchedule **out);

/**
 * # Safety
 * `s` must be a pointer returned by a schedule constructor, not yet freed.
 */
void dmden_schedule_free(struct DmdenSchedule *s);

/**
 * Number of steps T.
 *
 * # Safety
 * `s` must be a live schedule handle.
 */
int32_t dmden_schedule_len(const struct DmdenSchedule *s, uintptr_t *out);

/**
 * Per-step SNR in dB at 1-based step t.
 *
 * # Safety
 * `s` must be a live schedule handle.
 */
int32_t dmden_schedule_snr_db(const struct DmdenSchedule *s, uintptr_t t, double *out);

/**
 * Step whose SNR best matches an observation noise variance.
 *
 * # Safety
 * `s` must be a live schedule handle.
 */
int32_t dmden_schedule_match_timestep(const struct DmdenSchedule *s, double eta_sq, uintptr_t *out);

/**
 * Stepwise Lipschitz constant L_t (t >= 2).
 *
 * # Safety
 * `s` must be a live schedule handle.
 */
int32_t dmden_lipschitz_step(const struct DmdenSchedule *s, uintptr_t t, double *out);

/**
 * Composed Lipschitz constant over steps tau1..tau2.
 *
 * # Safety
 * `s` must be a live schedule handle.
 */
int32_t dmden_lipschitz_range(const struct DmdenSchedule *s,
                              uintptr_t tau1,
                              uintptr_t tau2,
                              double *out);

/**
 * Random mixture with `n` dimensions and `k` components; optionally
 * normalized to zero mean and per-entry unit energy.
 *
 * # Safety
 * `out` must be null or point to writable storage for one pointer.
 */
int32_t dmden_gmm_random(uintptr_t n,
                         uintptr_t k,
                         uint64_t seed,
                         bool normalize,
                         struct DmdenGmm **out);

/**
 * Load a mixture from a `DMDEN-GMM v1` text file.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string.
 */
int32_t dmden_gmm_load(const char *path, struct DmdenGmm **out);

/**
 * Save a mixture to the `DMDEN-GMM v1` text format.
 *
 * # Safety
 * `g` must be a live mixture handle; `path` a valid NUL-terminated string.
 */
int32_t dmden_gmm_save(const struct DmdenGmm *g, const char *path);

/**
 * # Safety
 * `g` must be a pointer returned by a mixture constructor, not yet freed.
 */
void dmden_gmm_free(struct DmdenGmm *g);

/**
 * Dimension and component count.
 *
 * # Safety
 * `g` must be a live mixture handle.
 */
int32_t dmden_gmm_shape(const struct DmdenGmm *g, uintptr_t *n_out, uintptr_t *k_out);

/**
 * Conditional mean E[x|y] under y = x + n, n ~ N(0, eta_sq I). `y` and
 * `x_hat_out` are length-`len` arrays; `len` must equal the mixture
 * dimension.
 *
 * # Safety
 * `g` must be a live mixture handle; `y` and `x_hat_out` must point to
 * `len` readable / writable doubles.
 */
int32_t dmden_gmm_cme(const struct DmdenGmm *g,
                      const double *y,
                      uintptr_t len,
                      double eta_sq,
                      double *x_hat_out);

/**
 * Exact-conditional-mean denoiser over a mixture prior.
 *
 * # Safety
 * `g` and `s` must be live handles.
 */
int32_t dmden_denoiser_oracle(const struct DmdenGmm *g,
                              const struct DmdenSchedule *s,
                              struct DmdenDenoiser **out);

/**
 * Denoiser from a `DMDEN-MLP v1` checkpoint.
 *
 * # Safety
 * `s` must be a live schedule handle; `path` a valid NUL-terminated string.
 */
int32_t dmden_denoiser_from_checkpoint(const char *path,
                                       const struct DmdenSchedule *s,
                                       struct DmdenDenoiser **out);

/**
 * # Safety
 * `d` must be a pointer returned by a denoiser constructor, not yet freed.
 */
void dmden_denoiser_free(struct DmdenDenoiser *d);

/**
 * Deterministic denoising of one observation: writes the estimate of x_0
 * into `x_hat_out` and the matched step into `t_hat_out` (may be NULL).
 *
 * # Safety
 * `d` must be a live denoiser handle; `y` and `x_hat_out` must point to
 * `len` readable / writable doubles.
 */
int32_t dmden_denoise(const struct DmdenDenoiser *d,
                      const double *y,
                      uintptr_t len,
                      double eta_sq,
                      double *x_hat_out,
                      uintptr_t *t_hat_out);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* DMDEN_H */
