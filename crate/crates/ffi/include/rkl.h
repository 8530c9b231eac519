#ifndef RKL_H
#define RKL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Status codes shared by every entry point.
 */
typedef enum RklStatus {
  RKL_STATUS_OK = 0,
  RKL_STATUS_NULL_POINTER = 1,
  RKL_STATUS_INVALID_ARGUMENT = 2,
  RKL_STATUS_NUMERICAL = 3,
  RKL_STATUS_PANIC = 4,
} RklStatus;

/*
 Bergman space of a planar disc or annulus.
 */
typedef struct RklBergman RklBergman;

/*
 Parsed run configuration.
 */
typedef struct RklConfig RklConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failure on this thread; empty after success. Owned by the library.
 */
const char *rkl_last_error(void);

/*
 Bergman space of the disc |z - c| < rho with `n` basis functions.
 */
enum RklStatus rkl_bergman_disc_new(double cx,
                                    double cy,
                                    double rho,
                                    uintptr_t n,
                                    struct RklBergman **out);

/*
 Bergman space of the annulus r_in < |z - c| < r_out with `n` basis functions.
 */
enum RklStatus rkl_bergman_annulus_new(double cx,
                                       double cy,
                                       double r_in,
                                       double r_out,
                                       uintptr_t n,
                                       struct RklBergman **out);

/*
 Diagonal kernel K(z, z).

 # Safety
 `space` must come from a `rkl_bergman_*_new` call and not be freed.
 */
enum RklStatus rkl_bergman_kernel_diag(const struct RklBergman *space,
                                       double x,
                                       double y,
                                       double *out);

/*
 Off-diagonal kernel K(z, w) as real and imaginary parts.

 # Safety
 `space` must be a live handle; `re` and `im` must be writable.
 */
enum RklStatus rkl_bergman_kernel(const struct RklBergman *space,
                                  double zx,
                                  double zy,
                                  double wx,
                                  double wy,
                                  double *re,
                                  double *im);

/*
 Number of basis functions kept after orthonormalization.

 # Safety
 `space` must be a live handle.
 */
enum RklStatus rkl_bergman_dim(const struct RklBergman *space, uintptr_t *out);

/*
 # Safety
 `space` must be null or a handle not yet freed.
 */
void rkl_bergman_free(struct RklBergman *space);

/*
 Parses `key = value` configuration text.

 # Safety
 `text` must be a NUL-terminated string.
 */
enum RklStatus rkl_config_parse(const char *config, struct RklConfig **out);

/*
 Overrides one key; the configuration is revalidated.

 # Safety
 `config` must be a live handle; `key` and `value` NUL-terminated strings.
 */
enum RklStatus rkl_config_set(struct RklConfig *config, const char *key, const char *value);

/*
 Runs the command and returns the JSON report. Nothing is written to disk.
 Free the string with [`rkl_string_free`].

 # Safety
 `config` must be a live handle.
 */
enum RklStatus rkl_execute_json(const struct RklConfig *config, char **out);

/*
 Runs the command like the `rkl` binary, writing JSON and CSV outputs; stores its exit code.

 # Safety
 `config` must be a live handle.
 */
enum RklStatus rkl_run(const struct RklConfig *config, int32_t *exit_code);

/*
 # Safety
 `config` must be null or a handle not yet freed.
 */
void rkl_config_free(struct RklConfig *config);

/*
 # Safety
 `s` must be null or a string returned by this library.
 */
void rkl_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RKL_H */
