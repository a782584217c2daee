#ifndef FRACDIFF_H
#define FRACDIFF_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FdStatus {
  FD_STATUS_OK = 0,
  FD_STATUS_NULL_POINTER = 1,
  FD_STATUS_INVALID_ARGUMENT = 2,
  FD_STATUS_CONFIG = 3,
  FD_STATUS_NOT_CONVERGED = 4,
  FD_STATUS_RESONANCE = 5,
  FD_STATUS_OBSERVATION = 6,
  FD_STATUS_BUFFER_TOO_SMALL = 7,
  FD_STATUS_IO = 8,
  FD_STATUS_PANIC = 9,
} FdStatus;

typedef enum FdMode {
  FD_MODE_FORWARD = 0,
  FD_MODE_INVERSE = 1,
  FD_MODE_REFINE = 2,
  FD_MODE_MLCHECK = 3,
} FdMode;

/**
 * Parsed experiment configuration.
 */
typedef struct FdConfig FdConfig;

/**
 * Converged forward solution.
 */
typedef struct FdForward FdForward;

/**
 * Recovered coefficient.
 */
typedef struct FdRecovery FdRecovery;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Length in bytes of the last error message on this thread, without the terminator.
 */
size_t fd_last_error_length(void);

/**
 * Copy the last error message into `buf` as a NUL-terminated string, truncating to
 * `cap - 1` bytes. Returns the number of bytes written before the terminator.
 *
 * # Safety
 * `buf` must be null or point to at least `cap` writable bytes.
 */
size_t fd_last_error_message(char *buf, size_t cap);

/**
 * `E_{alpha,sigma}(z)` for real `z`.
 *
 * # Safety
 * `out` must be null or point to a writable `double`.
 */
enum FdStatus fd_mittag_leffler(double alpha, double sigma, double z, double *out);

/**
 * `t^(alpha-1) E_{alpha,alpha}(-lambda t^alpha)` for `t > 0`.
 *
 * # Safety
 * `out` must be null or point to a writable `double`.
 */
enum FdStatus fd_ml_kernel(double alpha, double lambda, double t, double *out);

/**
 * Load a TOML configuration for `mode`. Relative paths inside it resolve against
 * the file's directory.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must point to a writable handle slot.
 */
enum FdStatus fd_config_load(const char *path, enum FdMode mode, struct FdConfig **out);

/**
 * # Safety
 * `cfg` must be null or a handle from [`fd_config_load`] that has not been freed.
 */
void fd_config_free(struct FdConfig *cfg);

/**
 * Run the configured mode and write its artifacts to the configured output directory.
 * `exit_status` receives 0, or 3 when a solver stopped without converging and a
 * partial report was written.
 *
 * # Safety
 * `cfg` must be a live handle; `exit_status` must be null or point to a writable `int`.
 */
enum FdStatus fd_run(const struct FdConfig *cfg, int32_t *exit_status);

/**
 * Solve the forward problem of a forward-mode configuration.
 *
 * # Safety
 * `cfg` must be a live handle; `out` must point to a writable handle slot.
 */
enum FdStatus fd_forward_solve(const struct FdConfig *cfg, struct FdForward **out);

/**
 * # Safety
 * `sol` must be null or a handle from [`fd_forward_solve`] that has not been freed.
 */
void fd_forward_free(struct FdForward *sol);

/**
 * Number of time nodes, or 0 for a null handle.
 *
 * # Safety
 * `sol` must be null or a live handle.
 */
size_t fd_forward_nodes(const struct FdForward *sol);

/**
 * Number of retained modes, or 0 for a null handle.
 *
 * # Safety
 * `sol` must be null or a live handle.
 */
size_t fd_forward_modes(const struct FdForward *sol);

/**
 * Picard iterations used, or 0 for a null handle.
 *
 * # Safety
 * `sol` must be null or a live handle.
 */
size_t fd_forward_iterations(const struct FdForward *sol);

/**
 * `||u(T) - kappa u(0) - phi||` of the solution, NaN for a null handle.
 *
 * # Safety
 * `sol` must be null or a live handle.
 */
double fd_forward_nonlocal_residual(const struct FdForward *sol);

/**
 * Copy the time nodes into `buf`.
 *
 * # Safety
 * `sol` must be a live handle; `buf` must point to `len` writable doubles.
 */
enum FdStatus fd_forward_times(const struct FdForward *sol, double *buf, size_t len);

/**
 * Copy the amplitude of mode `m` (1-based) at every node into `buf`.
 *
 * # Safety
 * `sol` must be a live handle; `buf` must point to `len` writable doubles.
 */
enum FdStatus fd_forward_mode(const struct FdForward *sol, size_t m, double *buf, size_t len);

/**
 * Copy `u(t_i, x)` at every node into `buf`.
 *
 * # Safety
 * `sol` must be a live handle; `buf` must point to `len` writable doubles.
 */
enum FdStatus fd_forward_at_point(const struct FdForward *sol, double x, double *buf, size_t len);

/**
 * Recover `k(t)` for an inverse-mode configuration. `observation` is a CSV of `t,h`
 * rows on the configured grid, or null to synthesize the trace from `k_true`.
 *
 * # Safety
 * `cfg` must be a live handle; `observation` must be null or a NUL-terminated string;
 * `out` must point to a writable handle slot.
 */
enum FdStatus fd_inverse_recover(const struct FdConfig *cfg,
                                 const char *observation,
                                 struct FdRecovery **out);

/**
 * # Safety
 * `rec` must be null or a handle from [`fd_inverse_recover`] that has not been freed.
 */
void fd_recovery_free(struct FdRecovery *rec);

/**
 * Number of time nodes, or 0 for a null handle.
 *
 * # Safety
 * `rec` must be null or a live handle.
 */
size_t fd_recovery_nodes(const struct FdRecovery *rec);

/**
 * Outer iterations used, or 0 for a null handle.
 *
 * # Safety
 * `rec` must be null or a live handle.
 */
size_t fd_recovery_iterations(const struct FdRecovery *rec);

/**
 * `sup_t |u(t, x0) - h(t)|`, NaN for a null handle.
 *
 * # Safety
 * `rec` must be null or a live handle.
 */
double fd_recovery_data_residual(const struct FdRecovery *rec);

/**
 * Copy the time nodes into `buf`.
 *
 * # Safety
 * `rec` must be a live handle; `buf` must point to `len` writable doubles.
 */
enum FdStatus fd_recovery_times(const struct FdRecovery *rec, double *buf, size_t len);

/**
 * Copy the recovered coefficient into `buf`.
 *
 * # Safety
 * `rec` must be a live handle; `buf` must point to `len` writable doubles.
 */
enum FdStatus fd_recovery_k(const struct FdRecovery *rec, double *buf, size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FRACDIFF_H */
