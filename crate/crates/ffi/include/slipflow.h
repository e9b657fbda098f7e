#ifndef SLIPFLOW_H
#define SLIPFLOW_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

enum SlipflowStatus
#if defined(__cplusplus) || __STDC_VERSION__ >= 202311L
  : int32_t
#endif // defined(__cplusplus) || __STDC_VERSION__ >= 202311L
 {
  SLIPFLOW_STATUS_OK = 0,
  SLIPFLOW_STATUS_INVALID_CONFIG = 1,
  SLIPFLOW_STATUS_DIMENSION = 2,
  SLIPFLOW_STATUS_RESOLUTION = 3,
  SLIPFLOW_STATUS_INCOMPATIBLE = 4,
  SLIPFLOW_STATUS_NUMERICAL = 5,
  SLIPFLOW_STATUS_OUTSIDE_HORIZON = 6,
  SLIPFLOW_STATUS_INSUFFICIENT_SAMPLES = 7,
  SLIPFLOW_STATUS_ARTIFACT = 8,
  SLIPFLOW_STATUS_IO = 9,
  SLIPFLOW_STATUS_NULL_POINTER = 10,
  SLIPFLOW_STATUS_BUFFER_TOO_SMALL = 11,
  SLIPFLOW_STATUS_PANIC = 12,
};
#ifndef __cplusplus
#if __STDC_VERSION__ >= 202311L
typedef enum SlipflowStatus SlipflowStatus;
#else
typedef int32_t SlipflowStatus;
#endif // __STDC_VERSION__ >= 202311L
#endif // __cplusplus

/**
 * Stokes-type eigenbasis.
 */
typedef struct SlipflowBasis SlipflowBasis;

/**
 * Parsed run configuration.
 */
typedef struct SlipflowConfig SlipflowConfig;

/**
 * Boundary control on the model's time grid.
 */
typedef struct SlipflowControl SlipflowControl;

/**
 * Galerkin model with its lifting and control parametrization.
 */
typedef struct SlipflowModel SlipflowModel;

/**
 * One simulated path.
 */
typedef struct SlipflowTrajectory SlipflowTrajectory;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; valid until the next failure.
 */
const char *slipflow_last_error(void);

/**
 * Toolkit version as a static NUL-terminated string.
 */
const char *slipflow_version(void);

/**
 * # Safety
 * `toml` must be a NUL-terminated string and `out` a valid pointer.
 */
SlipflowStatus slipflow_config_from_toml(const char *toml, struct SlipflowConfig **out);

/**
 * Writes the 64 hex digits of the config hash plus a NUL into `buf`.
 *
 * # Safety
 * `buf` must hold `len` bytes.
 */
SlipflowStatus slipflow_config_hash(const struct SlipflowConfig *cfg, char *buf, size_t len);

/**
 * # Safety
 * `cfg` must come from [`slipflow_config_from_toml`] or be null.
 */
void slipflow_config_free(struct SlipflowConfig *cfg);

/**
 * # Safety
 * Pointers must be valid.
 */
SlipflowStatus slipflow_basis_build(const struct SlipflowConfig *cfg, struct SlipflowBasis **out);

/**
 * # Safety
 * `basis` must be valid or null.
 */
size_t slipflow_basis_len(const struct SlipflowBasis *basis);

/**
 * # Safety
 * `out` must hold `len` doubles.
 */
SlipflowStatus slipflow_basis_eigenvalues(const struct SlipflowBasis *basis,
                                          double *out,
                                          size_t len);

/**
 * # Safety
 * `basis` must come from [`slipflow_basis_build`] or be null.
 */
void slipflow_basis_free(struct SlipflowBasis *basis);

/**
 * Build the full model (basis, lifting, drift) for a configuration.
 *
 * # Safety
 * Pointers must be valid.
 */
SlipflowStatus slipflow_model_new(const struct SlipflowConfig *cfg, struct SlipflowModel **out);

/**
 * # Safety
 * `model` must be valid or null.
 */
size_t slipflow_model_dim(const struct SlipflowModel *model);

/**
 * Number of control parameters (atoms) of the model.
 *
 * # Safety
 * `model` must be valid or null.
 */
size_t slipflow_model_param_dim(const struct SlipflowModel *model);

/**
 * # Safety
 * `out` must hold `len` doubles.
 */
SlipflowStatus slipflow_model_initial_state(const struct SlipflowModel *model,
                                            double *out,
                                            size_t len);

/**
 * # Safety
 * `model` must come from [`slipflow_model_new`] or be null.
 */
void slipflow_model_free(struct SlipflowModel *model);

/**
 * Control `Σ p_k atom_k` for `len` parameters; `len = 0` gives the zero control.
 *
 * # Safety
 * `params` must hold `len` doubles.
 */
SlipflowStatus slipflow_control_from_params(const struct SlipflowModel *model,
                                            const double *params,
                                            size_t len,
                                            struct SlipflowControl **out);

/**
 * Trace-space norm of the control at time `t`.
 *
 * # Safety
 * Pointers must be valid.
 */
SlipflowStatus slipflow_control_trace_norm(const struct SlipflowControl *ctrl,
                                           double t,
                                           double *out);

/**
 * # Safety
 * `ctrl` must come from [`slipflow_control_from_params`] or be null.
 */
void slipflow_control_free(struct SlipflowControl *ctrl);

/**
 * Integrate path `path` of seed `seed` from the model's initial state.
 *
 * # Safety
 * Pointers must be valid.
 */
SlipflowStatus slipflow_simulate_path(const struct SlipflowModel *model,
                                      const struct SlipflowControl *ctrl,
                                      uint64_t seed,
                                      uint64_t path,
                                      struct SlipflowTrajectory **out);

/**
 * Number of stored time points.
 *
 * # Safety
 * `traj` must be valid or null.
 */
size_t slipflow_trajectory_len(const struct SlipflowTrajectory *traj);

/**
 * # Safety
 * `traj` must be valid or null.
 */
bool slipflow_trajectory_blew_up(const struct SlipflowTrajectory *traj);

/**
 * # Safety
 * `out` must hold `len` doubles.
 */
SlipflowStatus slipflow_trajectory_times(const struct SlipflowTrajectory *traj,
                                         double *out,
                                         size_t len);

/**
 * `‖u_n(t_ℓ)‖²` at every stored time.
 *
 * # Safety
 * `out` must hold `len` doubles.
 */
SlipflowStatus slipflow_trajectory_energy(const struct SlipflowTrajectory *traj,
                                          double *out,
                                          size_t len);

/**
 * # Safety
 * `out` must hold `len` doubles.
 */
SlipflowStatus slipflow_trajectory_final_state(const struct SlipflowTrajectory *traj,
                                               double *out,
                                               size_t len);

/**
 * # Safety
 * `traj` must come from [`slipflow_simulate_path`] or be null.
 */
void slipflow_trajectory_free(struct SlipflowTrajectory *traj);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SLIPFLOW_H */
