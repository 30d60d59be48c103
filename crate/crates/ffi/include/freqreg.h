#ifndef FREQREG_H
#define FREQREG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FrStatus {
  FR_STATUS_OK = 0,
  FR_STATUS_NULL_POINTER = 1,
  FR_STATUS_INVALID_ARGUMENT = 2,
  FR_STATUS_IO = 3,
  FR_STATUS_FAILED = 4,
  FR_STATUS_PANIC = 5,
} FrStatus;

/**
 * Fan curves (flow to power, speed to power, speed to flow).
 */
typedef struct FrFanCurves FrFanCurves;

/**
 * A switched tracking controller driving a simulated fan.
 */
typedef struct FrTrackingLoop FrTrackingLoop;

/**
 * One 4-s tracking step.
 */
typedef struct FrTrackingSample {
  /**
   * Requested power, W.
   */
  double p_d;
  /**
   * Measured fan power used by the controller, W.
   */
  double p_f;
  /**
   * Commanded fan speed, percent.
   */
  double n_f;
  /**
   * 0 for the feedforward branch, 1 for PI.
   */
  int32_t branch;
} FrTrackingSample;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or NULL. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *fr_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *fr_version(void);

/**
 * The reference fan curves.
 *
 * # Safety
 * `out` must be NULL or valid for writes.
 */
enum FrStatus fr_fan_curves_reference(struct FrFanCurves **out);

/**
 * Curves from a JSON file as written by `freqreg fit-fan --out`.
 *
 * # Safety
 * `path` must be NULL or a NUL-terminated string; `out` must be NULL or
 * valid for writes.
 */
enum FrStatus fr_fan_curves_from_json(const char *path, struct FrFanCurves **out);

/**
 * # Safety
 * `curves` must be NULL or a handle from this library not yet freed.
 */
void fr_fan_curves_free(struct FrFanCurves *curves);

/**
 * Fan power (W) at air mass flow `flow` (kg/s).
 *
 * # Safety
 * `curves` must be NULL or a live handle; `out` NULL or valid for writes.
 */
enum FrStatus fr_fan_flow_to_power(const struct FrFanCurves *curves, double flow, double *out);

/**
 * Air mass flow (kg/s) drawing fan power `power` (W).
 *
 * # Safety
 * `curves` must be NULL or a live handle; `out` NULL or valid for writes.
 */
enum FrStatus fr_fan_power_to_flow(const struct FrFanCurves *curves, double power, double *out);

/**
 * Electric reserves (W) for baseline flow `flow` and thermal reserves
 * `r_u`, `r_d` (kg/s).
 *
 * # Safety
 * `curves` must be NULL or a live handle; `up` and `down` NULL or valid
 * for writes.
 */
enum FrStatus fr_fan_reserve_capacities(const struct FrFanCurves *curves,
                                        double flow,
                                        double r_u,
                                        double r_d,
                                        double *up,
                                        double *down);

/**
 * A tracking loop with the tuned gain schedule, default deadband and fan
 * dynamics, starting at fan power `p_initial` (W). `seed` drives the
 * simulated measurement noise.
 *
 * # Safety
 * `curves` must be NULL or a live handle; `out` NULL or valid for writes.
 */
enum FrStatus fr_tracking_new(const struct FrFanCurves *curves,
                              double p_initial,
                              uint64_t seed,
                              struct FrTrackingLoop **out);

/**
 * Advances the loop by one 4-s period at time `t` (s) with regulation
 * signal `w` around baseline `p_s` and reserves `r_u`, `r_d` (all W).
 *
 * # Safety
 * `tracking` must be NULL or a live handle; `out` NULL or valid for writes.
 */
enum FrStatus fr_tracking_tick(struct FrTrackingLoop *tracking,
                               double t,
                               double w,
                               double p_s,
                               double r_u,
                               double r_d,
                               struct FrTrackingSample *out);

/**
 * # Safety
 * `tracking` must be NULL or a handle from this library not yet freed.
 */
void fr_tracking_free(struct FrTrackingLoop *tracking);

/**
 * Runs the closed-loop experiment described by the scenario JSON at
 * `scenario_path` and exports the result directory to `out_dir`. A
 * negative `days` keeps the scenario's value, as does a NULL `seed`.
 *
 * # Safety
 * The paths must be NULL or NUL-terminated strings; `seed` must be NULL or
 * valid for reads.
 */
enum FrStatus fr_simulate(const char *scenario_path,
                          const char *out_dir,
                          int32_t days,
                          const uint64_t *seed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FREQREG_H */
