#ifndef BRUNOVSKY_H
#define BRUNOVSKY_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum BrunovskyStatus {
  BRUNOVSKY_STATUS_OK = 0,
  BRUNOVSKY_STATUS_NULL_POINTER = 1,
  BRUNOVSKY_STATUS_INVALID_ARGUMENT = 2,
  BRUNOVSKY_STATUS_DIMENSION = 3,
  BRUNOVSKY_STATUS_NUMERICAL = 4,
  BRUNOVSKY_STATUS_IO = 5,
  BRUNOVSKY_STATUS_PARSE = 6,
  BRUNOVSKY_STATUS_PANIC = 7,
} BrunovskyStatus;

// Trained auto-encoder with its normalization.
typedef struct BrunovskyAutoencoder BrunovskyAutoencoder;

typedef struct BrunovskyController BrunovskyController;

// Polynomial reference in Brunovsky coordinates.
typedef struct BrunovskyPlan BrunovskyPlan;

// Simulated plant built from a preset or config file.
typedef struct BrunovskySystem BrunovskySystem;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failing call on this thread, or an empty string.
// The pointer stays valid until the next failing call on this thread.
const char *brunovsky_last_error(void);

const char *brunovsky_version(void);

// Loads the auto-encoder from a checkpoint file written by `train`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum BrunovskyStatus brunovsky_autoencoder_load(const char *path,
                                                struct BrunovskyAutoencoder **out);

// Parses a checkpoint from its JSON text.
//
// # Safety
// `json` must be a NUL-terminated string and `out` a valid pointer.
enum BrunovskyStatus brunovsky_autoencoder_from_json(const char *json,
                                                     struct BrunovskyAutoencoder **out);

// # Safety
// `ae` must be NULL or a handle from this library that is not used again.
void brunovsky_autoencoder_free(struct BrunovskyAutoencoder *ae);

// State dimension, or 0 for NULL.
//
// # Safety
// `ae` must be NULL or a live handle.
size_t brunovsky_autoencoder_state_dim(const struct BrunovskyAutoencoder *ae);

// z = Φx(x) in physical units. `x` and `z_out` hold `n` values.
//
// # Safety
// Pointers must be valid for `n` doubles.
enum BrunovskyStatus brunovsky_autoencoder_encode_state(const struct BrunovskyAutoencoder *ae,
                                                        const double *x,
                                                        size_t n,
                                                        double *z_out);

// x = Φx⁻¹(z). `z` and `x_out` hold `n` values.
//
// # Safety
// Pointers must be valid for `n` doubles.
enum BrunovskyStatus brunovsky_autoencoder_decode_state(const struct BrunovskyAutoencoder *ae,
                                                        const double *z,
                                                        size_t n,
                                                        double *x_out);

// # Safety
// `x` must be valid for `n` doubles and `v_out` for one.
enum BrunovskyStatus brunovsky_autoencoder_encode_input(const struct BrunovskyAutoencoder *ae,
                                                        const double *x,
                                                        size_t n,
                                                        double u,
                                                        double *v_out);

// # Safety
// `x` must be valid for `n` doubles and `u_out` for one.
enum BrunovskyStatus brunovsky_autoencoder_decode_input(const struct BrunovskyAutoencoder *ae,
                                                        const double *x,
                                                        size_t n,
                                                        double v,
                                                        double *u_out);

// One-step model prediction Φx⁻¹(σ(Φx(x), Φu(x, u))).
//
// # Safety
// `x` and `x_out` must be valid for `n` doubles.
enum BrunovskyStatus brunovsky_autoencoder_predict_step(const struct BrunovskyAutoencoder *ae,
                                                        const double *x,
                                                        size_t n,
                                                        double u,
                                                        double *x_out);

// Plans from `z0` to `z_n` (each `n` values) over `horizon` steps.
//
// # Safety
// `z0`, `z_n` must be valid for `n` doubles and `out` a valid pointer.
enum BrunovskyStatus brunovsky_plan_create(const double *z0,
                                           const double *z_n,
                                           size_t n,
                                           size_t horizon,
                                           struct BrunovskyPlan **out);

// # Safety
// `plan` must be NULL or a handle that is not used again.
void brunovsky_plan_free(struct BrunovskyPlan *plan);

// # Safety
// `plan` must be NULL or a live handle.
size_t brunovsky_plan_state_dim(const struct BrunovskyPlan *plan);

// # Safety
// `plan` must be NULL or a live handle.
size_t brunovsky_plan_horizon(const struct BrunovskyPlan *plan);

// Reference at step `k`: `z_d_out` receives `n` values, `v_d_out` one.
// Past the horizon the plan holds its final value.
//
// # Safety
// `z_d_out` must be valid for `n` doubles and `v_d_out` for one.
enum BrunovskyStatus brunovsky_plan_reference(const struct BrunovskyPlan *plan,
                                              size_t k,
                                              double *z_d_out,
                                              size_t n,
                                              double *v_d_out);

// Builds a tracking controller. Poles are given as parallel real and
// imaginary arrays of length `n`; `poles_im` may be NULL for real poles.
// The auto-encoder and plan are copied, so their handles may be freed
// afterwards.
//
// # Safety
// Handles must be live and arrays valid for `n` doubles.
enum BrunovskyStatus brunovsky_controller_create(const struct BrunovskyAutoencoder *ae,
                                                 const double *poles_re,
                                                 const double *poles_im,
                                                 size_t n,
                                                 const struct BrunovskyPlan *plan,
                                                 struct BrunovskyController **out);

// # Safety
// `ctrl` must be NULL or a handle that is not used again.
void brunovsky_controller_free(struct BrunovskyController *ctrl);

// Feedback gains a₀..aₙ₋₁ of the placed characteristic polynomial.
//
// # Safety
// `a_out` must be valid for `n` doubles.
enum BrunovskyStatus brunovsky_controller_gains(const struct BrunovskyController *ctrl,
                                                double *a_out,
                                                size_t n);

// Control input for state `x` at step `k`.
//
// # Safety
// `x` must be valid for `n` doubles and `u_out` for one.
enum BrunovskyStatus brunovsky_controller_step(const struct BrunovskyController *ctrl,
                                               const double *x,
                                               size_t n,
                                               size_t k,
                                               double *u_out);

// Builds the plant described by a preset name or config file path.
//
// # Safety
// `config` must be a NUL-terminated string and `out` a valid pointer.
enum BrunovskyStatus brunovsky_system_create(const char *config, struct BrunovskySystem **out);

// # Safety
// `sys` must be NULL or a handle that is not used again.
void brunovsky_system_free(struct BrunovskySystem *sys);

// # Safety
// `sys` must be NULL or a live handle.
size_t brunovsky_system_state_dim(const struct BrunovskySystem *sys);

// # Safety
// `sys` must be NULL or a live handle.
double brunovsky_system_sampling_time(const struct BrunovskySystem *sys);

// x⁺ = f(x, u).
//
// # Safety
// `x` and `x_out` must be valid for `n` doubles.
enum BrunovskyStatus brunovsky_system_step(const struct BrunovskySystem *sys,
                                           const double *x,
                                           size_t n,
                                           double u,
                                           double *x_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BRUNOVSKY_H */
