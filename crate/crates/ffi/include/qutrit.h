#ifndef QUTRIT_H
#define QUTRIT_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum QutritStatus {
  QUTRIT_STATUS_OK = 0,
  QUTRIT_STATUS_NULL_POINTER = 1,
  QUTRIT_STATUS_INVALID_ARGUMENT = 2,
  QUTRIT_STATUS_CONFIG = 3,
  // Parameters outside the model's validity (dispersive limit, photon
  // number, dephasing, rank) or a failed integration.
  QUTRIT_STATUS_PHYSICS = 4,
  QUTRIT_STATUS_NOT_CONVERGED = 5,
  QUTRIT_STATUS_PANIC = 6,
} QutritStatus;

// Device, readout and pulse settings with their calibrations.
typedef struct QutritContext QutritContext;

// Result of a simulated tomography run.
typedef struct QutritTomography QutritTomography;

// One simulated readout trace.
typedef struct QutritTrace QutritTrace;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the last error message of this thread into `buf` (NUL
// terminated, truncated to `len`). Returns the full message length
// without the terminator; 0 when the last call succeeded.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
size_t qutrit_last_error_message(char *buf, size_t len);

// Library version as a static NUL-terminated string.
const char *qutrit_version(void);

// Context with the built-in device, readout and pulse defaults.
//
// # Safety
// `out` must be a valid pointer to a handle slot.
enum QutritStatus qutrit_context_new_default(struct QutritContext **out);

// Context from a TOML run configuration held in memory.
//
// # Safety
// `toml` must be a NUL-terminated string; `out` a valid handle slot.
enum QutritStatus qutrit_context_from_toml(const char *toml, struct QutritContext **out);

// # Safety
// `ctx` must be null or a handle from this library, not used afterwards.
void qutrit_context_free(struct QutritContext *ctx);

// Cavity pulls χ of the three levels in MHz.
//
// # Safety
// `ctx` must be a live handle; `out` must hold 3 doubles.
enum QutritStatus qutrit_dispersive_shifts(const struct QutritContext *ctx, double *out);

// Integrated in-phase signals of the three basis-state references.
//
// # Safety
// `ctx` must be a live handle; `out` must hold 3 doubles.
enum QutritStatus qutrit_measurement_operator(const struct QutritContext *ctx, double *out);

// Readout of a mixture with level populations `populations[3]`.
//
// # Safety
// `ctx` must be a live handle, `populations` 3 doubles, `out` a handle slot.
enum QutritStatus qutrit_readout(const struct QutritContext *ctx,
                                 const double *populations,
                                 struct QutritTrace **out);

// Number of samples in a trace; 0 for a null handle.
//
// # Safety
// `trace` must be null or a live handle.
size_t qutrit_trace_len(const struct QutritTrace *trace);

// Copies times (ns) and the I and Q quadratures. Each non-null buffer must
// hold `len` doubles, and `len` must equal [`qutrit_trace_len`].
//
// # Safety
// `trace` must be a live handle; buffers null or `len` doubles long.
enum QutritStatus qutrit_trace_copy(const struct QutritTrace *trace,
                                    double *times,
                                    double *i_quad,
                                    double *q_quad,
                                    size_t len);

// # Safety
// `trace` must be null or a handle from this library, not used afterwards.
void qutrit_trace_free(struct QutritTrace *trace);

// Prepares the pure state with amplitudes `re[k] + i·im[k]`, simulates
// the nine tomography measurements with Gaussian noise of relative
// size `sigma_rel`, and reconstructs by maximum likelihood.
//
// # Safety
// `ctx` must be a live handle, `re` and `im` 3 doubles each, `out` a slot.
enum QutritStatus qutrit_tomography(const struct QutritContext *ctx,
                                    const double *re,
                                    const double *im,
                                    double sigma_rel,
                                    uint64_t seed,
                                    struct QutritTomography **out);

// Fidelity of the reconstruction to the target; NaN for a null handle.
//
// # Safety
// `tomo` must be null or a live handle.
double qutrit_tomography_fidelity(const struct QutritTomography *tomo);

// Fidelity of the prepared state before tomography; NaN for a null handle.
//
// # Safety
// `tomo` must be null or a live handle.
double qutrit_tomography_preparation_fidelity(const struct QutritTomography *tomo);

// Reconstructed ρ, row-major, as 9 real and 9 imaginary parts.
//
// # Safety
// `tomo` must be a live handle; `re` and `im` must hold 9 doubles each.
enum QutritStatus qutrit_tomography_density_matrix(const struct QutritTomography *tomo,
                                                   double *re,
                                                   double *im);

// # Safety
// `tomo` must be null or a handle from this library, not used afterwards.
void qutrit_tomography_free(struct QutritTomography *tomo);

// Maximum-likelihood ρ from nine integrated signals `values` with
// standard errors `sigmas`, given the measurement operator eigenvalues
// `m[3]` and the standard pre-rotations. Writes ρ row-major.
//
// # Safety
// `values` and `sigmas` must hold 9 doubles, `m` 3, `re` and `im` 9 each.
enum QutritStatus qutrit_reconstruct(const double *values,
                                     const double *sigmas,
                                     const double *m,
                                     double *re,
                                     double *im);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QUTRIT_H */
