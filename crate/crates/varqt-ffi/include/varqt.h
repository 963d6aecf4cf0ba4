#ifndef VARQT_H
#define VARQT_H

/* Generated by cbindgen from the varqt-ffi crate; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes.
typedef enum VarqtStatus {
  VARQT_STATUS_OK = 0,
  VARQT_STATUS_NULL_POINTER = 1,
  VARQT_STATUS_INVALID_UTF8 = 2,
  VARQT_STATUS_PARSE = 3,
  VARQT_STATUS_INVALID_ARGUMENT = 4,
  VARQT_STATUS_DIMENSION_MISMATCH = 5,
  VARQT_STATUS_BUFFER_TOO_SMALL = 6,
  VARQT_STATUS_NUMERICAL = 7,
  VARQT_STATUS_UNSUPPORTED = 8,
  VARQT_STATUS_IO = 9,
  VARQT_STATUS_PANIC = 10,
} VarqtStatus;

// Parameterized circuit.
typedef struct VarqtCircuit VarqtCircuit;

// Pauli-sum observable.
typedef struct VarqtHamiltonian VarqtHamiltonian;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer
// stays valid until the next call into this library on the same thread.
const char *varqt_last_error(void);

// Library version as a static NUL-terminated string.
const char *varqt_version(void);

// Parses an observable with one `coeff label` term per line, labels
// written highest qubit first.
//
// # Safety
// `text` must be a NUL-terminated string and `out` a writable pointer.
enum VarqtStatus varqt_hamiltonian_parse(const char *text, struct VarqtHamiltonian **out);

// # Safety
// `h` must come from [`varqt_hamiltonian_parse`] and not be used afterwards.
void varqt_hamiltonian_free(struct VarqtHamiltonian *h);

// Qubit count, or 0 for a null handle.
//
// # Safety
// `h` must be null or a live handle.
size_t varqt_hamiltonian_num_qubits(const struct VarqtHamiltonian *h);

// Builds an ansatz from its JSON description, e.g.
// `{"kind": "efficient_su2", "n": 3, "reps": 1}`.
//
// # Safety
// `json` must be a NUL-terminated string and `out` a writable pointer.
enum VarqtStatus varqt_circuit_from_json(const char *json, struct VarqtCircuit **out);

// # Safety
// `c` must come from [`varqt_circuit_from_json`] and not be used afterwards.
void varqt_circuit_free(struct VarqtCircuit *c);

// Qubit count, or 0 for a null handle.
//
// # Safety
// `c` must be null or a live handle.
size_t varqt_circuit_num_qubits(const struct VarqtCircuit *c);

// Parameter count, or 0 for a null handle.
//
// # Safety
// `c` must be null or a live handle.
size_t varqt_circuit_num_params(const struct VarqtCircuit *c);

// Exact expectation value of `h` in the circuit state at `theta`.
//
// # Safety
// Handles must be live, `theta` must hold `n_theta` values and `out` must
// be writable.
enum VarqtStatus varqt_energy(const struct VarqtCircuit *c,
                              const struct VarqtHamiltonian *h,
                              const double *theta,
                              size_t n_theta,
                              double *out);

// Energy gradient by reverse-mode differentiation, written to `grad`.
//
// # Safety
// Handles must be live, `theta` must hold `n_theta` values and `grad`
// must have room for `capacity` values.
enum VarqtStatus varqt_gradient(const struct VarqtCircuit *c,
                                const struct VarqtHamiltonian *h,
                                const double *theta,
                                size_t n_theta,
                                double *grad,
                                size_t capacity);

// Real part of the quantum geometric tensor, row-major `d x d`.
//
// # Safety
// `c` must be live, `theta` must hold `n_theta` values and `qgt` must have
// room for `capacity` values.
enum VarqtStatus varqt_qgt(const struct VarqtCircuit *c,
                           const double *theta,
                           size_t n_theta,
                           double *qgt,
                           size_t capacity);

// Variational time evolution from `theta0`. `config` is the JSON evolution
// record, e.g. `{"mode": "imaginary", "total_time": 1, "dt": 0.01,
// "engine": {"kind": "varqte"}}`. Final parameters go to `theta_out` and the final
// energy to `energy_out`.
//
// # Safety
// Handles must be live, `theta0` must hold `n_theta` values, `theta_out`
// must have room for `capacity` values and `energy_out` must be writable.
enum VarqtStatus varqt_evolve(const struct VarqtCircuit *c,
                              const struct VarqtHamiltonian *h,
                              const double *theta0,
                              size_t n_theta,
                              const char *config,
                              double *theta_out,
                              size_t capacity,
                              double *energy_out);

// Runs a JSON experiment spec, as the command-line tool does, and writes
// its outputs into `out_dir`.
//
// # Safety
// Both arguments must be NUL-terminated strings.
enum VarqtStatus varqt_run_spec(const char *spec_json, const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VARQT_H */
