//! C ABI over the varqt simulator.
//!
//! Objects cross the boundary as opaque handles that the caller frees with
//! the matching `*_free` function. Every fallible call returns a
//! [`VarqtStatus`]; on failure [`varqt_last_error`] describes the cause.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use varqt::circuit::{AnsatzSpec, ParameterizedCircuit};
use varqt::cli::{load_spec, run_experiment, write_outputs, CliError};
use varqt::deriv::{energy, grad_reverse, qgt_reverse};
use varqt::evolve::{evolve, EvolutionConfig};
use varqt::pauli::PauliSum;
use varqt::Error;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarqtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    InvalidArgument = 4,
    DimensionMismatch = 5,
    BufferTooSmall = 6,
    Numerical = 7,
    Unsupported = 8,
    Io = 9,
    Panic = 10,
}

/// Pauli-sum observable.
pub struct VarqtHamiltonian(PauliSum);

/// Parameterized circuit.
pub struct VarqtCircuit(ParameterizedCircuit);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(VarqtStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Parse(_) => VarqtStatus::Parse,
            Error::DimensionMismatch { .. } => VarqtStatus::DimensionMismatch,
            Error::Numerical(_) | Error::NormDrift(_) => VarqtStatus::Numerical,
            Error::Unsupported(_) | Error::SizeGuard { .. } => VarqtStatus::Unsupported,
            Error::Io(_) => VarqtStatus::Io,
            _ => VarqtStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

impl From<CliError> for Failure {
    fn from(e: CliError) -> Self {
        let status = match e {
            CliError::Parse(_) => VarqtStatus::Parse,
            CliError::Validation(_) => VarqtStatus::InvalidArgument,
            CliError::Numerical(_) => VarqtStatus::Numerical,
            CliError::Io(_) => VarqtStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

/// Runs `body`, recording any error or panic as the thread's last error.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> VarqtStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => VarqtStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            VarqtStatus::Panic
        }
    }
}

fn null() -> Failure {
    Failure(VarqtStatus::NullPointer, "null pointer argument".into())
}

unsafe fn text<'a>(s: *const c_char) -> Result<&'a str, Failure> {
    if s.is_null() {
        return Err(null());
    }
    CStr::from_ptr(s).to_str().map_err(|_| Failure(VarqtStatus::InvalidUtf8, "string is not valid UTF-8".into()))
}

unsafe fn handle<'a, T>(p: *const T) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(null)
}

unsafe fn input<'a>(p: *const f64, len: usize) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null());
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn output(values: &[f64], dst: *mut f64, capacity: usize) -> Result<(), Failure> {
    if values.len() > capacity {
        return Err(Failure(VarqtStatus::BufferTooSmall, format!("need {} values, buffer holds {capacity}", values.len())));
    }
    if values.is_empty() {
        return Ok(());
    }
    if dst.is_null() {
        return Err(null());
    }
    ptr::copy_nonoverlapping(values.as_ptr(), dst, values.len());
    Ok(())
}

unsafe fn store<T>(dst: *mut T, value: T) -> Result<(), Failure> {
    if dst.is_null() {
        return Err(null());
    }
    dst.write(value);
    Ok(())
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn varqt_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn varqt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses an observable with one `coeff label` term per line, labels
/// written highest qubit first.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn varqt_hamiltonian_parse(text: *const c_char, out: *mut *mut VarqtHamiltonian) -> VarqtStatus {
    guard(|| {
        let sum = PauliSum::parse_text(self::text(text)?)?;
        store(out, Box::into_raw(Box::new(VarqtHamiltonian(sum))))
    })
}

/// # Safety
/// `h` must come from [`varqt_hamiltonian_parse`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn varqt_hamiltonian_free(h: *mut VarqtHamiltonian) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Qubit count, or 0 for a null handle.
///
/// # Safety
/// `h` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn varqt_hamiltonian_num_qubits(h: *const VarqtHamiltonian) -> usize {
    h.as_ref().map_or(0, |h| h.0.n_qubits())
}

/// Builds an ansatz from its JSON description, e.g.
/// `{"kind": "efficient_su2", "n": 3, "reps": 1}`.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn varqt_circuit_from_json(json: *const c_char, out: *mut *mut VarqtCircuit) -> VarqtStatus {
    guard(|| {
        let spec: AnsatzSpec =
            serde_json::from_str(text(json)?).map_err(|e| Failure(VarqtStatus::Parse, format!("ansatz: {e}")))?;
        let c = spec.build()?;
        store(out, Box::into_raw(Box::new(VarqtCircuit(c))))
    })
}

/// # Safety
/// `c` must come from [`varqt_circuit_from_json`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn varqt_circuit_free(c: *mut VarqtCircuit) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// Qubit count, or 0 for a null handle.
///
/// # Safety
/// `c` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn varqt_circuit_num_qubits(c: *const VarqtCircuit) -> usize {
    c.as_ref().map_or(0, |c| c.0.n_qubits())
}

/// Parameter count, or 0 for a null handle.
///
/// # Safety
/// `c` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn varqt_circuit_num_params(c: *const VarqtCircuit) -> usize {
    c.as_ref().map_or(0, |c| c.0.n_params())
}

/// Exact expectation value of `h` in the circuit state at `theta`.
///
/// # Safety
/// Handles must be live, `theta` must hold `n_theta` values and `out` must
/// be writable.
#[no_mangle]
pub unsafe extern "C" fn varqt_energy(
    c: *const VarqtCircuit,
    h: *const VarqtHamiltonian,
    theta: *const f64,
    n_theta: usize,
    out: *mut f64,
) -> VarqtStatus {
    guard(|| {
        let e = energy(&handle(c)?.0, &handle(h)?.0, input(theta, n_theta)?)?;
        store(out, e)
    })
}

/// Energy gradient by reverse-mode differentiation, written to `grad`.
///
/// # Safety
/// Handles must be live, `theta` must hold `n_theta` values and `grad`
/// must have room for `capacity` values.
#[no_mangle]
pub unsafe extern "C" fn varqt_gradient(
    c: *const VarqtCircuit,
    h: *const VarqtHamiltonian,
    theta: *const f64,
    n_theta: usize,
    grad: *mut f64,
    capacity: usize,
) -> VarqtStatus {
    guard(|| {
        let g = grad_reverse(&handle(c)?.0, &handle(h)?.0, input(theta, n_theta)?)?;
        output(&g.energy_gradient(), grad, capacity)
    })
}

/// Real part of the quantum geometric tensor, row-major `d x d`.
///
/// # Safety
/// `c` must be live, `theta` must hold `n_theta` values and `qgt` must have
/// room for `capacity` values.
#[no_mangle]
pub unsafe extern "C" fn varqt_qgt(
    c: *const VarqtCircuit,
    theta: *const f64,
    n_theta: usize,
    qgt: *mut f64,
    capacity: usize,
) -> VarqtStatus {
    guard(|| {
        let g = qgt_reverse(&handle(c)?.0, input(theta, n_theta)?)?.real;
        let rows: Vec<f64> = g.transpose().iter().copied().collect();
        output(&rows, qgt, capacity)
    })
}

/// Variational time evolution from `theta0`. `config` is the JSON evolution
/// record, e.g. `{"mode": "imaginary", "total_time": 1, "dt": 0.01,
/// "engine": {"kind": "varqte"}}`. Final parameters go to `theta_out` and the final
/// energy to `energy_out`.
///
/// # Safety
/// Handles must be live, `theta0` must hold `n_theta` values, `theta_out`
/// must have room for `capacity` values and `energy_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn varqt_evolve(
    c: *const VarqtCircuit,
    h: *const VarqtHamiltonian,
    theta0: *const f64,
    n_theta: usize,
    config: *const c_char,
    theta_out: *mut f64,
    capacity: usize,
    energy_out: *mut f64,
) -> VarqtStatus {
    guard(|| {
        let cfg: EvolutionConfig =
            serde_json::from_str(text(config)?).map_err(|e| Failure(VarqtStatus::Parse, format!("evolution config: {e}")))?;
        let trace = evolve(&handle(c)?.0, &handle(h)?.0, input(theta0, n_theta)?, &cfg)?;
        let last = trace.steps.last().ok_or_else(|| Failure(VarqtStatus::Numerical, "empty trace".into()))?;
        output(&last.theta, theta_out, capacity)?;
        store(energy_out, last.energy)
    })
}

/// Runs a JSON experiment spec, as the command-line tool does, and writes
/// its outputs into `out_dir`.
///
/// # Safety
/// Both arguments must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn varqt_run_spec(spec_json: *const c_char, out_dir: *const c_char) -> VarqtStatus {
    guard(|| {
        let (spec, echo) = load_spec(text(spec_json)?, &[], None)?;
        let dir = text(out_dir)?;
        let out = run_experiment(&spec, &echo)?;
        write_outputs(Path::new(dir), &out)?;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn library_errors_map_to_status_codes() {
        let cases = [
            (Error::Parse("x".into()), VarqtStatus::Parse),
            (Error::DimensionMismatch { expected: 2, got: 3 }, VarqtStatus::DimensionMismatch),
            (Error::NormDrift(2.0), VarqtStatus::Numerical),
            (Error::SizeGuard { n_qubits: 40, limit: 24 }, VarqtStatus::Unsupported),
            (Error::Invalid("x".into()), VarqtStatus::InvalidArgument),
            (Error::Io("x".into()), VarqtStatus::Io),
        ];
        for (e, status) in cases {
            assert_eq!(Failure::from(e).0, status);
        }
    }

    #[test]
    fn panics_become_a_status() {
        assert_eq!(guard(|| panic!("boom")), VarqtStatus::Panic);
        assert!(!varqt_last_error().is_null());
        assert_eq!(guard(|| Ok(())), VarqtStatus::Ok);
        assert!(varqt_last_error().is_null());
    }
}
