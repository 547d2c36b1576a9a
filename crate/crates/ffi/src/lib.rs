//! C ABI for bisimetric.
//!
//! Every function returns a [`BsmStatus`]; results are written through out
//! pointers. Models and matrices are opaque handles owned by the caller and
//! released with their `_free` function. After a non-`Ok` status,
//! [`bsm_last_error_message`] describes the failure on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use bisimetric::config::{ResolvedRun, RunConfig};
use bisimetric::logic::{parse_state, Evaluator};
use bisimetric::metrics::{iterate_to_fixpoint, Functional, PseudometricMatrix};
use bisimetric::transport::{solve_ot, CostMatrix, DiscreteDistribution};
use bisimetric::Error;

/// Status codes returned by every function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BsmStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// Invalid configuration, formula or parameter.
    InvalidInput = 3,
    /// A mathematical invariant failed (honesty, pseudometric or distribution axioms).
    InvariantViolation = 4,
    /// Solver, shape or I/O failure.
    Internal = 5,
    /// An index or buffer length was out of range.
    OutOfRange = 6,
    /// The library panicked; the handle arguments should be considered unusable.
    Panic = 7,
}

/// Which fixpoint to compute.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BsmFunctional {
    /// Kernel functional, least fixpoint of the kernel pseudometric.
    Kernel = 0,
    /// Trajectory functional, least fixpoint of the trajectory pseudometric.
    Trajectory = 1,
}

/// A resolved process model with its time grid and run settings.
pub struct BsmModel {
    run: ResolvedRun,
}

/// A square matrix of pseudometric values.
pub struct BsmMatrix {
    matrix: PseudometricMatrix,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn status_of(err: &Error) -> BsmStatus {
    match bisimetric::cli::exit_code(err) {
        1 => BsmStatus::InvalidInput,
        2 => BsmStatus::InvariantViolation,
        _ => BsmStatus::Internal,
    }
}

struct Failure(BsmStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> BsmStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            BsmStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".to_string());
            set_error(format!("internal panic: {msg}"));
            BsmStatus::Panic
        }
    }
}

fn non_null<'a, T>(ptr: *const T, name: &str) -> Result<&'a T, Failure> {
    // SAFETY: callers pass either null or a pointer obtained from this library.
    unsafe { ptr.as_ref() }.ok_or_else(|| Failure(BsmStatus::NullPointer, format!("{name} is null")))
}

fn out_ptr<T>(ptr: *mut T, name: &str) -> Result<*mut T, Failure> {
    if ptr.is_null() {
        Err(Failure(BsmStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(ptr)
    }
}

fn c_str<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if ptr.is_null() {
        return Err(Failure(BsmStatus::NullPointer, format!("{name} is null")));
    }
    // SAFETY: non-null and documented as NUL-terminated.
    unsafe { CStr::from_ptr(ptr) }
        .to_str()
        .map_err(|e| Failure(BsmStatus::InvalidUtf8, format!("{name}: {e}")))
}

fn slice<'a>(ptr: *const f64, len: usize, name: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(Failure(BsmStatus::NullPointer, format!("{name} is null")));
    }
    // SAFETY: non-null and documented to hold `len` values.
    Ok(unsafe { std::slice::from_raw_parts(ptr, len) })
}

/// Message for the last failed call on this thread, or null if it succeeded.
///
/// The string stays valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn bsm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Parses and resolves a JSON run configuration into a model handle.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bsm_model_from_json(json: *const c_char, out: *mut *mut BsmModel) -> BsmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let text = c_str(json, "json")?;
        let run = RunConfig::from_json(text)?.resolve()?;
        // SAFETY: checked non-null above.
        unsafe { *out = Box::into_raw(Box::new(BsmModel { run })) };
        Ok(())
    })
}

/// Releases a model handle. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle from [`bsm_model_from_json`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bsm_model_free(model: *mut BsmModel) {
    if !model.is_null() {
        // SAFETY: ownership returns from the caller.
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Number of states of the model's finite state space.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bsm_model_num_states(model: *const BsmModel, out: *mut usize) -> BsmStatus {
    guard(|| {
        let model = non_null(model, "model")?;
        let out = out_ptr(out, "out")?;
        // SAFETY: checked non-null above.
        unsafe { *out = model.run.model.num_states() };
        Ok(())
    })
}

/// Iterates the chosen functional to its fixpoint with the model's configured
/// discount, tolerance, iteration cap and path mode.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bsm_fixpoint(
    model: *const BsmModel,
    functional: BsmFunctional,
    out: *mut *mut BsmMatrix,
) -> BsmStatus {
    guard(|| {
        let model = non_null(model, "model")?;
        let out = out_ptr(out, "out")?;
        let run = &model.run;
        let functional = match functional {
            BsmFunctional::Kernel => Functional::F,
            BsmFunctional::Trajectory => Functional::G,
        };
        let report = iterate_to_fixpoint(
            functional,
            &run.model,
            &run.grid,
            run.config.discount,
            run.config.epsilon_fixpoint,
            run.config.max_iter,
            run.mode,
        )?;
        let matrix = report.final_matrix().clone();
        // SAFETY: checked non-null above.
        unsafe { *out = Box::into_raw(Box::new(BsmMatrix { matrix })) };
        Ok(())
    })
}

/// Side length of a matrix.
///
/// # Safety
/// `matrix` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bsm_matrix_size(matrix: *const BsmMatrix, out: *mut usize) -> BsmStatus {
    guard(|| {
        let matrix = non_null(matrix, "matrix")?;
        let out = out_ptr(out, "out")?;
        // SAFETY: checked non-null above.
        unsafe { *out = matrix.matrix.len() };
        Ok(())
    })
}

/// Entry `(x, y)` of a matrix.
///
/// # Safety
/// `matrix` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bsm_matrix_get(matrix: *const BsmMatrix, x: usize, y: usize, out: *mut f64) -> BsmStatus {
    guard(|| {
        let matrix = non_null(matrix, "matrix")?;
        let out = out_ptr(out, "out")?;
        let n = matrix.matrix.len();
        if x >= n || y >= n {
            return Err(Failure(BsmStatus::OutOfRange, format!("index ({x}, {y}) outside a {n}x{n} matrix")));
        }
        // SAFETY: checked non-null above.
        unsafe { *out = matrix.matrix.get(x, y) };
        Ok(())
    })
}

/// Copies all entries, row-major, into `buf`, which must hold `size * size` values.
///
/// # Safety
/// `matrix` must be a live handle and `buf` must hold `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn bsm_matrix_copy(matrix: *const BsmMatrix, buf: *mut f64, len: usize) -> BsmStatus {
    guard(|| {
        let matrix = non_null(matrix, "matrix")?;
        let values = matrix.matrix.values();
        if len != values.len() {
            return Err(Failure(BsmStatus::OutOfRange, format!("buffer holds {len} values, matrix has {}", values.len())));
        }
        let buf = out_ptr(buf, "buf")?;
        // SAFETY: `buf` is non-null and holds `len` values.
        unsafe { std::ptr::copy_nonoverlapping(values.as_ptr(), buf, len) };
        Ok(())
    })
}

/// Releases a matrix handle. Null is ignored.
///
/// # Safety
/// `matrix` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bsm_matrix_free(matrix: *mut BsmMatrix) {
    if !matrix.is_null() {
        // SAFETY: ownership returns from the caller.
        drop(unsafe { Box::from_raw(matrix) });
    }
}

/// Optimal transport cost between `mu` (length `m`) and `nu` (length `n`)
/// under the row-major `m x n` cost matrix `cost`, whose entries lie in `[0, 1]`.
///
/// # Safety
/// The arrays must hold `m`, `n` and `m * n` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn bsm_solve_ot(
    mu: *const f64,
    m: usize,
    nu: *const f64,
    n: usize,
    cost: *const f64,
    out: *mut f64,
) -> BsmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let cells = m.checked_mul(n).ok_or_else(|| Failure(BsmStatus::OutOfRange, "m * n overflows".into()))?;
        let mu = DiscreteDistribution::new((0..m).collect(), slice(mu, m, "mu")?.to_vec())?;
        let nu = DiscreteDistribution::new((0..n).collect(), slice(nu, n, "nu")?.to_vec())?;
        let cost = CostMatrix::new(m, n, slice(cost, cells, "cost")?.to_vec())
            .map_err(|e| Failure(BsmStatus::InvalidInput, e.to_string()))?;
        let res = solve_ot(&mu, &nu, &cost)?;
        // SAFETY: checked non-null above.
        unsafe { *out = res.cost };
        Ok(())
    })
}

/// Evaluates a state formula at every state; `out` must hold `len` values,
/// `len` equal to the number of states.
///
/// # Safety
/// `model` must be a live handle, `formula` NUL-terminated and `out` hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn bsm_formula_eval(
    model: *const BsmModel,
    formula: *const c_char,
    out: *mut f64,
    len: usize,
) -> BsmStatus {
    guard(|| {
        let model = non_null(model, "model")?;
        let text = c_str(formula, "formula")?;
        let run = &model.run;
        let n = run.model.num_states();
        if len != n {
            return Err(Failure(BsmStatus::OutOfRange, format!("buffer holds {len} values, model has {n} states")));
        }
        let out = out_ptr(out, "out")?;
        let f = parse_state(text)?;
        let ev = Evaluator::new(&run.model, run.config.discount, &run.grid, run.mode)?;
        let values = ev.state_values(&f)?;
        // SAFETY: `out` is non-null and holds `len == n` values.
        unsafe { std::ptr::copy_nonoverlapping(values.as_ptr(), out, n) };
        Ok(())
    })
}
