use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use bisimetric_ffi::*;

const CHAIN: &str = r#"{
    "process": {"kind": "finite-chain", "matrix": [[0.9, 0.1, 0.0], [0.1, 0.1, 0.8], [0.0, 0.3, 0.7]], "observable": [0.0, 0.0, 1.0]},
    "discount": 0.8,
    "epsilon_time": 0.2
}"#;

fn last_error() -> String {
    let p = bsm_last_error_message();
    assert!(!p.is_null(), "a failing call leaves a message");
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn load(json: &str) -> *mut BsmModel {
    let text = CString::new(json).unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { bsm_model_from_json(text.as_ptr(), &mut model) }, BsmStatus::Ok);
    assert!(bsm_last_error_message().is_null());
    model
}

fn fixpoint(model: *const BsmModel, functional: BsmFunctional) -> Vec<f64> {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { bsm_fixpoint(model, functional, &mut m) }, BsmStatus::Ok);
    let mut n = 0;
    assert_eq!(unsafe { bsm_matrix_size(m, &mut n) }, BsmStatus::Ok);
    let mut values = vec![0.0; n * n];
    assert_eq!(unsafe { bsm_matrix_copy(m, values.as_mut_ptr(), values.len()) }, BsmStatus::Ok);
    for x in 0..n {
        for y in 0..n {
            let mut v = f64::NAN;
            assert_eq!(unsafe { bsm_matrix_get(m, x, y, &mut v) }, BsmStatus::Ok);
            assert_eq!(v, values[x * n + y]);
        }
    }
    let mut v = 0.0;
    assert_eq!(unsafe { bsm_matrix_get(m, n, 0, &mut v) }, BsmStatus::OutOfRange);
    unsafe { bsm_matrix_free(m) };
    values
}

#[test]
fn fixpoints_through_the_abi_match_the_library() {
    let model = load(CHAIN);
    let mut n = 0;
    assert_eq!(unsafe { bsm_model_num_states(model, &mut n) }, BsmStatus::Ok);
    assert_eq!(n, 3);
    let f = fixpoint(model, BsmFunctional::Kernel);
    let g = fixpoint(model, BsmFunctional::Trajectory);

    let run = bisimetric::config::RunConfig::from_json(CHAIN).unwrap().resolve().unwrap();
    let direct = bisimetric::metrics::iterate_to_fixpoint(
        bisimetric::metrics::Functional::F,
        &run.model,
        &run.grid,
        0.8,
        run.config.epsilon_fixpoint,
        run.config.max_iter,
        run.mode,
    )
    .unwrap();
    assert_eq!(f, direct.final_matrix().values());
    for (a, b) in f.iter().zip(&g) {
        assert!(a <= &(b + 1e-6), "kernel fixpoint stays below trajectory fixpoint");
    }
    assert!(f[2] > 0.0);
    unsafe { bsm_model_free(model) };
}

#[test]
fn formulas_evaluate_per_state() {
    let model = load(CHAIN);
    let formula = CString::new("1 - obs").unwrap();
    let mut out = [0.0; 3];
    assert_eq!(unsafe { bsm_formula_eval(model, formula.as_ptr(), out.as_mut_ptr(), 3) }, BsmStatus::Ok);
    assert_eq!(out, [1.0, 1.0, 0.0]);

    let bad = CString::new("min(obs").unwrap();
    assert_eq!(unsafe { bsm_formula_eval(model, bad.as_ptr(), out.as_mut_ptr(), 3) }, BsmStatus::InvalidInput);
    assert!(last_error().contains("syntax"));
    assert_eq!(unsafe { bsm_formula_eval(model, formula.as_ptr(), out.as_mut_ptr(), 2) }, BsmStatus::OutOfRange);
    unsafe { bsm_model_free(model) };
}

#[test]
fn transport_between_point_masses_and_spread_mass() {
    let mu = [1.0, 0.0, 0.0];
    let nu = [0.0, 0.5, 0.5];
    let cost = [0.0, 0.5, 1.0, 0.5, 0.0, 0.5, 1.0, 0.5, 0.0];
    let mut w = f64::NAN;
    assert_eq!(unsafe { bsm_solve_ot(mu.as_ptr(), 3, nu.as_ptr(), 3, cost.as_ptr(), &mut w) }, BsmStatus::Ok);
    assert!((w - 0.75).abs() < 1e-12);

    let rect = [0.25, 0.75, 1.0, 0.5, 0.5, 0.0];
    assert_eq!(unsafe { bsm_solve_ot(mu.as_ptr(), 3, [0.5, 0.5].as_ptr(), 2, rect.as_ptr(), &mut w) }, BsmStatus::Ok);
    assert!((w - 0.5).abs() < 1e-12);

    let unnormalised = [0.5, 0.0, 0.0];
    let status = unsafe { bsm_solve_ot(unnormalised.as_ptr(), 3, nu.as_ptr(), 3, cost.as_ptr(), &mut w) };
    assert_eq!(status, BsmStatus::InvariantViolation);
    assert!(!last_error().is_empty());

    let too_far = [0.0, 2.0, 2.0, 0.0];
    let status = unsafe { bsm_solve_ot([1.0, 0.0].as_ptr(), 2, [0.0, 1.0].as_ptr(), 2, too_far.as_ptr(), &mut w) };
    assert_eq!(status, BsmStatus::InvalidInput);
    assert!(last_error().contains("outside [0,1]"));
}

#[test]
fn invalid_arguments_map_to_status_codes() {
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { bsm_model_from_json(ptr::null(), &mut model) }, BsmStatus::NullPointer);
    let text = CString::new(CHAIN.replace("0.8,", "1.0,")).unwrap();
    assert_eq!(unsafe { bsm_model_from_json(text.as_ptr(), &mut model) }, BsmStatus::InvalidInput);
    assert!(last_error().contains("discount"));
    assert!(model.is_null());

    let bad_utf8 = [0xffu8 as std::ffi::c_char, 0];
    assert_eq!(unsafe { bsm_model_from_json(bad_utf8.as_ptr(), &mut model) }, BsmStatus::InvalidUtf8);

    let leaky = CString::new(CHAIN.replace("[0.9, 0.1, 0.0]", "[0.9, 0.0, 0.0]")).unwrap();
    assert_eq!(unsafe { bsm_model_from_json(leaky.as_ptr(), &mut model) }, BsmStatus::InvariantViolation);

    let mut n = 0;
    assert_eq!(unsafe { bsm_model_num_states(ptr::null(), &mut n) }, BsmStatus::NullPointer);
    unsafe {
        bsm_model_free(ptr::null_mut());
        bsm_matrix_free(ptr::null_mut());
    }
}

#[test]
fn header_declares_every_entry_point() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/bisimetric.h");
    let header = std::fs::read_to_string(&path).unwrap();
    for name in [
        "bsm_last_error_message",
        "bsm_model_from_json",
        "bsm_model_free",
        "bsm_model_num_states",
        "bsm_fixpoint",
        "bsm_matrix_size",
        "bsm_matrix_get",
        "bsm_matrix_copy",
        "bsm_matrix_free",
        "bsm_solve_ot",
        "bsm_formula_eval",
        "typedef struct BsmModel BsmModel",
        "BSM_STATUS_INVARIANT_VIOLATION = 4",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
    // The header must also compile as C when a compiler is available.
    let Ok(status) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"])
        .arg(&path)
        .status()
    else {
        return;
    };
    assert!(status.success(), "header does not compile");
}
