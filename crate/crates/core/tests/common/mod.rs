//! Shared test oracles: an independent straight-line re-implementation of
//! the whole loss chain, and central finite differences for gradient checks.
//!
//! Everything here is written with bare `Vec<Vec<f64>>` loops on purpose —
//! it must not share code with the library paths it is checking.

#![allow(dead_code)]

pub mod reference;

use xmodal_core::autograd::ParamRef;

/// Central-difference gradient of `eval` with respect to one parameter
/// tensor, perturbing each entry in place.
pub fn fd_grad(param: &ParamRef, h: f64, eval: &mut dyn FnMut() -> f64) -> Vec<f64> {
    let n = param.borrow().numel();
    let mut grad = Vec::with_capacity(n);
    for i in 0..n {
        let orig = param.borrow().data()[i];
        param.borrow_mut().data_mut()[i] = orig + h;
        let plus = eval();
        param.borrow_mut().data_mut()[i] = orig - h;
        let minus = eval();
        param.borrow_mut().data_mut()[i] = orig;
        grad.push((plus - minus) / (2.0 * h));
    }
    grad
}

/// Worst |analytic - numeric| / max(|analytic|, |numeric|, floor) over the
/// buffer, the floor guarding against division noise where both sides
/// vanish.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Asserts every entry satisfies |a - n| <= atol + rtol * max(|a|, |n|).
pub fn assert_grads_close(analytic: &[f64], numeric: &[f64], rtol: f64, atol: f64, what: &str) {
    assert_eq!(analytic.len(), numeric.len(), "{what}: length mismatch");
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let tol = atol + rtol * a.abs().max(n.abs());
        assert!(
            (a - n).abs() <= tol,
            "{what}[{i}]: analytic {a} vs numeric {n} (diff {}, tol {tol})",
            (a - n).abs()
        );
    }
}
