//! Finite-difference gradient verification.
//!
//! These helpers are deliberately independent of the tensor operators: they
//! only probe a black-box scalar function, so they can serve as the oracle
//! for any backward pass in the crate.

/// Central-difference step. With f64 arithmetic the truncation error is
/// O(step^2) = 1e-10 and the cancellation error O(eps/step) = 1e-11, both
/// comfortably below the 1e-6 relative tolerance.
pub const FD_STEP: f64 = 1e-5;

/// Relative mismatch allowed between analytic and numeric gradients.
pub const GRAD_REL_TOL: f64 = 1e-6;

/// Differences below this are treated as zero: for components whose true
/// gradient vanishes, the finite difference itself carries ~1e-11 noise and
/// a relative comparison would be meaningless.
pub const GRAD_ABS_FLOOR: f64 = 1e-9;

/// Central differences of `f` around `x`, one coordinate at a time.
pub fn fd_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let plus = f(&probe);
        probe[i] = orig - step;
        let minus = f(&probe);
        probe[i] = orig;
        grad.push((plus - minus) / (2.0 * step));
    }
    grad
}

/// Relative error with an absolute floor on the difference.
pub fn component_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff <= GRAD_ABS_FLOOR {
        0.0
    } else {
        diff / analytic.abs().max(numeric.abs())
    }
}

/// Worst relative error between two gradient vectors and where it occurs.
pub fn max_gradient_error(analytic: &[f64], numeric: &[f64]) -> (f64, usize) {
    assert_eq!(analytic.len(), numeric.len());
    let mut worst = (0.0, 0);
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let err = component_error(a, n);
        if err > worst.0 {
            worst = (err, i);
        }
    }
    worst
}

/// Checks `analytic` against central differences of `f` at `x`; returns a
/// description of the worst component if it exceeds [`GRAD_REL_TOL`].
pub fn check_gradient(
    f: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
) -> Result<f64, String> {
    let numeric = fd_gradient(f, x, FD_STEP);
    let (err, at) = max_gradient_error(analytic, &numeric);
    if err < GRAD_REL_TOL {
        Ok(err)
    } else {
        Err(format!(
            "gradient mismatch at component {at}: analytic {} vs numeric {} (rel err {err:.3e})",
            analytic[at], numeric[at]
        ))
    }
}
