//! Central-finite-difference validation of analytic gradients.

use super::dense::Tensor;
use crate::error::{FcError, Result};

/// Compares an analytic gradient against central finite differences.
///
/// `f` evaluates the scalar objective at a point; `grad_f` returns its
/// analytic gradient there. For each coordinate `i` the central difference
/// `(f(x + h·e_i) − f(x − h·e_i)) / 2h` is formed; the returned error is the
/// norm-wise relative difference `‖analytic − numeric‖₂ / max(‖numeric‖₂, 1e-8)`.
/// The norm-wise form is the standard gradient-check metric: a per-coordinate
/// ratio would be dominated by coordinates whose true derivative is near
/// zero, where the central difference is pure rounding noise.
///
/// Fails with a numeric error if any evaluation of `f` is non-finite.
pub fn grad_check(
    mut f: impl FnMut(&Tensor) -> f64,
    grad_f: impl FnOnce(&Tensor) -> Vec<f64>,
    point: &Tensor,
    h: f64,
) -> Result<f64> {
    assert!(h > 0.0, "finite-difference step must be positive");
    let analytic = grad_f(point);
    assert_eq!(
        analytic.len(),
        point.len(),
        "analytic gradient length mismatch"
    );
    let mut diff_sq = 0.0f64;
    let mut numeric_sq = 0.0f64;
    let mut probe = point.clone();
    for i in 0..point.len() {
        let orig = probe.data[i];
        probe.data[i] = orig + h;
        let fp = f(&probe);
        probe.data[i] = orig - h;
        let fm = f(&probe);
        probe.data[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(FcError::Numeric(format!(
                "objective returned non-finite value at coordinate {i}"
            )));
        }
        let numeric = (fp - fm) / (2.0 * h);
        diff_sq += (analytic[i] - numeric) * (analytic[i] - numeric);
        numeric_sq += numeric * numeric;
    }
    Ok(diff_sq.sqrt() / numeric_sq.sqrt().max(1e-8))
}
