//! Central finite-difference oracle for gradient verification.

use super::tensor::Tensor;

/// Floor for the relative-error denominator, protecting near-zero gradients.
pub const REL_ERR_FLOOR: f64 = 1e-8;

/// Compare the analytic gradient of a scalar function against central
/// finite differences, coordinate by coordinate.
///
/// `f` evaluates the function at a point and returns `(value, gradient)`;
/// the gradient must have the same shape as the point. Returns the maximum
/// relative error `|fd - analytic| / max(|fd|, |analytic|, 1e-8)` over all
/// coordinates.
pub fn finite_diff_check<F>(f: F, point: &Tensor, eps: f64) -> f64
where
    F: Fn(&Tensor) -> (f64, Tensor),
{
    assert!(eps > 0.0, "finite_diff_check eps must be positive");
    let (_, analytic) = f(point);
    assert_eq!(
        analytic.shape(),
        point.shape(),
        "analytic gradient shape must match the point"
    );
    let mut max_err: f64 = 0.0;
    for i in 0..point.len() {
        let mut plus = point.clone();
        plus.data_mut()[i] += eps;
        let mut minus = point.clone();
        minus.data_mut()[i] -= eps;
        let fd = (f(&plus).0 - f(&minus).0) / (2.0 * eps);
        let an = analytic.data()[i];
        let denom = fd.abs().max(an.abs()).max(REL_ERR_FLOOR);
        max_err = max_err.max((fd - an).abs() / denom);
    }
    max_err
}
