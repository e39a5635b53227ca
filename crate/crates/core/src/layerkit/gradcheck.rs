//! Central finite-difference verification of analytic gradients.

use rand::Rng;

/// Gradients smaller than this are compared in absolute rather than
/// relative terms; central differences cannot resolve them relatively.
pub const GRAD_FLOOR: f64 = 1e-3;

pub const DEFAULT_STEP: f64 = 1e-6;

/// Relative error between two gradient components, with [`GRAD_FLOOR`].
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(GRAD_FLOOR);
    (analytic - numeric).abs() / scale
}

/// Perturbs every coordinate of `theta` by `±step`, estimates the gradient
/// of the scalar `objective` by central differences, and returns the
/// maximum relative error against `analytic`.
///
/// `theta` is the concatenation of everything being checked (parameters
/// and inputs); `analytic` must use the same layout.
pub fn finite_diff_check<F>(objective: F, theta: &[f64], analytic: &[f64], step: f64) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    assert_eq!(theta.len(), analytic.len(), "gradient layout mismatch");
    let mut probe = theta.to_vec();
    let mut worst = 0.0f64;
    for i in 0..theta.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let up = objective(&probe);
        probe[i] = orig - step;
        let down = objective(&probe);
        probe[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        let err = relative_error(analytic[i], numeric);
        if err.is_nan() {
            return f64::INFINITY;
        }
        worst = worst.max(err);
    }
    worst
}

/// Uniform values in [-1, 1), used for random probe points.
pub fn random_vec<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}
