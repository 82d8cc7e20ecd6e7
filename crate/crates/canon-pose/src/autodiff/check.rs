//! Central finite differences, the independent oracle the analytic gradients
//! are checked against.

use ndarray::ArrayD;

/// Central-difference gradient of `f` at `x0`, one forward pair per element.
pub fn finite_difference<F>(f: F, x0: &ArrayD<f64>, step: f64) -> ArrayD<f64>
where
    F: Fn(&ArrayD<f64>) -> f64,
{
    let mut x = x0.clone();
    let mut grad = ArrayD::zeros(x0.raw_dim());
    for idx in 0..x0.len() {
        let slot = x.as_slice_mut().expect("standard layout");
        let orig = slot[idx];
        slot[idx] = orig + step;
        let plus = f(&x);
        let slot = x.as_slice_mut().expect("standard layout");
        slot[idx] = orig - step;
        let minus = f(&x);
        let slot = x.as_slice_mut().expect("standard layout");
        slot[idx] = orig;
        grad.as_slice_mut().expect("standard layout")[idx] = (plus - minus) / (2.0 * step);
    }
    grad
}

/// Largest elementwise relative error between two gradients, with an absolute
/// floor so exactly-zero entries compare cleanly.
pub fn max_relative_error(analytic: &ArrayD<f64>, numeric: &ArrayD<f64>) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape(), "gradient shape mismatch");
    analytic
        .iter()
        .zip(numeric.iter())
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}
