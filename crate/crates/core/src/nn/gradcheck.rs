use rand::Rng;

use alloc::vec::Vec;

use crate::math;

/// Relative error with a `1e-6` floor on the denominator, so components where
/// both gradients vanish compare by absolute difference.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = math::abs(analytic).max(math::abs(numeric)).max(1e-6);
    math::abs(analytic - numeric) / denom
}

/// Compares the analytic gradient of `f` against central finite differences
/// on `probes` randomly chosen coordinates (all coordinates when `probes`
/// covers the vector) and returns the largest relative error.
///
/// `f` maps a parameter vector to `(loss, gradient)`.
pub fn grad_check<F, R>(mut f: F, params: &[f64], probes: usize, step: f64, rng: &mut R) -> f64
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
    R: Rng + ?Sized,
{
    let (_, analytic) = f(params);
    assert_eq!(analytic.len(), params.len(), "gradient length must match parameters");
    let coords: Vec<usize> = if probes >= params.len() {
        (0..params.len()).collect()
    } else {
        (0..probes).map(|_| rng.random_range(0..params.len())).collect()
    };
    let mut probe = params.to_vec();
    let mut worst: f64 = 0.0;
    for i in coords {
        let orig = probe[i];
        probe[i] = orig + step;
        let (plus, _) = f(&probe);
        probe[i] = orig - step;
        let (minus, _) = f(&probe);
        probe[i] = orig;
        let numeric = (plus - minus) / (2.0 * step);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    worst
}
