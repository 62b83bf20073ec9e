use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::params::ParamVector;
use crate::math;
use crate::{Error, Result};

/// Moment estimates and hyperparameters of one Adam optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    /// Fresh state with `beta1 = 0.9`, `beta2 = 0.999`, `epsilon = 1e-8`.
    pub fn new(n: usize) -> Self {
        AdamState {
            first_moment: vec![0.0; n],
            second_moment: vec![0.0; n],
            step_count: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn with_hyperparameters(n: usize, beta1: f64, beta2: f64, epsilon: f64) -> Result<Self> {
        let in_unit = |b: f64| b > 0.0 && b < 1.0;
        if !in_unit(beta1) || !in_unit(beta2) {
            return Err(Error::Config(format!(
                "Adam betas must lie in (0, 1), got {beta1} and {beta2}"
            )));
        }
        if !(epsilon > 0.0) {
            return Err(Error::Config(format!("Adam epsilon must be positive, got {epsilon}")));
        }
        Ok(AdamState {
            beta1,
            beta2,
            epsilon,
            ..AdamState::new(n)
        })
    }
}

/// One bias-corrected Adam update in place.
///
/// A non-finite gradient aborts the update and leaves both `params` and
/// `state` untouched.
pub fn adam_step(
    params: &mut ParamVector,
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    let n = params.len();
    if grads.len() != n {
        return Err(Error::dim("adam_step gradient", n, grads.len()));
    }
    if state.first_moment.len() != n || state.second_moment.len() != n {
        return Err(Error::dim("adam_step moments", n, state.first_moment.len()));
    }
    if !(lr > 0.0) {
        return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!(
            "gradient component {i} is {} at Adam step {}",
            grads[i],
            state.step_count + 1
        )));
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - math::powi(state.beta1, t);
    let bc2 = 1.0 - math::powi(state.beta2, t);
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    for (((p, &g), m), v) in params
        .values_mut()
        .iter_mut()
        .zip(grads)
        .zip(state.first_moment.iter_mut())
        .zip(state.second_moment.iter_mut())
    {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (math::sqrt(v_hat) + eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayoutEntry;
    use alloc::vec;

    fn scalar(v: f64) -> ParamVector {
        ParamVector::new(vec![v], vec![LayoutEntry::new("x", vec![1])]).unwrap()
    }

    #[test]
    fn zero_gradient_first_step_is_noop() {
        let mut p = scalar(1.5);
        let mut s = AdamState::new(1);
        adam_step(&mut p, &[0.0], &mut s, 0.1).unwrap();
        assert_eq!(p.values(), &[1.5]);
        assert_eq!(s.step_count, 1);
    }

    #[test]
    fn first_step_magnitude_is_lr() {
        let mut p = scalar(0.0);
        let mut s = AdamState::new(1);
        adam_step(&mut p, &[1.0], &mut s, 0.001).unwrap();
        let expected = -0.001 / (1.0 + 1e-8);
        assert!((p.values()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_aborts_without_mutation() {
        let mut p = scalar(2.0);
        let mut s = AdamState::new(1);
        let err = adam_step(&mut p, &[f64::INFINITY], &mut s, 0.1).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
        assert_eq!(p.values(), &[2.0]);
        assert_eq!(s.step_count, 0);
    }

    #[test]
    fn bad_hyperparameters_rejected() {
        assert!(AdamState::with_hyperparameters(1, 1.0, 0.999, 1e-8).is_err());
        assert!(AdamState::with_hyperparameters(1, 0.9, 0.0, 1e-8).is_err());
        assert!(AdamState::with_hyperparameters(1, 0.9, 0.999, 0.0).is_err());
    }
}
