//! Gradient-ascent baselines on the unconstrained log-parameters.
//! Each step is followed by global renormalization.

use crate::circuit::Circuit;
use crate::error::{Error, Result};
use crate::normalize::renormalize;
use crate::params::Params;
use crate::scalar::Scalar;

fn shifted<T: Scalar>(circuit: &Circuit, params: &Params<T>, step: impl Fn(usize) -> T) -> Result<Params<T>> {
    let phi = params.phi().iter().enumerate().map(|(e, p)| *p + step(e)).collect();
    renormalize(circuit, &Params::from_log(circuit, phi)?)
}

fn check_grad<T: Scalar>(params: &Params<T>, grad: &[T]) -> Result<()> {
    if grad.len() == params.len() {
        Ok(())
    } else {
        Err(Error::ParamLength { expected: params.len(), got: grad.len() })
    }
}

/// `phi' = phi + alpha * grad`, then renormalized.
pub fn sgd_step<T: Scalar>(circuit: &Circuit, params: &Params<T>, grad: &[T], alpha: T) -> Result<Params<T>> {
    params.check_len(circuit)?;
    check_grad(params, grad)?;
    shifted(circuit, params, |e| alpha * grad[e])
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Scalar> Default for AdamConfig<T> {
    fn default() -> Self {
        AdamConfig { lr: T::lit(1e-2), beta1: T::lit(0.9), beta2: T::lit(0.999), eps: T::lit(1e-8) }
    }
}

/// First and second moment estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub steps: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(len: usize) -> Self {
        AdamState { m: vec![T::zero(); len], v: vec![T::zero(); len], steps: 0 }
    }
}

/// One bias-corrected Adam ascent step, then renormalized.
pub fn adam_step<T: Scalar>(
    circuit: &Circuit,
    params: &Params<T>,
    grad: &[T],
    state: &mut AdamState<T>,
    cfg: &AdamConfig<T>,
) -> Result<Params<T>> {
    params.check_len(circuit)?;
    check_grad(params, grad)?;
    if state.m.len() != grad.len() || state.v.len() != grad.len() {
        return Err(Error::ParamLength { expected: grad.len(), got: state.m.len() });
    }
    state.steps += 1;
    let t = i32::try_from(state.steps).unwrap_or(i32::MAX);
    let c1 = T::one() - cfg.beta1.powi(t);
    let c2 = T::one() - cfg.beta2.powi(t);
    for ((m, v), g) in state.m.iter_mut().zip(state.v.iter_mut()).zip(grad) {
        *m = cfg.beta1 * *m + (T::one() - cfg.beta1) * *g;
        *v = cfg.beta2 * *v + (T::one() - cfg.beta2) * *g * *g;
    }
    let (m, v) = (&state.m, &state.v);
    shifted(circuit, params, |e| cfg.lr * (m[e] / c1) / ((v[e] / c2).sqrt() + cfg.eps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::fixtures;

    #[test]
    fn sgd_examples() {
        let (c1, p) = fixtures::c1::<f64>();
        let q = sgd_step(&c1, &p, &[0.5, -0.5], 0.1).unwrap();
        let a = 0.05f64.exp();
        let b = (-0.05f64).exp();
        assert!((q.theta(0) - a / (a + b)).abs() < 1e-15);
        assert!((q.theta(0) - 0.5250).abs() < 1e-4);
        assert!(q.is_normalized());
        let (c2, p) = fixtures::c2::<f64>();
        let zero = vec![0.0; p.len()];
        assert_eq!(sgd_step(&c2, &p, &zero, 0.3).unwrap(), p);
        let g: Vec<f64> = (0..p.len()).map(|i| i as f64 * 0.1).collect();
        assert_eq!(sgd_step(&c2, &p, &g, 0.0).unwrap(), p);
        assert!(sgd_step(&c2, &p, &g[..3], 0.1).is_err());
    }

    #[test]
    fn adam_examples() {
        let (c2, p) = fixtures::c2::<f64>();
        let zero = vec![0.0; p.len()];
        let mut state = AdamState::new(p.len());
        assert_eq!(adam_step(&c2, &p, &zero, &mut state, &AdamConfig::default()).unwrap(), p);

        let g: Vec<f64> = (0..p.len()).map(|i| (i as f64 - 4.0) * 0.3).collect();
        let mut state = AdamState::new(p.len());
        let cfg = AdamConfig { lr: 0.0, ..AdamConfig::default() };
        assert_eq!(adam_step(&c2, &p, &g, &mut state, &cfg).unwrap(), p);
    }

    #[test]
    fn adam_constant_gradient_step_is_lr() {
        let (c1, p) = fixtures::c1::<f64>();
        let cfg = AdamConfig::default();
        let mut state = AdamState::new(2);
        let g = [0.3, -0.3];
        let mut cur = p;
        for _ in 0..200 {
            let before = cur.phi()[0] - cur.phi()[1];
            cur = adam_step(&c1, &cur, &g, &mut state, &cfg).unwrap();
            let moved = (cur.phi()[0] - cur.phi()[1]) - before;
            // renormalization shifts both log-weights equally
            assert!((moved - 2.0 * cfg.lr).abs() < 1e-6);
        }
    }
}
