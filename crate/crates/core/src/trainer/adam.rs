use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::NamedTensor;
use crate::scalar::Scalar;
use crate::tensor_core::Tensor;

/// Adam hyperparameters with an L2 term added to the gradient.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub l2: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            l2: 5e-4,
        }
    }
}

/// First and second moment estimates plus the step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &[NamedTensor<T>]) -> Self {
        AdamState {
            m: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            t: 0,
        }
    }
}

/// One Adam update. Nothing is modified when a gradient is non-finite or
/// mis-shaped.
pub fn adam_step<T: Scalar>(
    params: &mut [NamedTensor<T>],
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::shape(format!(
            "{} parameters, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.value.shape() != g.shape() {
            return Err(Error::shape(format!(
                "gradient of {} has shape {:?}, parameter {:?}",
                p.name,
                g.shape(),
                p.value.shape()
            )));
        }
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("gradient of {}", p.name)));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let (c1, c2) = (T::one() - b1, T::one() - b2);
    let lr = T::lit(cfg.learning_rate);
    let l2 = T::lit(cfg.l2);
    let eps = T::lit(cfg.epsilon);
    let bc1 = T::lit(1.0 - cfg.beta1.powi(t));
    let bc2 = T::lit(1.0 - cfg.beta2.powi(t));
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        let w = p.value.data_mut();
        for i in 0..w.len() {
            let ge = g.data()[i] + l2 * w[i];
            let mi = b1 * m.data()[i] + c1 * ge;
            let vi = b2 * v.data()[i] + c2 * ge * ge;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            w[i] -= lr * (mi / bc1) / ((vi / bc2).sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(v: f64) -> Vec<NamedTensor<f64>> {
        vec![NamedTensor {
            name: "w".into(),
            value: Tensor::scalar(v),
        }]
    }

    #[test]
    fn zero_gradient_is_identity_without_decay() {
        let mut p = param(0.0);
        let mut s = AdamState::new(&p);
        let cfg = AdamConfig { l2: 0.0, ..AdamConfig::default() };
        for _ in 0..3 {
            adam_step(&mut p, &[Tensor::scalar(0.0)], &mut s, &cfg).unwrap();
        }
        assert_eq!(p[0].value.data()[0], 0.0);
        assert_eq!((s.m[0].data()[0], s.v[0].data()[0], s.t), (0.0, 0.0, 3));
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = param(1.0);
        let mut s = AdamState::new(&p);
        let cfg = AdamConfig { l2: 0.0, ..AdamConfig::default() };
        adam_step(&mut p, &[Tensor::scalar(0.37)], &mut s, &cfg).unwrap();
        let expect = 1.0 - 1e-4 * 0.37 / (0.37 + 1e-8);
        assert!((p[0].value.data()[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn decay_shrinks_weights_monotonically() {
        let mut p = param(0.5);
        let mut s = AdamState::new(&p);
        let cfg = AdamConfig { learning_rate: 1e-2, ..AdamConfig::default() };
        let mut last = 0.5;
        for _ in 0..30 {
            adam_step(&mut p, &[Tensor::scalar(0.0)], &mut s, &cfg).unwrap();
            let w = p[0].value.data()[0];
            assert!(w < last && w > 0.0);
            last = w;
        }
    }

    #[test]
    fn non_finite_gradient_aborts_untouched() {
        let mut p = param(0.5);
        let mut s = AdamState::new(&p);
        let err = adam_step(&mut p, &[Tensor::scalar(f64::NAN)], &mut s, &AdamConfig::default());
        assert!(matches!(err, Err(Error::NonFinite(_))));
        assert_eq!((p[0].value.data()[0], s.t), (0.5, 0));
    }
}
