use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.beta1 > 0.0
            && self.beta1 < 1.0
            && self.beta2 > 0.0
            && self.beta2 < 1.0
            && self.epsilon > 0.0;
        if !ok {
            return Err(Error::InvalidInput(format!("invalid ADAM config {self:?}")));
        }
        Ok(())
    }
}

/// First and second moment estimates for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments<T> {
    pub m: Tensor<T>,
    pub v: Tensor<T>,
}

impl<T: Scalar> Moments<T> {
    pub fn zeros_like(p: &Tensor<T>) -> Self {
        Moments {
            m: Tensor::zeros(p.shape()),
            v: Tensor::zeros(p.shape()),
        }
    }
}

/// One bias-corrected ADAM update of `params` at step `t` (1-based).
pub fn adam_step<T: Scalar>(
    params: &mut Tensor<T>,
    grads: &Tensor<T>,
    state: &mut Moments<T>,
    cfg: &AdamConfig,
    t: u64,
) -> Result<()> {
    if t == 0 {
        return Err(Error::InvalidInput("ADAM step index starts at 1".into()));
    }
    if params.shape() != grads.shape()
        || params.shape() != state.m.shape()
        || params.shape() != state.v.shape()
    {
        return Err(Error::Shape(format!(
            "ADAM: params {:?}, grads {:?}, moments {:?}/{:?}",
            params.shape(),
            grads.shape(),
            state.m.shape(),
            state.v.shape()
        )));
    }
    let b1 = T::from_f64_lossy(cfg.beta1);
    let b2 = T::from_f64_lossy(cfg.beta2);
    let c1 = T::from_f64_lossy(1.0 - cfg.beta1.powf(t as f64));
    let c2 = T::from_f64_lossy(1.0 - cfg.beta2.powf(t as f64));
    let lr = T::from_f64_lossy(cfg.learning_rate);
    let eps = T::from_f64_lossy(cfg.epsilon);
    let one = T::one();
    for (((p, &g), m), v) in params
        .data_mut()
        .iter_mut()
        .zip(grads.data())
        .zip(state.m.data_mut())
        .zip(state.v.data_mut())
    {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Tensor::from_vec(&[3], vec![1.0f64, -2.0, 0.5]).unwrap();
        let g = Tensor::zeros(&[3]);
        let mut s = Moments::zeros_like(&p);
        adam_step(&mut p, &g, &mut s, &AdamConfig::default(), 1).unwrap();
        assert_eq!(p.data(), &[1.0, -2.0, 0.5]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = AdamConfig::default();
        let mut p = Tensor::from_vec(&[1], vec![0.0f64]).unwrap();
        let g = Tensor::from_vec(&[1], vec![1.0]).unwrap();
        let mut s = Moments::zeros_like(&p);
        adam_step(&mut p, &g, &mut s, &cfg, 1).unwrap();
        let expected = -cfg.learning_rate / (1.0 + cfg.epsilon);
        assert!((p.data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_step_tends_to_learning_rate() {
        let cfg = AdamConfig {
            learning_rate: 0.01,
            ..Default::default()
        };
        let mut p = Tensor::from_vec(&[1], vec![0.0f64]).unwrap();
        let g = Tensor::from_vec(&[1], vec![0.3]).unwrap();
        let mut s = Moments::zeros_like(&p);
        let mut last = 0.0;
        for t in 1..=5000 {
            let before = p.data()[0];
            adam_step(&mut p, &g, &mut s, &cfg, t).unwrap();
            last = before - p.data()[0];
        }
        assert!((last - cfg.learning_rate).abs() < 1e-6, "step {last}");
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut p = Tensor::<f32>::zeros(&[2]);
        let g = Tensor::zeros(&[3]);
        let mut s = Moments::zeros_like(&p);
        let cfg = AdamConfig::default();
        assert!(adam_step(&mut p, &g, &mut s, &cfg, 1).is_err());
        let g = Tensor::zeros(&[2]);
        assert!(adam_step(&mut p, &g, &mut s, &cfg, 0).is_err());
    }
}
