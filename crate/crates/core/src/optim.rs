//! AdamW with decoupled weight decay.

use crate::error::{Error, Result};
use crate::model::{Param, WeightBank};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamW {
    /// One update of `param` at step `t` (1-based). Decay is skipped for
    /// vectors (biases, norm gains).
    pub fn update(&self, param: &mut Param, t: u64) -> Result<()> {
        let grad = param.grad.as_ref().ok_or(Error::NoGradients)?;
        let decay = if param.value.shape().len() >= 2 {
            self.weight_decay
        } else {
            0.0
        };
        let bias1 = 1.0 - libm::pow(self.beta1, t as f64);
        let bias2 = 1.0 - libm::pow(self.beta2, t as f64);
        let values = param.value.data_mut();
        for i in 0..values.len() {
            let g = grad[i];
            let m = self.beta1 * param.first_moment[i] + (1.0 - self.beta1) * g;
            let v = self.beta2 * param.second_moment[i] + (1.0 - self.beta2) * g * g;
            param.first_moment[i] = m;
            param.second_moment[i] = v;
            let m_hat = m / bias1;
            let v_hat = v / bias2;
            values[i] -= self.lr * decay * values[i];
            values[i] -= self.lr * m_hat / (libm::sqrt(v_hat) + self.eps);
        }
        Ok(())
    }

    /// Updates every parameter of `bank` from its stored gradient.
    pub fn step(&self, bank: &mut WeightBank) -> Result<()> {
        let t = bank.step + 1;
        for p in bank.params_mut() {
            self.update(p, t)?;
        }
        bank.step = t;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use alloc::vec;

    #[test]
    fn matches_independent_reference_steps() {
        let opt = AdamW {
            lr: 0.01,
            weight_decay: 0.1,
            beta1: 0.8,
            beta2: 0.95,
            eps: 1e-8,
        };
        let mut p = Param::new(Tensor::new(vec![1, 1], vec![0.5]).unwrap());
        let grads = [0.3, -0.2, 0.7];
        // reference, written out step by step
        let (mut w, mut m, mut v) = (0.5f64, 0.0f64, 0.0f64);
        for (i, &g) in grads.iter().enumerate() {
            let t = (i + 1) as i32;
            w *= 1.0 - 0.01 * 0.1;
            m = 0.8 * m + 0.2 * g;
            v = 0.95 * v + 0.05 * g * g;
            let mh = m / (1.0 - 0.8f64.powi(t));
            let vh = v / (1.0 - 0.95f64.powi(t));
            w -= 0.01 * mh / (vh.sqrt() + 1e-8);

            p.grad = Some(vec![g]);
            opt.update(&mut p, t as u64).unwrap();
            assert!((p.value.data()[0] - w).abs() <= 1e-10);
        }
    }

    #[test]
    fn vectors_skip_decay() {
        let opt = AdamW::default();
        let mut p = Param::new(Tensor::new(vec![1], vec![2.0]).unwrap());
        p.grad = Some(vec![0.0]);
        opt.update(&mut p, 1).unwrap();
        assert_eq!(p.value.data()[0], 2.0);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut p = Param::new(Tensor::zeros(&[2]));
        assert_eq!(AdamW::default().update(&mut p, 1), Err(Error::NoGradients));
    }
}
