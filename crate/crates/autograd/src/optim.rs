//! Bias-corrected Adam. Updates run in place and clear the gradients they
//! consume.

use crate::error::{Error, Result};
use crate::Parameter;

#[derive(Clone, Copy, Debug)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Adam {
    pub fn new(lr: f32) -> Adam {
        Adam {
            lr,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Applies one update to every parameter. Rejects the whole batch if any
    /// parameter is missing its gradient, before touching any of them.
    pub fn step<'a>(&self, params: impl IntoIterator<Item = &'a mut Parameter>) -> Result<()> {
        let params: Vec<&'a mut Parameter> = params.into_iter().collect();
        for p in &params {
            if !p.tensor().has_grad() {
                return Err(Error::MissingGrad(p.shape().to_string()));
            }
        }
        for p in params {
            p.step_count += 1;
            let t = p.step_count;
            let bc1 = 1.0 - (self.beta1 as f64).powi(t as i32);
            let bc2 = 1.0 - (self.beta2 as f64).powi(t as i32);
            let tensor = p.tensor().clone();
            let grad = tensor.grad().expect("checked above");
            let mut node = tensor.node.borrow_mut();
            for i in 0..node.data.len() {
                let g = grad[i];
                p.adam_m[i] = self.beta1 * p.adam_m[i] + (1.0 - self.beta1) * g;
                p.adam_v[i] = self.beta2 * p.adam_v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = (p.adam_m[i] as f64 / bc1) as f32;
                let v_hat = (p.adam_v[i] as f64 / bc2) as f32;
                node.data[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            node.grad = None;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{ops, Shape, Tensor};

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Parameter::new(vec![1.0], Shape::scalar()).unwrap();
        let loss = ops::mean_all(p.tensor());
        loss.backward().unwrap(); // grad = 1
        Adam::new(0.1).step([&mut p]).unwrap();
        let v = p.tensor().to_vec()[0];
        assert!((v - 0.9).abs() < 1e-6, "expected ~0.9, got {v}");
        assert!(!p.tensor().has_grad(), "grad must be cleared");
    }

    #[test]
    fn zero_grad_leaves_parameter_unchanged() {
        let mut p = Parameter::new(vec![2.5], Shape::scalar()).unwrap();
        let c = Tensor::scalar(3.0);
        let loss = ops::mean_all(&ops::mul(p.tensor(), &c).unwrap());
        loss.backward().unwrap();
        // overwrite with an explicit zero gradient
        p.tensor().clear_grad();
        p.tensor().accumulate_grad(&[0.0]);
        Adam::new(0.1).step([&mut p]).unwrap();
        assert!((p.tensor().to_vec()[0] - 2.5).abs() < 1e-7);
    }

    #[test]
    fn missing_grad_is_rejected() {
        let mut p = Parameter::new(vec![1.0], Shape::scalar()).unwrap();
        assert!(matches!(
            Adam::new(0.1).step([&mut p]),
            Err(Error::MissingGrad(_))
        ));
    }

    #[test]
    fn quadratic_bowl_converges() {
        let mut p = Parameter::new(vec![3.0], Shape::scalar()).unwrap();
        let opt = Adam::new(0.1);
        for _ in 0..200 {
            let sq = ops::mul(p.tensor(), p.tensor()).unwrap();
            let loss = ops::mean_all(&sq);
            loss.backward().unwrap();
            opt.step([&mut p]).unwrap();
        }
        let v = p.tensor().to_vec()[0];
        assert!(v.abs() < 1e-2, "x = {v} after 200 steps");
    }
}
