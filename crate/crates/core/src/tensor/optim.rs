use super::{ParamStore, Scalar};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction. Moments are kept per parameter, in the
/// store's registration order.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, params: &ParamStore<T>) -> Self {
        let zeros = || params.iter().map(|(_, _, t)| vec![T::zero(); t.numel()]).collect();
        Adam { config, step: 0, m: zeros(), v: zeros() }
    }

    /// One update from the gradients currently held by `params`.
    /// Gradients are left in place.
    pub fn step(&mut self, params: &mut ParamStore<T>) -> Result<()> {
        if self.m.len() != params.len() {
            return Err(Error::State(format!(
                "optimizer tracks {} tensors, store has {}",
                self.m.len(),
                params.len()
            )));
        }
        if let Some((_, name, _)) = params.iter().find(|(_, _, t)| t.grad.is_none()) {
            return Err(Error::State(format!("parameter {name} has no gradient")));
        }
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (T::from_f64(c.beta1), T::from_f64(c.beta2));
        let bc1 = T::from_f64(1.0 - c.beta1.powi(self.step as i32));
        let bc2 = T::from_f64(1.0 - c.beta2.powi(self.step as i32));
        let (lr, eps) = (T::from_f64(c.lr), T::from_f64(c.eps));
        let one = T::one();
        for ((t, m), v) in params.tensors_mut().iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let grad = t.grad.take().expect("checked above");
            for (((p, &g), mi), vi) in t.data_mut().iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (one - b1) * g;
                *vi = b2 * *vi + (one - b2) * g * g;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *p -= lr * mhat / (vhat.sqrt() + eps);
            }
            t.grad = Some(grad);
        }
        Ok(())
    }
}
