use super::{ParamSet, Scalar};
use crate::error::{MascError, Result};

/// Adam moments for one [`ParamSet`].
#[derive(Debug, Clone)]
pub struct AdamState<T: Scalar = f32> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamSet<T>, lr: f64) -> Self {
        let zeros = || params.tensors().iter().map(|t| vec![T::zero(); t.numel()]).collect();
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, first: zeros(), second: zeros() }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update from the gradients stored in `params`.
    /// Parameters without a gradient are treated as having a zero gradient.
    pub fn step(&mut self, params: &mut ParamSet<T>) -> Result<()> {
        if params.len() != self.first.len() {
            return Err(MascError::Config(format!(
                "optimizer tracks {} tensors, parameter set has {}",
                self.first.len(),
                params.len()
            )));
        }
        for (t, m) in params.tensors().iter().zip(&self.first) {
            if t.numel() != m.len() {
                return Err(MascError::ShapeMismatch { op: "adam_step", lhs: t.shape().to_vec(), rhs: vec![m.len()] });
            }
        }
        self.step += 1;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let step_size = T::lit(self.lr / bc1);
        let bc2_sqrt = T::lit(bc2.sqrt());
        let eps = T::lit(self.eps);
        for ((t, m), v) in params.tensors_mut().iter_mut().zip(&mut self.first).zip(&mut self.second) {
            let Some(g) = t.grad().map(<[T]>::to_vec) else {
                // zero gradient: moments decay, parameter moves by the decayed first moment
                for (p, (mi, vi)) in t.data_mut().iter_mut().zip(m.iter_mut().zip(v.iter_mut())) {
                    *mi *= b1;
                    *vi *= b2;
                    *p -= step_size * *mi / ((*vi).sqrt() / bc2_sqrt + eps);
                }
                continue;
            };
            for ((p, &gi), (mi, vi)) in t.data_mut().iter_mut().zip(&g).zip(m.iter_mut().zip(v.iter_mut())) {
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                *p -= step_size * *mi / ((*vi).sqrt() / bc2_sqrt + eps);
            }
        }
        Ok(())
    }
}
