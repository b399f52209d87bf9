use rand::Rng;

use super::{Scalar, Tape, Tensor, Var};
use crate::error::{MascError, Result};

/// Named, ordered collection of learnable tensors.
///
/// Gradients live in each tensor's slot; `bind` copies the values onto a
/// fresh tape and `absorb_grads` pulls the tape gradients back.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet<T: Scalar = f32> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self { names: Vec::new(), tensors: Vec::new() }
    }

    /// Registers a tensor and returns its index.
    pub fn push(&mut self, name: impl Into<String>, t: Tensor<T>) -> usize {
        self.names.push(name.into());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, i: usize) -> &Tensor<T> {
        &self.tensors[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Tensor<T> {
        &mut self.tensors[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Records every parameter as a differentiable leaf, in registration order.
    pub fn bind(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.leaf(Tensor::new(t.shape().to_vec(), t.data().to_vec()).expect("valid"))).collect()
    }

    /// Records every parameter as a constant (inference only).
    pub fn bind_frozen(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| tape.constant(Tensor::new(t.shape().to_vec(), t.data().to_vec()).expect("valid")))
            .collect()
    }

    pub fn absorb_grads(&mut self, tape: &Tape<T>, vars: &[Var]) {
        for (t, &v) in self.tensors.iter_mut().zip(vars) {
            if let Some(g) = tape.grad(v) {
                t.accumulate_grad(g);
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    pub fn grad_norm(&self) -> f64 {
        self.tensors
            .iter()
            .filter_map(|t| t.grad())
            .flat_map(|g| g.iter().map(|v| v.as_f64() * v.as_f64()))
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales all gradients so their global L2 norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let s = T::lit(max_norm / norm);
            for t in &mut self.tensors {
                if let Some(g) = t.grad_mut() {
                    g.iter_mut().for_each(|v| *v *= s);
                }
            }
        }
        norm
    }

    /// Copies values from `other`, which must have identical names and shapes.
    pub fn copy_from(&mut self, other: &ParamSet<T>) -> Result<()> {
        if self.names != other.names {
            return Err(MascError::Config("parameter sets have different layouts".into()));
        }
        for (dst, src) in self.tensors.iter_mut().zip(&other.tensors) {
            if dst.shape() != src.shape() {
                return Err(MascError::ShapeMismatch { op: "copy_from", lhs: dst.shape().to_vec(), rhs: src.shape().to_vec() });
            }
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }

    /// Replaces values from a list of named tensors (e.g. a loaded checkpoint).
    pub fn load_named<'a>(&mut self, named: impl IntoIterator<Item = (&'a str, &'a Tensor<T>)>) -> Result<()> {
        let named: Vec<_> = named.into_iter().collect();
        for (name, dst) in self.names.iter().zip(self.tensors.iter_mut()) {
            let (_, src) = named.iter().find(|(n, _)| *n == name).ok_or_else(|| MascError::MissingParam(name.clone()))?;
            if dst.shape() != src.shape() {
                return Err(MascError::ShapeMismatch { op: "load_named", lhs: dst.shape().to_vec(), rhs: src.shape().to_vec() });
            }
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }
}

/// Kaiming-uniform (fan-in) initialization: U(-b, b) with b = sqrt(6 / fan_in).
pub fn kaiming_uniform<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| T::lit(rng.gen_range(-bound..bound)))
}
