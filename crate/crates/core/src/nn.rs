//! Layer building blocks shared by the restoration and policy networks.

use rand::Rng;

use crate::diffcore::{kaiming_uniform, ParamSet, Scalar, Tape, Tensor, Var};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    /// Per-sample, per-channel normalization with a learned scale and shift.
    Instance,
    /// Plain convolution followed directly by the nonlinearity.
    None,
}

pub const NORM_EPS: f64 = 1e-5;

/// Parameter indices of a `conv → norm → ReLU` unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvUnit {
    pub weight: usize,
    pub bias: usize,
    pub norm: Option<(usize, usize)>,
}

impl ConvUnit {
    pub fn new<T: Scalar>(
        params: &mut ParamSet<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        norm: NormKind,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = c_in * kernel * kernel;
        let weight = params.push(format!("{name}.weight"), kaiming_uniform(&[c_out, c_in, kernel, kernel], fan_in, rng));
        let bias = params.push(format!("{name}.bias"), Tensor::zeros(&[c_out]));
        let norm = match norm {
            NormKind::Instance => Some((
                params.push(format!("{name}.norm.gamma"), Tensor::full(&[c_out], T::one())),
                params.push(format!("{name}.norm.beta"), Tensor::zeros(&[c_out])),
            )),
            NormKind::None => None,
        };
        Self { weight, bias, norm }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &[Var], x: Var) -> Result<Var> {
        let y = tape.conv2d(x, p[self.weight], Some(p[self.bias]))?;
        let y = match self.norm {
            Some((g, b)) => tape.instance_norm(y, Some(p[g]), Some(p[b]), NORM_EPS)?,
            None => y,
        };
        Ok(tape.relu(y))
    }
}

/// Parameter indices of a fully connected layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dense {
    pub weight: usize,
    pub bias: usize,
}

impl Dense {
    pub fn new<T: Scalar>(params: &mut ParamSet<T>, name: &str, f_in: usize, f_out: usize, rng: &mut impl Rng) -> Self {
        let weight = params.push(format!("{name}.weight"), kaiming_uniform(&[f_out, f_in], f_in, rng));
        let bias = params.push(format!("{name}.bias"), Tensor::zeros(&[f_out]));
        Self { weight, bias }
    }

    /// Like `new` with the initial weights multiplied by `gain`.
    pub fn with_gain<T: Scalar>(params: &mut ParamSet<T>, name: &str, f_in: usize, f_out: usize, gain: f64, rng: &mut impl Rng) -> Self {
        let layer = Self::new(params, name, f_in, f_out, rng);
        params.get_mut(layer.weight).data_mut().iter_mut().for_each(|w| *w = *w * T::lit(gain));
        layer
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &[Var], x: Var) -> Result<Var> {
        tape.linear(x, p[self.weight], Some(p[self.bias]))
    }
}
