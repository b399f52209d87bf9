//! Residual U-Net for metal artifact reduction, `g(I) = I + r(I)`, and its losses.

use rand::Rng;

use crate::diffcore::{ParamSet, Scalar, Tape, Tensor, Var};
use crate::env::Restorer;
use crate::error::{MascError, Result};
use crate::image::Image;
use crate::metrics::QualityConfig;
use crate::nn::{ConvUnit, NormKind};

#[derive(Debug, Clone, PartialEq)]
pub struct MarConfig {
    /// Number of pooling stages.
    pub depth: usize,
    /// Channels of the first stage; doubled at every stage below it.
    pub base_channels: usize,
    pub norm: NormKind,
}

impl Default for MarConfig {
    fn default() -> Self {
        Self { depth: 3, base_channels: 16, norm: NormKind::Instance }
    }
}

impl MarConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.base_channels == 0 {
            return Err(MascError::Config("MAR depth and base channels must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Stage {
    first: ConvUnit,
    second: ConvUnit,
}

impl Stage {
    fn new<T: Scalar>(p: &mut ParamSet<T>, name: &str, c_in: usize, c_out: usize, norm: NormKind, rng: &mut impl Rng) -> Self {
        Self {
            first: ConvUnit::new(p, &format!("{name}.0"), c_in, c_out, 3, norm, rng),
            second: ConvUnit::new(p, &format!("{name}.1"), c_out, c_out, 3, norm, rng),
        }
    }

    fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &[Var], x: Var) -> Result<Var> {
        let y = self.first.forward(tape, p, x)?;
        self.second.forward(tape, p, y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarNet<T: Scalar = f32> {
    cfg: MarConfig,
    params: ParamSet<T>,
    down: Vec<Stage>,
    bottleneck: Stage,
    up: Vec<Stage>,
    head_weight: usize,
    head_bias: usize,
}

impl<T: Scalar> MarNet<T> {
    /// Kaiming-uniform convolutions with a zeroed output layer, so the network starts as the identity.
    pub fn new(cfg: &MarConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamSet::new();
        let c = cfg.base_channels;
        let mut down = Vec::with_capacity(cfg.depth);
        let mut c_in = 1;
        for d in 0..cfg.depth {
            let c_out = c << d;
            down.push(Stage::new(&mut params, &format!("down{d}"), c_in, c_out, cfg.norm, rng));
            c_in = c_out;
        }
        let bottleneck = Stage::new(&mut params, "bottleneck", c_in, c << cfg.depth, cfg.norm, rng);
        let mut up = Vec::with_capacity(cfg.depth);
        let mut c_below = c << cfg.depth;
        for d in (0..cfg.depth).rev() {
            let skip = c << d;
            up.push(Stage::new(&mut params, &format!("up{d}"), c_below + skip, skip, cfg.norm, rng));
            c_below = skip;
        }
        let head_weight = params.push("head.weight", Tensor::zeros(&[1, c, 1, 1]));
        let head_bias = params.push("head.bias", Tensor::zeros(&[1]));
        Ok(Self { cfg: cfg.clone(), params, down, bottleneck, up, head_weight, head_bias })
    }

    pub fn config(&self) -> &MarConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn check_extent(&self, h: usize, w: usize) -> Result<()> {
        let f = 1usize << self.cfg.depth;
        if h % f != 0 || w % f != 0 || h == 0 || w == 0 {
            return Err(MascError::InvalidShape { op: "mar_forward", msg: format!("{h}x{w} not divisible by {f}") });
        }
        Ok(())
    }

    /// Returns `(I + r(I), r(I))` for a `[N, 1, H, W]` input.
    pub fn forward_parts(&self, tape: &mut Tape<T>, p: &[Var], x: Var) -> Result<(Var, Var)> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 4 || shape[1] != 1 {
            return Err(MascError::InvalidShape { op: "mar_forward", msg: format!("expected [N, 1, H, W], got {shape:?}") });
        }
        self.check_extent(shape[2], shape[3])?;
        let mut skips = Vec::with_capacity(self.cfg.depth);
        let mut y = x;
        for stage in &self.down {
            let s = stage.forward(tape, p, y)?;
            skips.push(s);
            y = tape.max_pool2(s)?;
        }
        y = self.bottleneck.forward(tape, p, y)?;
        for stage in &self.up {
            let skip = skips.pop().expect("one skip per stage");
            let u = tape.upsample2(y)?;
            let cat = tape.concat_channels(u, skip)?;
            y = stage.forward(tape, p, cat)?;
        }
        let residual = tape.conv2d(y, p[self.head_weight], Some(p[self.head_bias]))?;
        let out = tape.add(x, residual)?;
        Ok((out, residual))
    }

    pub fn forward(&self, tape: &mut Tape<T>, p: &[Var], x: Var) -> Result<Var> {
        Ok(self.forward_parts(tape, p, x)?.0)
    }

    /// Loss over a batch; gradients are accumulated into the parameter tensors.
    pub fn accumulate_loss_grads(&mut self, inputs: &[Image], targets: &[Image], loss: MarLoss) -> Result<f64> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let x = tape.constant(stack_images(inputs)?);
        let y = tape.constant(stack_images(targets)?);
        let pred = self.forward(&mut tape, &p, x)?;
        let l = loss.build(&mut tape, pred, y)?;
        let value = tape.data(l)[0].as_f64();
        tape.backward(l)?;
        self.params.absorb_grads(&tape, &p);
        Ok(value)
    }

    /// Loss over a batch without touching gradients.
    pub fn evaluate_loss(&self, inputs: &[Image], targets: &[Image], loss: MarLoss) -> Result<f64> {
        let mut tape = Tape::new();
        let p = self.params.bind_frozen(&mut tape);
        let x = tape.constant(stack_images(inputs)?);
        let y = tape.constant(stack_images(targets)?);
        let pred = self.forward(&mut tape, &p, x)?;
        let l = loss.build(&mut tape, pred, y)?;
        Ok(tape.data(l)[0].as_f64())
    }

    /// Restores a batch of equally sized images.
    pub fn restore_batch(&self, images: &[Image]) -> Result<Vec<Image>> {
        if images.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let p = self.params.bind_frozen(&mut tape);
        let x = tape.constant(stack_images(images)?);
        let out = self.forward(&mut tape, &p, x)?;
        Ok(unstack_images(tape.data(out), images[0].height, images[0].width))
    }
}

impl Restorer for MarNet<f32> {
    fn restore(&self, image: &Image) -> Result<Image> {
        Ok(self.restore_batch(std::slice::from_ref(image))?.remove(0))
    }
}

/// Stacks images into a `[N, 1, H, W]` tensor.
pub fn stack_images<T: Scalar>(images: &[Image]) -> Result<Tensor<T>> {
    let first = images.first().ok_or(MascError::EmptySplit("image batch"))?;
    let mut data = Vec::with_capacity(images.len() * first.data.len());
    for im in images {
        if !im.same_dims(first) {
            return Err(MascError::ShapeMismatch {
                op: "stack_images",
                lhs: vec![first.height, first.width],
                rhs: vec![im.height, im.width],
            });
        }
        data.extend(im.data.iter().map(|&v| T::lit(v as f64)));
    }
    Tensor::new(vec![images.len(), 1, first.height, first.width], data)
}

pub fn unstack_images<T: Scalar>(data: &[T], height: usize, width: usize) -> Vec<Image> {
    data.chunks(height * width)
        .map(|c| Image { height, width, data: c.iter().map(|v| v.as_f64() as f32).collect() })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainLossConfig {
    pub lambda_ssim: f64,
    pub quality: QualityConfig,
}

impl Default for PretrainLossConfig {
    fn default() -> Self {
        Self { lambda_ssim: 0.5, quality: QualityConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MarLoss {
    /// `L1 + λ·(1 − SSIM)`.
    Pretrain(PretrainLossConfig),
    /// Mean squared error.
    Finetune,
}

impl MarLoss {
    pub fn build<T: Scalar>(&self, tape: &mut Tape<T>, pred: Var, target: Var) -> Result<Var> {
        match self {
            MarLoss::Pretrain(cfg) => pretrain_loss(tape, pred, target, cfg),
            MarLoss::Finetune => finetune_loss(tape, pred, target),
        }
    }
}

/// Mean SSIM over `[N, C, H, W]` images, built from differentiable tape operations.
pub fn ssim_var<T: Scalar>(tape: &mut Tape<T>, x: Var, y: Var, cfg: &QualityConfig) -> Result<Var> {
    let (size, sigma) = (cfg.window, cfg.sigma);
    let mx = tape.gaussian_window(x, size, sigma)?;
    let my = tape.gaussian_window(y, size, sigma)?;
    let xx = tape.mul(x, x)?;
    let yy = tape.mul(y, y)?;
    let xy = tape.mul(x, y)?;
    let sxx = tape.gaussian_window(xx, size, sigma)?;
    let syy = tape.gaussian_window(yy, size, sigma)?;
    let sxy = tape.gaussian_window(xy, size, sigma)?;
    let mx2 = tape.square(mx);
    let my2 = tape.square(my);
    let mxy = tape.mul(mx, my)?;
    let vx = tape.sub(sxx, mx2)?;
    let vy = tape.sub(syy, my2)?;
    let cxy = tape.sub(sxy, mxy)?;
    let (c1, c2) = (cfg.c1(), cfg.c2());
    let n1 = tape.scale(mxy, 2.0);
    let n1 = tape.add_scalar(n1, c1);
    let n2 = tape.scale(cxy, 2.0);
    let n2 = tape.add_scalar(n2, c2);
    let num = tape.mul(n1, n2)?;
    let d1 = tape.add(mx2, my2)?;
    let d1 = tape.add_scalar(d1, c1);
    let d2 = tape.add(vx, vy)?;
    let d2 = tape.add_scalar(d2, c2);
    let den = tape.mul(d1, d2)?;
    let map = tape.div(num, den)?;
    Ok(tape.mean(map))
}

pub fn pretrain_loss<T: Scalar>(tape: &mut Tape<T>, pred: Var, target: Var, cfg: &PretrainLossConfig) -> Result<Var> {
    let diff = tape.sub(pred, target)?;
    let abs = tape.abs(diff);
    let l1 = tape.mean(abs);
    if cfg.lambda_ssim == 0.0 {
        return Ok(l1);
    }
    let s = ssim_var(tape, pred, target, &cfg.quality)?;
    let dissim = tape.scale(s, -cfg.lambda_ssim);
    let dissim = tape.add_scalar(dissim, cfg.lambda_ssim);
    tape.add(l1, dissim)
}

pub fn finetune_loss<T: Scalar>(tape: &mut Tape<T>, pred: Var, target: Var) -> Result<Var> {
    let diff = tape.sub(pred, target)?;
    let sq = tape.square(diff);
    Ok(tape.mean(sq))
}
