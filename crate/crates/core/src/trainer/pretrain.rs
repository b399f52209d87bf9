use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffcore::AdamState;
use crate::error::{MascError, Result};
use crate::image::Image;
use crate::marnet::{MarConfig, MarLoss, MarNet, PretrainLossConfig};
use crate::metalsim::PairedSample;
use crate::metrics::mae;

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub mar: MarConfig,
    pub loss: PretrainLossConfig,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self { mar: MarConfig::default(), loss: PretrainLossConfig::default(), epochs: 100, batch: 8, lr: 1e-3, seed: 0 }
    }
}

/// Fully sampled (metal, clean) images, both divided by the clean peak.
pub fn restoration_pairs(samples: &[PairedSample]) -> (Vec<Image>, Vec<Image>) {
    samples
        .iter()
        .map(|s| {
            let k = 1.0 / s.reference.max();
            (s.metal_image.scaled(k), s.reference.scaled(k))
        })
        .unzip()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_l1: f64,
}

impl EpochLog {
    pub const HEADER: [&'static str; 4] = ["epoch", "train_loss", "val_loss", "val_l1"];

    pub fn fields(&self) -> Vec<String> {
        vec![self.epoch.to_string(), format!("{:.9}", self.train_loss), format!("{:.9}", self.val_loss), format!("{:.9}", self.val_l1)]
    }
}

pub struct PretrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub net: MarNet,
    pub best_epoch: usize,
    pub history: Vec<EpochLog>,
    /// Validation L1 of the unprocessed metal images.
    pub identity_val_l1: f64,
}

/// Mean per-image L1 between restored inputs and targets.
pub fn mean_l1(net: &MarNet, inputs: &[Image], targets: &[Image], batch: usize) -> Result<f64> {
    let mut total = 0.0;
    for (xs, ys) in inputs.chunks(batch.max(1)).zip(targets.chunks(batch.max(1))) {
        for (p, y) in net.restore_batch(xs)?.iter().zip(ys) {
            total += mae(p, y)?;
        }
    }
    Ok(total / inputs.len().max(1) as f64)
}

fn mean_loss(net: &MarNet, inputs: &[Image], targets: &[Image], batch: usize, loss: &MarLoss) -> Result<f64> {
    let mut total = 0.0;
    for (xs, ys) in inputs.chunks(batch).zip(targets.chunks(batch)) {
        total += net.evaluate_loss(xs, ys, loss.clone())? * xs.len() as f64;
    }
    Ok(total / inputs.len() as f64)
}

/// Trains the restoration network on fully sampled (metal → clean) pairs.
pub fn pretrain_mar(
    train: &[PairedSample],
    val: &[PairedSample],
    cfg: &PretrainConfig,
    mut on_epoch: impl FnMut(&EpochLog) -> Result<()>,
) -> Result<PretrainOutcome> {
    if train.is_empty() {
        return Err(MascError::EmptySplit("training"));
    }
    if val.is_empty() {
        return Err(MascError::EmptySplit("validation"));
    }
    if cfg.batch == 0 || !(cfg.lr >= 0.0) {
        return Err(MascError::Config("pretraining batch must be positive and learning rate non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = MarNet::new(&cfg.mar, &mut rng)?;
    net.check_extent(train[0].height(), train[0].width())?;
    let mut adam = AdamState::new(net.params(), cfg.lr);
    let (tx, ty) = restoration_pairs(train);
    let (vx, vy) = restoration_pairs(val);
    let loss = MarLoss::Pretrain(cfg.loss.clone());
    let identity_val_l1 = vx.iter().zip(&vy).map(|(x, y)| mae(x, y)).sum::<Result<f64>>()? / vx.len() as f64;

    let mut best = (mean_loss(&net, &vx, &vy, cfg.batch, &loss)?, 0usize, net.params().clone());
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..tx.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for idx in order.chunks(cfg.batch) {
            let xs: Vec<Image> = idx.iter().map(|&i| tx[i].clone()).collect();
            let ys: Vec<Image> = idx.iter().map(|&i| ty[i].clone()).collect();
            net.params_mut().zero_grad();
            total += net.accumulate_loss_grads(&xs, &ys, loss.clone())? * idx.len() as f64;
            adam.step(net.params_mut())?;
        }
        net.params_mut().zero_grad();
        let val_loss = mean_loss(&net, &vx, &vy, cfg.batch, &loss)?;
        let row = EpochLog { epoch, train_loss: total / tx.len() as f64, val_loss, val_l1: mean_l1(&net, &vx, &vy, cfg.batch)? };
        if !row.train_loss.is_finite() {
            return Err(MascError::NonFinite("pretraining loss"));
        }
        log::debug!("pretrain epoch {epoch}: train {:.5} val {:.5} l1 {:.5}", row.train_loss, row.val_loss, row.val_l1);
        if val_loss < best.0 {
            best = (val_loss, epoch, net.params().clone());
        }
        on_epoch(&row)?;
        history.push(row);
    }
    net.params_mut().copy_from(&best.2)?;
    Ok(PretrainOutcome { net, best_epoch: best.1, history, identity_val_l1 })
}
