//! Held-out evaluation of acquisition policies with and without restoration.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::sample_seed;
use crate::env::{AcquisitionEnv, EnvConfig, Restorer, RewardMode};
use crate::error::{MascError, Result};
use crate::image::Image;
use crate::marnet::MarNet;
use crate::metalsim::PairedSample;
use crate::metrics::{mean_std, mse, ssim, MetricSet, QualityConfig};
use crate::policies::{argmax_unacquired, baseline_next_line, BaselineKind, PolicyNet, QNet};

/// How lines are chosen during evaluation. Learned policies act greedily.
#[derive(Clone, Copy)]
pub enum Acquirer<'a> {
    Baseline(BaselineKind),
    /// Actor-critic policy; `observe_with` is the restorer whose output it observes, if any.
    Policy { net: &'a PolicyNet, observe_with: Option<&'a MarNet> },
    Q(&'a QNet),
}

/// Quality at one point of the acquisition trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub ssim: f64,
    pub mse: f64,
    pub quality: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    /// Final-image metrics per test sample, in dataset order.
    pub final_metrics: Vec<MetricSet>,
    /// Per-sample trajectories of `budget + 1` points (initial state included).
    pub curves: Vec<Vec<CurvePoint>>,
    pub trajectories: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(v: &[f64]) -> Self {
        let (mean, std) = mean_std(v);
        Self { mean, std }
    }
}

impl EvalResult {
    pub fn ssim(&self) -> Vec<f64> {
        self.final_metrics.iter().map(|m| m.ssim).collect()
    }

    pub fn metric(&self, f: impl Fn(&MetricSet) -> f64) -> MeanStd {
        MeanStd::of(&self.final_metrics.iter().map(f).collect::<Vec<_>>())
    }

    /// Mean and standard deviation of each curve point over samples.
    pub fn curve_summary(&self, f: impl Fn(&CurvePoint) -> f64) -> Vec<MeanStd> {
        let len = self.curves.first().map_or(0, Vec::len);
        (0..len).map(|t| MeanStd::of(&self.curves.iter().map(|c| f(&c[t])).collect::<Vec<_>>())).collect()
    }
}

fn point(image: &Image, reference: &Image, q: &QualityConfig) -> Result<CurvePoint> {
    let s = ssim(image, reference, q)?;
    let e = mse(image, reference)?;
    let nmse = e / (reference.data.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / reference.data.len() as f64);
    Ok(CurvePoint { ssim: s, mse: e, quality: q.lambda_ssim * s + q.lambda_nmse * (1.0 - nmse) })
}

/// Runs one greedy/heuristic episode per sample; `mar` (if any) processes every reconstruction before scoring.
pub fn evaluate(
    samples: &[PairedSample],
    env_cfg: &EnvConfig,
    acquirer: Acquirer<'_>,
    mar: Option<&MarNet>,
    seed: u64,
) -> Result<EvalResult> {
    if samples.is_empty() {
        return Err(MascError::EmptySplit("evaluation"));
    }
    let observe_with = match acquirer {
        Acquirer::Policy { observe_with, .. } => observe_with,
        _ => None,
    };
    let cfg = EnvConfig {
        reward_mode: if observe_with.is_some() { RewardMode::Restored } else { RewardMode::Raw },
        ..env_cfg.clone()
    };
    let obs_restorer = observe_with.map(|m| m as &dyn Restorer);
    // the observation already holds the scoring network's output when both are the same
    let reuse = matches!((observe_with, mar), (Some(a), Some(b)) if std::ptr::eq(a, b));

    let mut out = EvalResult { final_metrics: Vec::new(), curves: Vec::new(), trajectories: Vec::new() };
    for (i, sample) in samples.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(seed, i as u64));
        let mut env = AcquisitionEnv::reset(sample, &cfg, obs_restorer)?;
        let mut raw = vec![env.state().image.clone()];
        let mut shown = vec![env.processed_image().clone()];
        let mut actions = Vec::with_capacity(cfg.budget);
        while !env.is_done() {
            let mask = &env.state().mask;
            let a = match acquirer {
                Acquirer::Baseline(kind) => baseline_next_line(kind, mask, cfg.total_lines(), &mut rng)?,
                Acquirer::Policy { net, .. } => argmax_unacquired(&net.infer(&env.observation(), &[mask])?[0].log_probs, mask)?,
                Acquirer::Q(net) => argmax_unacquired(&net.q_values(&env.observation(), 1)?[0], mask)?,
            };
            env.step(a, obs_restorer)?;
            actions.push(a);
            raw.push(env.state().image.clone());
            shown.push(env.processed_image().clone());
        }
        let scored = match mar {
            None => raw,
            Some(_) if reuse => shown,
            Some(m) => m.restore_batch(&raw)?,
        };
        let reference = env.reference();
        let curve = scored.iter().map(|im| point(im, reference, &cfg.quality)).collect::<Result<Vec<_>>>()?;
        out.final_metrics.push(MetricSet::evaluate(scored.last().expect("initial state"), reference, &cfg.quality)?);
        out.curves.push(curve);
        out.trajectories.push(actions);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_samples, DataConfig};
    use crate::marnet::MarConfig;
    use crate::nn::NormKind;
    use crate::policies::EncoderConfig;

    #[test]
    fn curves_have_budget_plus_one_points_and_are_deterministic() {
        let data = generate_samples(&DataConfig::default(), 1, 0..3, 1).unwrap();
        let cfg = EnvConfig::default();
        for kind in BaselineKind::ALL {
            let a = evaluate(&data, &cfg, Acquirer::Baseline(kind), None, 9).unwrap();
            let b = evaluate(&data, &cfg, Acquirer::Baseline(kind), None, 9).unwrap();
            assert_eq!(a, b);
            assert!(a.curves.iter().all(|c| c.len() == cfg.budget + 1));
            let last = a.curves[0].last().unwrap();
            assert!((last.ssim - a.final_metrics[0].ssim).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_restorer_matches_no_restorer() {
        let data = generate_samples(&DataConfig::default(), 2, 0..2, 1).unwrap();
        let cfg = EnvConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mar = MarNet::new(&MarConfig { depth: 2, base_channels: 4, norm: NormKind::Instance }, &mut rng).unwrap();
        let net = PolicyNet::new(&EncoderConfig { channels: vec![4, 4, 4], norm: NormKind::Instance }, 64, 64, &mut rng).unwrap();
        let plain = evaluate(&data, &cfg, Acquirer::Policy { net: &net, observe_with: None }, None, 0).unwrap();
        let with = evaluate(&data, &cfg, Acquirer::Policy { net: &net, observe_with: Some(&mar) }, Some(&mar), 0).unwrap();
        assert_eq!(plain, with);
    }
}
