//! Sequential line-selection environment over one paired sample.
//!
//! Intensities are normalized per sample by the peak of the clean reference
//! (both k-spaces are scaled by `1 / max(I*)`), so quality metrics use a data
//! range of 1.

use crate::error::{MascError, Result};
use crate::fourier::{reconstruct, KSpaceGrid, LineMask};
use crate::image::Image;
use crate::metalsim::PairedSample;
use crate::metrics::{quality, QualityConfig};

/// Image-to-image correction applied to reconstructions (e.g. the MAR network).
pub trait Restorer {
    fn restore(&self, image: &Image) -> Result<Image>;
}

/// Leaves images unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityRestorer;

impl Restorer for IdentityRestorer {
    fn restore(&self, image: &Image) -> Result<Image> {
        Ok(image.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardMode {
    /// Quality of the raw reconstruction.
    Raw,
    /// Quality of the restored reconstruction; observations also show the restored image.
    Restored,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub initial_lines: usize,
    pub budget: usize,
    pub alpha: f64,
    pub quality: QualityConfig,
    pub reward_mode: RewardMode,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self::for_acceleration(64, 10.0)
    }
}

impl EnvConfig {
    /// Line counts for an acceleration factor: `round(n_pe / accel)` lines in total,
    /// of which a fraction (10% at 10×, 20% below) is acquired up front.
    pub fn for_acceleration(n_pe: usize, accel: f64) -> Self {
        let total = ((n_pe as f64 / accel).round() as usize).clamp(2, n_pe);
        let frac = if accel >= 10.0 { 0.1 } else { 0.2 };
        let initial = ((total as f64 * frac).round() as usize).max(1).min(total - 1);
        Self {
            initial_lines: initial,
            budget: total - initial,
            alpha: 100.0,
            quality: QualityConfig::default(),
            reward_mode: RewardMode::Raw,
        }
    }

    pub fn with_mode(mut self, mode: RewardMode) -> Self {
        self.reward_mode = mode;
        self
    }

    pub fn total_lines(&self) -> usize {
        self.initial_lines + self.budget
    }

    pub fn validate(&self, n_pe: usize) -> Result<()> {
        if self.initial_lines + self.budget > n_pe {
            return Err(MascError::Config(format!(
                "{} initial + {} budget lines exceed {n_pe} phase-encode lines",
                self.initial_lines, self.budget
            )));
        }
        if self.budget == 0 {
            return Err(MascError::Config("budget must be at least one line".into()));
        }
        if !(self.alpha > 0.0) {
            return Err(MascError::Config("reward scale must be positive".into()));
        }
        self.quality.validate()
    }
}

/// The `count` columns nearest the DC column `n_pe / 2`, ties toward the lower index.
pub fn center_lines(n_pe: usize, count: usize) -> Vec<usize> {
    let dc = n_pe / 2;
    let mut order: Vec<usize> = (0..n_pe).collect();
    order.sort_by_key(|&j| (j.abs_diff(dc), j));
    order.truncate(count);
    order
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionState {
    /// Magnitude reconstruction from the acquired metal k-space lines.
    pub image: Image,
    pub mask: LineMask,
    pub steps: usize,
    pub budget_remaining: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub done: bool,
}

/// One episode over a normalized paired sample.
#[derive(Debug, Clone)]
pub struct AcquisitionEnv {
    cfg: EnvConfig,
    metal_kspace: KSpaceGrid,
    reference: Image,
    state: AcquisitionState,
    /// Image shown to the policy and the quality it earns.
    processed: Image,
    current_q: f64,
}

impl AcquisitionEnv {
    pub fn reset(sample: &PairedSample, cfg: &EnvConfig, restorer: Option<&dyn Restorer>) -> Result<Self> {
        let (h, w) = (sample.height(), sample.width());
        cfg.validate(w)?;
        let peak = sample.reference.max();
        if !(peak > 0.0) {
            return Err(MascError::ZeroReference);
        }
        let scale = 1.0 / peak;
        let metal_kspace = sample.metal_kspace.scaled(scale);
        let reference = sample.reference.scaled(scale);
        let mask = LineMask::from_lines(w, &center_lines(w, cfg.initial_lines))?;
        let image = reconstruct(&metal_kspace, &mask)?;
        debug_assert_eq!(image.height, h);
        let state = AcquisitionState { image, mask, steps: 0, budget_remaining: cfg.budget };
        let mut env = Self { cfg: cfg.clone(), metal_kspace, reference, processed: state.image.clone(), state, current_q: 0.0 };
        env.refresh(restorer)?;
        Ok(env)
    }

    fn process(&self, image: &Image, restorer: Option<&dyn Restorer>) -> Result<Image> {
        match (self.cfg.reward_mode, restorer) {
            (RewardMode::Restored, Some(r)) => r.restore(image),
            _ => Ok(image.clone()),
        }
    }

    /// Recomputes the processed image and its quality, e.g. after the restorer was updated.
    pub fn refresh(&mut self, restorer: Option<&dyn Restorer>) -> Result<()> {
        self.processed = self.process(&self.state.image, restorer)?;
        self.current_q = quality(&self.processed, &self.reference, &self.cfg.quality)?;
        Ok(())
    }

    pub fn step(&mut self, action: usize, restorer: Option<&dyn Restorer>) -> Result<StepOutcome> {
        if self.state.budget_remaining == 0 {
            return Err(MascError::BudgetExhausted);
        }
        if self.state.mask.is_acquired(action) {
            return Err(MascError::LineAlreadyAcquired(action));
        }
        let mut mask = self.state.mask.clone();
        mask.set(action)?;
        let image = reconstruct(&self.metal_kspace, &mask)?;
        let processed = self.process(&image, restorer)?;
        let q = quality(&processed, &self.reference, &self.cfg.quality)?;
        let reward = self.cfg.alpha * (q - self.current_q);
        self.state.mask = mask;
        self.state.image = image;
        self.state.steps += 1;
        self.state.budget_remaining -= 1;
        self.processed = processed;
        self.current_q = q;
        Ok(StepOutcome { reward, done: self.state.budget_remaining == 0 })
    }

    pub fn state(&self) -> &AcquisitionState {
        &self.state
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn is_done(&self) -> bool {
        self.state.budget_remaining == 0
    }

    /// Normalized clean reference I*.
    pub fn reference(&self) -> &Image {
        &self.reference
    }

    /// The reconstruction after the restorer in restored mode, otherwise the raw one.
    pub fn processed_image(&self) -> &Image {
        &self.processed
    }

    pub fn current_quality(&self) -> f64 {
        self.current_q
    }

    pub fn normalized_metal_kspace(&self) -> &KSpaceGrid {
        &self.metal_kspace
    }

    pub fn n_pe(&self) -> usize {
        self.state.mask.len()
    }

    /// Two-channel `2·H·W` observation: the processed image and the mask broadcast down columns.
    pub fn observation(&self) -> Vec<f32> {
        let mut out = vec![0.0; 2 * self.processed.data.len()];
        self.write_observation(&mut out);
        out
    }

    pub fn write_observation(&self, out: &mut [f32]) {
        write_observation(&self.processed, &self.state.mask, out);
    }
}

/// Fills `out` (length `2·H·W`) with an image channel and a column-mask channel.
pub fn write_observation(image: &Image, mask: &LineMask, out: &mut [f32]) {
    let n = image.data.len();
    assert_eq!(out.len(), 2 * n, "observation buffer size");
    out[..n].copy_from_slice(&image.data);
    let w = image.width;
    for (i, v) in out[n..].iter_mut().enumerate() {
        *v = if mask.is_acquired(i % w) { 1.0 } else { 0.0 };
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metalsim::{make_paired_sample, ImplantConfig};
    use crate::phantom::{PhantomConfig, SequenceParams};

    fn sample(seed: u64) -> PairedSample {
        make_paired_sample(seed, &PhantomConfig::default(), &ImplantConfig::default(), &SequenceParams::default()).unwrap()
    }

    struct Darken;
    impl Restorer for Darken {
        fn restore(&self, image: &Image) -> Result<Image> {
            Ok(image.scaled(0.9))
        }
    }

    #[test]
    fn acceleration_presets() {
        let c = EnvConfig::for_acceleration(64, 10.0);
        assert_eq!((c.initial_lines, c.budget), (1, 5));
        let c = EnvConfig::for_acceleration(64, 5.0);
        assert_eq!((c.initial_lines, c.budget), (3, 10));
        let c = EnvConfig::for_acceleration(200, 10.0);
        assert_eq!((c.initial_lines, c.budget), (2, 18));
        let c = EnvConfig::for_acceleration(200, 5.0);
        assert_eq!((c.initial_lines, c.budget), (8, 32));
    }

    #[test]
    fn initial_lines_straddle_dc() {
        assert_eq!(center_lines(64, 2), vec![32, 31]);
        assert_eq!(center_lines(8, 3), vec![4, 3, 5]);
        let s = sample(1);
        let cfg = EnvConfig { initial_lines: 2, ..Default::default() };
        let env = AcquisitionEnv::reset(&s, &cfg, None).unwrap();
        assert_eq!(env.state().mask.acquired().collect::<Vec<_>>(), vec![31, 32]);
        assert_eq!(env.state().budget_remaining, cfg.budget);
        let expected = reconstruct(env.normalized_metal_kspace(), &env.state().mask).unwrap();
        assert_eq!(env.state().image, expected);
    }

    #[test]
    fn rewards_telescope_and_state_invariants_hold() {
        let s = sample(2);
        for mode in [RewardMode::Raw, RewardMode::Restored] {
            let cfg = EnvConfig::default().with_mode(mode);
            let mut env = AcquisitionEnv::reset(&s, &cfg, Some(&Darken)).unwrap();
            let q0 = env.current_quality();
            let mut total = 0.0;
            let mut line = 0;
            loop {
                while env.state().mask.is_acquired(line) {
                    line += 1;
                }
                let out = env.step(line, Some(&Darken)).unwrap();
                total += out.reward;
                let st = env.state();
                assert_eq!(st.mask.count(), cfg.initial_lines + st.steps);
                assert_eq!(st.image, reconstruct(env.normalized_metal_kspace(), &st.mask).unwrap());
                if out.done {
                    break;
                }
            }
            assert_eq!(env.state().steps, cfg.budget);
            let expected = cfg.alpha * (env.current_quality() - q0);
            assert!((total - expected).abs() < 1e-9);
            assert!(matches!(env.step(63, None), Err(MascError::BudgetExhausted)));
        }
    }

    #[test]
    fn rejects_invalid_actions_and_configs() {
        let s = sample(3);
        let mut env = AcquisitionEnv::reset(&s, &EnvConfig::default(), None).unwrap();
        assert!(matches!(env.step(32, None), Err(MascError::LineAlreadyAcquired(32))));
        assert!(matches!(env.step(64, None), Err(MascError::LineOutOfRange { .. })));
        let big = EnvConfig { initial_lines: 40, budget: 30, ..Default::default() };
        assert!(AcquisitionEnv::reset(&s, &big, None).is_err());
    }

    #[test]
    fn empty_line_gives_zero_reward() {
        let mut s = sample(4);
        let (h, w) = (s.height(), s.width());
        let mut data = s.metal_kspace.data().to_vec();
        for r in 0..h {
            data[r * w + 5] = num_complex::Complex32::new(0.0, 0.0);
        }
        s.metal_kspace = KSpaceGrid::new(h, w, data, s.metal_kspace.layout()).unwrap();
        let mut env = AcquisitionEnv::reset(&s, &EnvConfig::default(), None).unwrap();
        assert_eq!(env.step(5, None).unwrap().reward, 0.0);
    }

    #[test]
    fn observation_channels() {
        let s = sample(5);
        let cfg = EnvConfig::default().with_mode(RewardMode::Restored);
        let env = AcquisitionEnv::reset(&s, &cfg, None).unwrap();
        let obs = env.observation();
        let n = 64 * 64;
        assert_eq!(&obs[..n], env.state().image.data.as_slice());
        for c in 0..64 {
            let col_all_one = (0..64).all(|r| obs[n + r * 64 + c] == 1.0);
            let col_all_zero = (0..64).all(|r| obs[n + r * 64 + c] == 0.0);
            assert_eq!(col_all_one, env.state().mask.is_acquired(c));
            assert!(col_all_one || col_all_zero);
        }
        let ident = AcquisitionEnv::reset(&s, &cfg, Some(&IdentityRestorer)).unwrap();
        let raw = AcquisitionEnv::reset(&s, &EnvConfig::default(), None).unwrap();
        assert_eq!(ident.observation(), raw.observation());
        assert_eq!(ident.current_quality(), raw.current_quality());
    }

    #[test]
    fn normalization_puts_reference_peak_at_one() {
        let env = AcquisitionEnv::reset(&sample(6), &EnvConfig::default(), None).unwrap();
        assert!((env.reference().max() - 1.0).abs() < 1e-6);
    }
}
