//! Flat `key = value` run configuration with `#` comments.
//!
//! Every key has a default and unknown keys are rejected. [`RunConfig::to_text`]
//! writes every key, so a snapshot fully determines a run.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use masc_core::dataset::{DataConfig, SplitSizes};
use masc_core::env::{EnvConfig, RewardMode};
use masc_core::marnet::{MarConfig, PretrainLossConfig};
use masc_core::metalsim::ImplantShape;
use masc_core::metrics::QualityConfig;
use masc_core::nn::NormKind;
use masc_core::phantom::{Tissue, TissueTable};
use masc_core::policies::EncoderConfig;
use masc_core::trainer::{DqnConfig, MascConfig, PretrainConfig};

use crate::error::{io_err, CliError, Result};

/// Acceleration preset selecting the initial and budgeted line counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Accel {
    X10,
    X5,
}

impl Accel {
    pub fn factor(self) -> f64 {
        match self {
            Accel::X10 => 10.0,
            Accel::X5 => 5.0,
        }
    }
}

impl FromStr for Accel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "10x" => Ok(Accel::X10),
            "5x" => Ok(Accel::X5),
            _ => Err(format!("expected 10x or 5x, got `{s}`")),
        }
    }
}

impl Display for Accel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Accel::X10 => "10x",
            Accel::X5 => "5x",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub accel: Accel,
    /// Overrides the preset's initial line count when nonzero.
    pub initial_lines: usize,
    /// Overrides the preset's budget when nonzero.
    pub budget: usize,
    pub alpha: f64,
    pub subject_scale: f64,
    pub data_dir: PathBuf,
    pub data: DataConfig,
    pub quality: QualityConfig,
    pub pretrain: PretrainConfig,
    pub masc: MascConfig,
    pub dqn: DqnConfig,
    /// Method the evaluation p-values are computed against.
    pub eval_reference: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            accel: Accel::X10,
            initial_lines: 0,
            budget: 0,
            alpha: EnvConfig::default().alpha,
            subject_scale: 1.0,
            data_dir: PathBuf::from("data"),
            data: DataConfig::default(),
            quality: QualityConfig::default(),
            pretrain: PretrainConfig::default(),
            masc: MascConfig::default(),
            dqn: DqnConfig::default(),
            eval_reference: "center-out".into(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value.parse().map_err(|e: T::Err| CliError::ConfigKey { key: key.into(), msg: e.to_string() })
}

fn parse_norm(key: &str, value: &str) -> Result<NormKind> {
    match value {
        "instance" => Ok(NormKind::Instance),
        "none" => Ok(NormKind::None),
        _ => Err(CliError::ConfigKey { key: key.into(), msg: format!("expected instance or none, got `{value}`") }),
    }
}

fn norm_name(n: NormKind) -> &'static str {
    match n {
        NormKind::Instance => "instance",
        NormKind::None => "none",
    }
}

const TISSUE_FIELDS: [&str; 4] = ["pd", "t1_ms", "t2_ms", "chi_ppm"];

/// Declares the scalar keys once for both parsing and serialization.
macro_rules! scalar_keys {
    ($($key:literal => $($field:ident).+;)*) => {
        fn set_scalar(&mut self, key: &str, value: &str) -> Result<bool> {
            match key {
                $($key => self.$($field).+ = parse(key, value)?,)*
                _ => return Ok(false),
            }
            Ok(true)
        }

        fn scalar_entries(&self) -> Vec<(String, String)> {
            vec![$(($key.to_string(), self.$($field).+.to_string()),)*]
        }
    };
}

impl RunConfig {
    scalar_keys! {
        "seed" => seed;
        "accel" => accel;
        "initial_lines" => initial_lines;
        "budget" => budget;
        "alpha" => alpha;
        "subject_scale" => subject_scale;
        "image_height" => data.phantom.height;
        "image_width" => data.phantom.width;
        "phantom_min_interior" => data.phantom.min_interior;
        "phantom_max_interior" => data.phantom.max_interior;
        "phantom_body_label" => data.phantom.body_label;
        "tr_ms" => data.sequence.tr_ms;
        "te_ms" => data.sequence.te_ms;
        "readout_bw_hz_per_px" => data.sequence.readout_bw_hz_per_px;
        "rf_bw_hz" => data.sequence.rf_bw_hz;
        "field_strength_t" => data.sequence.field_strength_t;
        "delta_chi_ppm" => data.implant.delta_chi_ppm;
        "peak_df_hz" => data.implant.peak_df_hz;
        "rf_fwhm_hz" => data.implant.rf_fwhm_hz;
        "max_rotation_deg" => data.implant.max_rotation_deg;
        "noise_std" => data.implant.noise_std;
        "lambda_ssim" => quality.lambda_ssim;
        "lambda_nmse" => quality.lambda_nmse;
        "ssim_window" => quality.window;
        "ssim_sigma" => quality.sigma;
        "ssim_k1" => quality.k1;
        "ssim_k2" => quality.k2;
        "data_range" => quality.data_range;
        "mar_depth" => pretrain.mar.depth;
        "mar_channels" => pretrain.mar.base_channels;
        "pretrain_epochs" => pretrain.epochs;
        "pretrain_batch" => pretrain.batch;
        "pretrain_lr" => pretrain.lr;
        "pretrain_lambda_ssim" => pretrain.loss.lambda_ssim;
        "rollouts" => masc.rollouts;
        "rollout_len" => masc.ppo.rollout_len;
        "ppo_epochs" => masc.ppo.epochs;
        "clip" => masc.ppo.clip;
        "entropy_coef" => masc.ppo.entropy_coef;
        "value_coef" => masc.ppo.value_coef;
        "policy_lr" => masc.ppo.lr;
        "gamma" => masc.ppo.gamma;
        "gae_lambda" => masc.ppo.gae_lambda;
        "minibatch" => masc.ppo.minibatch;
        "max_grad_norm" => masc.ppo.max_grad_norm;
        "mar_lr" => masc.mar_lr;
        "finetune_batch" => masc.finetune_batch;
        "dqn_steps" => dqn.total_steps;
        "dqn_capacity" => dqn.capacity;
        "dqn_batch" => dqn.batch;
        "dqn_gamma" => dqn.gamma;
        "dqn_lr" => dqn.lr;
        "dqn_target_sync" => dqn.target_sync;
        "dqn_eps_start" => dqn.eps_start;
        "dqn_eps_end" => dqn.eps_end;
        "dqn_learn_start" => dqn.learn_start;
        "dqn_max_grad_norm" => dqn.max_grad_norm;
        "dqn_double" => dqn.double;
        "dqn_log_every" => dqn.log_every;
        "eval_reference" => eval_reference;
    }

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if self.set_scalar(key, value)? {
            return Ok(());
        }
        match key {
            "data_dir" => self.data_dir = PathBuf::from(value),
            "max_translation_px" => {
                let v: f64 = parse(key, value)?;
                self.data.implant.max_translation_px = (v > 0.0).then_some(v);
            }
            "implant_shape" | "implant_radius" | "implant_half_length" => self.set_shape(key, value)?,
            "mar_norm" => self.pretrain.mar.norm = parse_norm(key, value)?,
            "encoder_norm" => self.masc.encoder.norm = parse_norm(key, value)?,
            "encoder_channels" => {
                let channels = value.split(',').map(|c| parse::<usize>(key, c.trim())).collect::<Result<Vec<_>>>()?;
                self.masc.encoder.channels = channels;
            }
            "finetune_cap" => {
                let v: usize = parse(key, value)?;
                self.masc.finetune_cap = (v > 0).then_some(v);
            }
            _ if key.starts_with("tissue.") => self.set_tissue(key, value)?,
            _ => return Err(CliError::ConfigKey { key: key.into(), msg: "unknown key".into() }),
        }
        Ok(())
    }

    fn set_shape(&mut self, key: &str, value: &str) -> Result<()> {
        let (radius, half_length) = match self.data.implant.shape {
            ImplantShape::Disc { radius } => (radius, 0.0),
            ImplantShape::Capsule { radius, half_length } => (radius, half_length),
        };
        let is_disc = matches!(self.data.implant.shape, ImplantShape::Disc { .. });
        self.data.implant.shape = match key {
            "implant_shape" => match value {
                "disc" => ImplantShape::Disc { radius },
                "capsule" => ImplantShape::Capsule { radius, half_length },
                _ => return Err(CliError::ConfigKey { key: key.into(), msg: format!("expected disc or capsule, got `{value}`") }),
            },
            "implant_radius" if is_disc => ImplantShape::Disc { radius: parse(key, value)? },
            "implant_radius" => ImplantShape::Capsule { radius: parse(key, value)?, half_length },
            _ if is_disc => return Err(CliError::ConfigKey { key: key.into(), msg: "a disc implant has no half length".into() }),
            _ => ImplantShape::Capsule { radius, half_length: parse(key, value)? },
        };
        Ok(())
    }

    fn set_tissue(&mut self, key: &str, value: &str) -> Result<()> {
        let unknown = || CliError::ConfigKey { key: key.into(), msg: "unknown tissue or property".into() };
        let mut parts = key.splitn(3, '.').skip(1);
        let (name, field) = (parts.next().ok_or_else(unknown)?, parts.next().ok_or_else(unknown)?);
        let mut tissues: Vec<Tissue> = self.data.phantom.table.tissues().to_vec();
        let t = tissues.iter_mut().find(|t| t.name == name).ok_or_else(unknown)?;
        let v: f64 = parse(key, value)?;
        match field {
            "pd" => t.pd = v,
            "t1_ms" => t.t1_ms = v,
            "t2_ms" => t.t2_ms = v,
            "chi_ppm" => t.chi_ppm = v,
            _ => return Err(unknown()),
        }
        self.data.phantom.table = TissueTable::new(tissues)?;
        Ok(())
    }

    /// All keys with their current values, in a stable order.
    pub fn entries(&self) -> Vec<(String, String)> {
        let mut out = self.scalar_entries();
        let imp = &self.data.implant;
        let (shape, radius, half) = match imp.shape {
            ImplantShape::Disc { radius } => ("disc", radius, None),
            ImplantShape::Capsule { radius, half_length } => ("capsule", radius, Some(half_length)),
        };
        out.push(("data_dir".into(), self.data_dir.display().to_string()));
        out.push(("max_translation_px".into(), imp.max_translation_px.unwrap_or(0.0).to_string()));
        out.push(("implant_shape".into(), shape.into()));
        out.push(("implant_radius".into(), radius.to_string()));
        if let Some(h) = half {
            out.push(("implant_half_length".into(), h.to_string()));
        }
        out.push(("mar_norm".into(), norm_name(self.pretrain.mar.norm).into()));
        out.push(("encoder_norm".into(), norm_name(self.masc.encoder.norm).into()));
        let channels: Vec<String> = self.masc.encoder.channels.iter().map(usize::to_string).collect();
        out.push(("encoder_channels".into(), channels.join(",")));
        out.push(("finetune_cap".into(), self.masc.finetune_cap.unwrap_or(0).to_string()));
        for t in self.data.phantom.table.tissues() {
            let values = [t.pd, t.t1_ms, t.t2_ms, t.chi_ppm];
            for (field, v) in TISSUE_FIELDS.iter().zip(values) {
                out.push((format!("tissue.{}.{field}", t.name), v.to_string()));
            }
        }
        out
    }

    /// Parses configuration text on top of the defaults.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Applies configuration text on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) =
                line.split_once('=').ok_or_else(|| CliError::ConfigLine { line: i + 1, msg: format!("expected key = value, got `{line}`") })?;
            self.set(key.trim(), value.trim()).map_err(|e| CliError::ConfigLine { line: i + 1, msg: e.to_string() })?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse_text(&text)
    }

    /// Every key, one `key = value` line each.
    pub fn to_text(&self) -> String {
        self.entries().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(io_err(path))
    }

    pub fn height(&self) -> usize {
        self.data.phantom.height
    }

    pub fn width(&self) -> usize {
        self.data.phantom.width
    }

    pub fn splits(&self) -> SplitSizes {
        SplitSizes::scaled(self.subject_scale)
    }

    pub fn env(&self, mode: RewardMode) -> EnvConfig {
        let mut env = EnvConfig::for_acceleration(self.width(), self.accel.factor());
        if self.initial_lines > 0 {
            env.initial_lines = self.initial_lines;
        }
        if self.budget > 0 {
            env.budget = self.budget;
        }
        env.alpha = self.alpha;
        env.quality = self.quality.clone();
        env.with_mode(mode)
    }

    pub fn mar_config(&self) -> MarConfig {
        self.pretrain.mar.clone()
    }

    pub fn encoder(&self) -> EncoderConfig {
        self.masc.encoder.clone()
    }

    pub fn pretrain_config(&self) -> PretrainConfig {
        PretrainConfig {
            loss: PretrainLossConfig { lambda_ssim: self.pretrain.loss.lambda_ssim, quality: self.quality.clone() },
            seed: self.seed,
            ..self.pretrain.clone()
        }
    }

    /// Co-adaptive training; a zero MAR learning rate freezes the restoration network.
    pub fn masc_config(&self) -> MascConfig {
        MascConfig { env: self.env(RewardMode::Restored), finetune_mar: self.masc.mar_lr > 0.0, seed: self.seed, ..self.masc.clone() }
    }

    /// PPO on raw reconstructions without a restoration network.
    pub fn raw_ppo_config(&self) -> MascConfig {
        MascConfig { env: self.env(RewardMode::Raw), finetune_mar: false, seed: self.seed, ..self.masc.clone() }
    }

    pub fn dqn_config(&self, double: bool) -> DqnConfig {
        DqnConfig { env: self.env(RewardMode::Raw), encoder: self.encoder(), double: double || self.dqn.double, seed: self.seed, ..self.dqn.clone() }
    }

    /// Checks everything that can be checked without data.
    pub fn validate(&self) -> Result<()> {
        self.data.phantom.validate()?;
        self.data.implant.validate()?;
        self.data.sequence.validate()?;
        self.quality.validate()?;
        self.pretrain.mar.validate()?;
        self.env(RewardMode::Raw).validate(self.width())?;
        self.masc_config().validate()?;
        self.dqn_config(false).validate()?;
        if !(self.subject_scale > 0.0) {
            return Err(CliError::ConfigKey { key: "subject_scale".into(), msg: "must be positive".into() });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshot_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("seed = 9\naccel = 5x # comment\nencoder_channels = 4,8\ntissue.fat.t2_ms = 120.5\nfinetune_cap = 7").unwrap();
        let back = RunConfig::parse_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_text(), cfg.to_text());
        assert_eq!(back.masc.encoder.channels, vec![4, 8]);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(RunConfig::parse_text("no_such_key = 1").is_err());
        assert!(RunConfig::parse_text("seed = minus one").is_err());
        assert!(RunConfig::parse_text("accel = 3x").is_err());
        assert!(RunConfig::parse_text("tissue.unobtainium.pd = 1").is_err());
        assert!(RunConfig::parse_text("just words").is_err());
    }

    #[test]
    fn accel_preset_switches_line_counts() {
        let mut cfg = RunConfig::default();
        let ten = cfg.env(RewardMode::Raw);
        cfg.set("accel", "5x").unwrap();
        let five = cfg.env(RewardMode::Raw);
        assert_eq!((ten.initial_lines, ten.budget), (1, 5));
        assert_eq!((five.initial_lines, five.budget), (3, 10));
    }

    #[test]
    fn implant_shape_keys() {
        let mut cfg = RunConfig::default();
        cfg.set("implant_shape", "disc").unwrap();
        cfg.set("implant_radius", "3").unwrap();
        assert_eq!(cfg.data.implant.shape, ImplantShape::Disc { radius: 3.0 });
        assert!(cfg.set("implant_half_length", "2").is_err());
        assert_eq!(RunConfig::parse_text(&cfg.to_text()).unwrap(), cfg);
    }
}
