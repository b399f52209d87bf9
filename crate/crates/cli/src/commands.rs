//! Pipeline commands: each reads its inputs, runs one stage and writes its outputs plus a config snapshot.

use std::fs::File;
use std::path::{Path, PathBuf};

use log::{info, warn};
use masc_core::dataset::generate_samples;
use masc_core::eval::{evaluate as run_eval, Acquirer};
use masc_core::marnet::MarNet;
use masc_core::metalsim::PairedSample;
use masc_core::policies::{BaselineKind, PolicyNet, QNet};
use masc_core::trainer::{dqn_train, masc_train, pretrain_mar, DqnLog, EpochLog, MascConfig, PretrainOutcome, RolloutLog};
use masc_core::MascError;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::error::{io_err, CliError, Result};
use crate::formats::{load_params, read_dataset, save_params, write_dataset};
use crate::report::{append_table, write_charts, write_curves, EvalRow};

pub const TRAIN_FILE: &str = "train.mascds";
pub const VAL_FILE: &str = "val.mascds";
pub const TEST_FILE: &str = "test.mascds";
pub const MANIFEST_FILE: &str = "manifest.csv";
pub const MAR_CHECKPOINT: &str = "mar.ck";
pub const MASC_POLICY_CHECKPOINT: &str = "masc_policy.ck";
pub const MASC_MAR_CHECKPOINT: &str = "masc_mar.ck";
pub const PPO_RAW_CHECKPOINT: &str = "ppo_raw_policy.ck";
pub const TABLE_FILE: &str = "table.csv";
pub const CURVES_FILE: &str = "curves.csv";

/// Learned methods accepted by `evaluate` in addition to the baseline names.
pub const LEARNED_POLICIES: [&str; 4] = ["masc", "ppo-raw", "dqn", "ddqn"];

fn dqn_checkpoint(double: bool) -> &'static str {
    if double {
        "ddqn.ck"
    } else {
        "dqn.ck"
    }
}

/// Creates `out` and writes the resolved configuration as `<command>.config`.
fn prepare_out(cfg: &RunConfig, out: &Path, command: &str) -> Result<()> {
    cfg.validate()?;
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    cfg.save(&out.join(format!("{command}.config")))
}

fn csv_sink(path: &Path, header: &[&str]) -> Result<csv::Writer<File>> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    Ok(w)
}

fn log_row(w: &mut csv::Writer<File>, fields: Vec<String>) -> masc_core::Result<()> {
    w.write_record(&fields).and_then(|_| Ok(w.flush()?)).map_err(|e| MascError::Format(e.to_string()))
}

/// Data-generation workers: the available cores, capped by `MASC_THREADS` when set.
pub fn worker_threads() -> usize {
    let cores = std::thread::available_parallelism().map_or(1, usize::from);
    match std::env::var("MASC_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        Some(cap) if cap > 0 => cores.min(cap),
        _ => cores,
    }
}

fn load_split(cfg: &RunConfig, file: &str) -> Result<Vec<PairedSample>> {
    let samples = read_dataset(&cfg.data_dir.join(file))?;
    if let Some(s) = samples.first() {
        if (s.height(), s.width()) != (cfg.height(), cfg.width()) {
            return Err(CliError::Usage(format!(
                "{file} holds {}x{} images but the config expects {}x{}",
                s.height(),
                s.width(),
                cfg.height(),
                cfg.width()
            )));
        }
    }
    Ok(samples)
}

fn mask_summary(s: &PairedSample) -> (f64, f64, usize) {
    let w = s.width();
    let (mut r, mut c, mut n) = (0.0, 0.0, 0usize);
    for (i, _) in s.implant_mask.iter().enumerate().filter(|(_, &m)| m) {
        r += (i / w) as f64;
        c += (i % w) as f64;
        n += 1;
    }
    if n == 0 {
        (f64::NAN, f64::NAN, 0)
    } else {
        (r / n as f64, c / n as f64, n)
    }
}

/// Writes the three splits and a manifest of implant placements to `out`.
pub fn gen_data(cfg: &RunConfig, out: &Path) -> Result<()> {
    prepare_out(cfg, out, "gen-data")?;
    let threads = worker_threads();
    let mut manifest = csv_sink(&out.join(MANIFEST_FILE), &["split", "index", "subject", "implant_row", "implant_col", "implant_pixels"])?;
    for (name, file, range) in [("train", TRAIN_FILE, 0), ("val", VAL_FILE, 1), ("test", TEST_FILE, 2)].map(|(n, f, i)| (n, f, cfg.splits().ranges()[i].clone())) {
        let samples = generate_samples(&cfg.data, cfg.seed, range, threads)?;
        write_dataset(&out.join(file), &samples)?;
        for (i, s) in samples.iter().enumerate() {
            let (r, c, n) = mask_summary(s);
            manifest.write_record([name.to_string(), i.to_string(), s.subject.to_string(), format!("{r:.3}"), format!("{c:.3}"), n.to_string()])?;
        }
        info!("{name}: {} samples", samples.len());
    }
    manifest.flush().map_err(io_err(out))?;
    Ok(())
}

/// Stage-1 restoration pretraining; writes `mar.ck` and `pretrain_log.csv`.
pub fn pretrain(cfg: &RunConfig, out: &Path) -> Result<PretrainOutcome> {
    prepare_out(cfg, out, "pretrain-mar")?;
    let (train, val) = (load_split(cfg, TRAIN_FILE)?, load_split(cfg, VAL_FILE)?);
    let mut log = csv_sink(&out.join("pretrain_log.csv"), &EpochLog::HEADER)?;
    let outcome = pretrain_mar(&train, &val, &cfg.pretrain_config(), |row| {
        info!("epoch {}: train {:.5} val {:.5} val L1 {:.5}", row.epoch, row.train_loss, row.val_loss, row.val_l1);
        log_row(&mut log, row.fields())
    })?;
    save_params(&out.join(MAR_CHECKPOINT), outcome.net.params())?;
    info!("best epoch {} (identity val L1 {:.5})", outcome.best_epoch, outcome.identity_val_l1);
    Ok(outcome)
}

pub fn load_mar(cfg: &RunConfig, path: &Path) -> Result<MarNet> {
    let mut net = MarNet::new(&cfg.mar_config(), &mut ChaCha8Rng::seed_from_u64(0))?;
    load_params(path, net.params_mut())?;
    Ok(net)
}

pub fn load_policy(cfg: &RunConfig, path: &Path) -> Result<PolicyNet> {
    let mut net = PolicyNet::new(&cfg.encoder(), cfg.height(), cfg.width(), &mut ChaCha8Rng::seed_from_u64(0))?;
    load_params(path, net.params_mut())?;
    Ok(net)
}

pub fn load_qnet(cfg: &RunConfig, path: &Path) -> Result<QNet> {
    let mut net = QNet::new(&cfg.encoder(), cfg.height(), cfg.width(), &mut ChaCha8Rng::seed_from_u64(0))?;
    load_params(path, net.params_mut())?;
    net.sync_target();
    Ok(net)
}

fn run_ppo(cfg: &RunConfig, out: &Path, masc: &MascConfig, mar: Option<MarNet>, log_name: &str) -> Result<masc_core::trainer::MascOutcome> {
    let train = load_split(cfg, TRAIN_FILE)?;
    let mut log = csv_sink(&out.join(log_name), &RolloutLog::HEADER)?;
    Ok(masc_train(&train, mar, masc, |row| {
        info!("rollout {}: return {:.4} final quality {:.4}", row.rollout, row.mean_return, row.mean_final_quality);
        log_row(&mut log, row.fields())
    })?)
}

/// Stage-2 co-adaptive training from a pretrained restoration checkpoint.
pub fn train_masc(cfg: &RunConfig, out: &Path, mar_checkpoint: Option<&Path>) -> Result<()> {
    let path = mar_checkpoint.ok_or_else(|| CliError::Usage("train-masc requires --mar-checkpoint from pretrain-mar".into()))?;
    prepare_out(cfg, out, "train-masc")?;
    let mar = load_mar(cfg, path)?;
    let outcome = run_ppo(cfg, out, &cfg.masc_config(), Some(mar), "masc_log.csv")?;
    save_params(&out.join(MASC_POLICY_CHECKPOINT), outcome.policy.params())?;
    let mar = outcome.mar.expect("restored-mode training keeps its network");
    save_params(&out.join(MASC_MAR_CHECKPOINT), mar.params())
}

/// PPO on raw reconstructions without restoration.
pub fn train_ppo_raw(cfg: &RunConfig, out: &Path) -> Result<()> {
    prepare_out(cfg, out, "train-ppo-raw")?;
    let outcome = run_ppo(cfg, out, &cfg.raw_ppo_config(), None, "ppo_raw_log.csv")?;
    save_params(&out.join(PPO_RAW_CHECKPOINT), outcome.policy.params())
}

/// Value-based baseline; `double` selects the double-Q target.
pub fn train_dqn(cfg: &RunConfig, out: &Path, double: bool) -> Result<()> {
    let name = if double || cfg.dqn.double { "train-ddqn" } else { "train-dqn" };
    prepare_out(cfg, out, name)?;
    let dqn = cfg.dqn_config(double);
    let train = load_split(cfg, TRAIN_FILE)?;
    let mut log = csv_sink(&out.join(format!("{}_log.csv", if dqn.double { "ddqn" } else { "dqn" })), &DqnLog::HEADER)?;
    let outcome = dqn_train(&train, &dqn, |row| {
        info!("step {}: epsilon {:.3} return {:.4} loss {:.5}", row.step, row.epsilon, row.mean_return, row.mean_loss);
        log_row(&mut log, row.fields())
    })?;
    save_params(&out.join(dqn_checkpoint(dqn.double)), outcome.net.params())
}

/// What to evaluate and where the checkpoints live.
#[derive(Debug, Clone)]
pub struct EvalRequest {
    pub policies: Vec<String>,
    /// Restoration flags to evaluate each policy under.
    pub mar_modes: Vec<bool>,
    /// Pretrained restoration network for the two-stage rows.
    pub mar_checkpoint: Option<PathBuf>,
    /// Directory searched for checkpoints under their default file names.
    pub models: PathBuf,
    /// Explicit `key = path` overrides (`masc`, `masc-mar`, `ppo-raw`, `dqn`, `ddqn`, `mar`).
    pub checkpoints: Vec<(String, PathBuf)>,
}

impl EvalRequest {
    fn checkpoint(&self, key: &str, default: &str) -> PathBuf {
        if key == "mar" {
            if let Some(p) = &self.mar_checkpoint {
                return p.clone();
            }
        }
        self.checkpoints.iter().rev().find(|(k, _)| k == key).map_or_else(|| self.models.join(default), |(_, p)| p.clone())
    }
}

enum Method {
    Baseline(BaselineKind),
    Masc { policy: PolicyNet, mar: MarNet },
    Policy(PolicyNet),
    Q(QNet),
}

fn try_load<T>(what: &str, path: &Path, load: impl FnOnce(&Path) -> Result<T>) -> Option<T> {
    if !path.exists() {
        warn!("skipping {what}: {} not found", path.display());
        return None;
    }
    match load(path) {
        Ok(v) => Some(v),
        Err(e) => {
            warn!("skipping {what}: {e}");
            None
        }
    }
}

fn load_method(cfg: &RunConfig, req: &EvalRequest, name: &str) -> Result<Option<Method>> {
    if let Some(kind) = BaselineKind::from_name(name) {
        return Ok(Some(Method::Baseline(kind)));
    }
    Ok(match name {
        "masc" => {
            let policy = try_load("masc", &req.checkpoint("masc", MASC_POLICY_CHECKPOINT), |p| load_policy(cfg, p));
            let mar = try_load("masc", &req.checkpoint("masc-mar", MASC_MAR_CHECKPOINT), |p| load_mar(cfg, p));
            policy.zip(mar).map(|(policy, mar)| Method::Masc { policy, mar })
        }
        "ppo-raw" => try_load(name, &req.checkpoint(name, PPO_RAW_CHECKPOINT), |p| load_policy(cfg, p)).map(Method::Policy),
        "dqn" | "ddqn" => try_load(name, &req.checkpoint(name, dqn_checkpoint(name == "ddqn")), |p| load_qnet(cfg, p)).map(Method::Q),
        _ => {
            return Err(CliError::Usage(format!(
                "unknown policy `{name}`; expected one of {}, {}",
                BaselineKind::ALL.map(BaselineKind::name).join(", "),
                LEARNED_POLICIES.join(", ")
            )))
        }
    })
}

/// Evaluates the requested policies on the test split.
///
/// Appends rows to `table.csv`, rewrites `curves.csv` and the SVG charts, and
/// fails only when nothing could be evaluated.
pub fn evaluate(cfg: &RunConfig, out: &Path, req: &EvalRequest) -> Result<Vec<EvalRow>> {
    prepare_out(cfg, out, "evaluate")?;
    let test = load_split(cfg, TEST_FILE)?;
    let env = cfg.env(masc_core::env::RewardMode::Raw);
    let pretrained = if req.mar_modes.contains(&true) { try_load("restoration rows", &req.checkpoint("mar", MAR_CHECKPOINT), |p| load_mar(cfg, p)) } else { None };
    let mut rows = Vec::new();
    for name in &req.policies {
        let Some(method) = load_method(cfg, req, name)? else { continue };
        for &with_mar in &req.mar_modes {
            let result = match (&method, with_mar) {
                (Method::Masc { policy, mar }, _) => {
                    let acq = Acquirer::Policy { net: policy, observe_with: Some(mar) };
                    run_eval(&test, &env, acq, with_mar.then_some(mar), cfg.seed)?
                }
                (_, true) if pretrained.is_none() => {
                    warn!("skipping {name}+mar: no pretrained restoration checkpoint");
                    continue;
                }
                (Method::Baseline(kind), _) => run_eval(&test, &env, Acquirer::Baseline(*kind), pretrained.as_ref().filter(|_| with_mar), cfg.seed)?,
                (Method::Policy(net), _) => {
                    run_eval(&test, &env, Acquirer::Policy { net, observe_with: None }, pretrained.as_ref().filter(|_| with_mar), cfg.seed)?
                }
                (Method::Q(net), _) => run_eval(&test, &env, Acquirer::Q(net), pretrained.as_ref().filter(|_| with_mar), cfg.seed)?,
            };
            info!("{name}{}: SSIM {:.4}", if with_mar { "+mar" } else { "" }, result.metric(|m| m.ssim).mean);
            rows.push(EvalRow { policy: name.clone(), with_mar, result });
        }
    }
    if rows.is_empty() {
        return Err(CliError::Usage("nothing was evaluated".into()));
    }
    append_table(&out.join(TABLE_FILE), &rows, &cfg.eval_reference)?;
    write_curves(&out.join(CURVES_FILE), &rows, env.initial_lines)?;
    write_charts(out, &rows, env.initial_lines)?;
    Ok(rows)
}
