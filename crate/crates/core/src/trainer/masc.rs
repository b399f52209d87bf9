use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ppo::{ppo_update, PpoConfig, PpoStats, RolloutBuffer, Transition};
use crate::diffcore::AdamState;
use crate::env::{AcquisitionEnv, EnvConfig, Restorer, RewardMode};
use crate::error::{MascError, Result};
use crate::image::Image;
use crate::marnet::{MarLoss, MarNet};
use crate::metalsim::PairedSample;
use crate::policies::{sample_from_log_probs, EncoderConfig, PolicyNet};

#[derive(Debug, Clone, PartialEq)]
pub struct MascConfig {
    pub ppo: PpoConfig,
    pub env: EnvConfig,
    pub encoder: EncoderConfig,
    pub rollouts: usize,
    /// Fine-tune the restoration network after every rollout.
    pub finetune_mar: bool,
    pub mar_lr: f64,
    pub finetune_batch: usize,
    /// Upper bound on fine-tune images per rollout (evenly spaced in visit order).
    pub finetune_cap: Option<usize>,
    pub seed: u64,
}

impl Default for MascConfig {
    fn default() -> Self {
        Self {
            ppo: PpoConfig::default(),
            env: EnvConfig::default().with_mode(RewardMode::Restored),
            encoder: EncoderConfig::default(),
            rollouts: 200,
            finetune_mar: true,
            mar_lr: 1e-5,
            finetune_batch: 16,
            finetune_cap: None,
            seed: 0,
        }
    }
}

impl MascConfig {
    /// PPO on raw-reconstruction rewards without any restoration network.
    pub fn raw_ppo() -> Self {
        Self { env: EnvConfig::default(), finetune_mar: false, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        self.ppo.validate()?;
        if self.rollouts == 0 || self.finetune_batch == 0 {
            return Err(MascError::Config("rollout count and fine-tune batch must be positive".into()));
        }
        if !(self.mar_lr >= 0.0) {
            return Err(MascError::Config("MAR learning rate must be non-negative".into()));
        }
        if self.finetune_cap == Some(0) {
            return Err(MascError::Config("fine-tune cap must be positive".into()));
        }
        Ok(())
    }
}

/// One row of the per-rollout training log.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutLog {
    pub rollout: usize,
    pub env_steps: usize,
    pub episodes: usize,
    /// Mean return of episodes that ended in this rollout (NaN if none did).
    pub mean_return: f64,
    pub mean_final_quality: f64,
    pub ppo: PpoStats,
    /// Mean fine-tune loss (NaN when the restoration network is not trained).
    pub mar_loss: f64,
}

impl RolloutLog {
    pub const HEADER: [&'static str; 11] = [
        "rollout",
        "env_steps",
        "episodes",
        "mean_return",
        "mean_final_quality",
        "policy_loss",
        "value_loss",
        "entropy",
        "approx_kl",
        "clip_fraction",
        "mar_loss",
    ];

    pub fn fields(&self) -> Vec<String> {
        let f = |v: f64| format!("{v:.9}");
        vec![
            self.rollout.to_string(),
            self.env_steps.to_string(),
            self.episodes.to_string(),
            f(self.mean_return),
            f(self.mean_final_quality),
            f(self.ppo.policy_loss),
            f(self.ppo.value_loss),
            f(self.ppo.entropy),
            f(self.ppo.approx_kl),
            f(self.ppo.clip_fraction),
            f(self.mar_loss),
        ]
    }
}

pub struct MascOutcome {
    pub policy: PolicyNet,
    pub mar: Option<MarNet>,
    pub log: Vec<RolloutLog>,
}

fn restorer(mar: &Option<MarNet>) -> Option<&dyn Restorer> {
    mar.as_ref().map(|m| m as &dyn Restorer)
}

/// Indices of at most `cap` items spread evenly over `0..n`.
fn spread(n: usize, cap: Option<usize>) -> Vec<usize> {
    match cap {
        Some(c) if c < n => (0..c).map(|i| i * n / c).collect(),
        _ => (0..n).collect(),
    }
}

/// Alternates rollouts, PPO updates and restoration-network fine-tuning.
///
/// `on_rollout` sees every log row as soon as it is produced.
pub fn masc_train(
    train: &[PairedSample],
    mar: Option<MarNet>,
    cfg: &MascConfig,
    mut on_rollout: impl FnMut(&RolloutLog) -> Result<()>,
) -> Result<MascOutcome> {
    cfg.validate()?;
    let first = train.first().ok_or(MascError::EmptySplit("training"))?;
    if (cfg.env.reward_mode == RewardMode::Restored || cfg.finetune_mar) && mar.is_none() {
        return Err(MascError::MissingParam("pretrained MAR checkpoint".into()));
    }
    let (h, w) = (first.height(), first.width());
    cfg.env.validate(w)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut policy = PolicyNet::new(&cfg.encoder, h, w, &mut rng)?;
    let mut adam = AdamState::new(policy.params(), cfg.ppo.lr);
    let mut mar = mar;
    let mut mar_adam = match (&mar, cfg.finetune_mar) {
        (Some(m), true) => Some(AdamState::new(m.params(), cfg.mar_lr)),
        _ => None,
    };

    let mut sample_idx = rng.gen_range(0..train.len());
    let mut env = AcquisitionEnv::reset(&train[sample_idx], &cfg.env, restorer(&mar))?;
    let mut episode_return = 0.0;
    let mut env_steps = 0usize;
    let mut log = Vec::with_capacity(cfg.rollouts);

    for rollout in 0..cfg.rollouts {
        // the restoration network may have changed since the previous rollout
        env.refresh(restorer(&mar))?;
        let mut buf = RolloutBuffer::with_capacity(cfg.ppo.rollout_len);
        let mut visited: Vec<(Image, usize)> = Vec::with_capacity(cfg.ppo.rollout_len);
        let (mut episodes, mut ret_sum, mut q_sum) = (0usize, 0.0, 0.0);
        for _ in 0..cfg.ppo.rollout_len {
            let obs = env.observation();
            let mask = env.state().mask.clone();
            let out = policy.infer(&obs, &[&mask])?.remove(0);
            let action = sample_from_log_probs(&out.log_probs, &mask, &mut rng)?;
            if mar_adam.is_some() {
                visited.push((env.state().image.clone(), sample_idx));
            }
            let step = env.step(action, restorer(&mar))?;
            episode_return += step.reward;
            env_steps += 1;
            buf.push(Transition { obs, mask, action, log_prob: out.log_probs[action], value: out.value, reward: step.reward, done: step.done });
            if step.done {
                episodes += 1;
                ret_sum += episode_return;
                q_sum += env.current_quality();
                episode_return = 0.0;
                sample_idx = rng.gen_range(0..train.len());
                env = AcquisitionEnv::reset(&train[sample_idx], &cfg.env, restorer(&mar))?;
            }
        }
        let bootstrap = if buf.steps.last().is_some_and(|t| t.done) {
            0.0
        } else {
            policy.infer(&env.observation(), &[&env.state().mask])?[0].value as f64
        };
        buf.finish(bootstrap, cfg.ppo.gamma, cfg.ppo.gae_lambda);
        let stats = ppo_update(&mut policy, &mut adam, &buf, &cfg.ppo, &mut rng)?;

        let mut mar_loss = f64::NAN;
        if let (Some(net), Some(opt)) = (mar.as_mut(), mar_adam.as_mut()) {
            let picks = spread(visited.len(), cfg.finetune_cap);
            let (mut total, mut count) = (0.0, 0usize);
            for chunk in picks.chunks(cfg.finetune_batch) {
                let inputs: Vec<Image> = chunk.iter().map(|&i| visited[i].0.clone()).collect();
                let targets: Vec<Image> = chunk
                    .iter()
                    .map(|&i| {
                        let s = &train[visited[i].1];
                        s.reference.scaled(1.0 / s.reference.max())
                    })
                    .collect();
                net.params_mut().zero_grad();
                total += net.accumulate_loss_grads(&inputs, &targets, MarLoss::Finetune)? * chunk.len() as f64;
                count += chunk.len();
                opt.step(net.params_mut())?;
            }
            if count > 0 {
                mar_loss = total / count as f64;
            }
        }

        let row = RolloutLog {
            rollout,
            env_steps,
            episodes,
            mean_return: if episodes > 0 { ret_sum / episodes as f64 } else { f64::NAN },
            mean_final_quality: if episodes > 0 { q_sum / episodes as f64 } else { f64::NAN },
            ppo: stats,
            mar_loss,
        };
        log::debug!("rollout {rollout}: return {:.4}, quality {:.4}", row.mean_return, row.mean_final_quality);
        on_rollout(&row)?;
        log.push(row);
    }
    if let Some(m) = mar.as_mut() {
        m.params_mut().zero_grad();
    }
    policy.params_mut().zero_grad();
    Ok(MascOutcome { policy, mar, log })
}
