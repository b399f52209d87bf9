use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffcore::{AdamState, Tape, Tensor};
use crate::env::{write_observation, AcquisitionEnv, EnvConfig, RewardMode};
use crate::error::{MascError, Result};
use crate::fourier::{reconstruct, KSpaceGrid, LineMask};
use crate::metalsim::PairedSample;
use crate::policies::{argmax_unacquired, select_q_action, EncoderConfig, QNet};

#[derive(Debug, Clone, PartialEq)]
pub struct DqnConfig {
    pub env: EnvConfig,
    pub encoder: EncoderConfig,
    pub total_steps: usize,
    pub capacity: usize,
    pub batch: usize,
    pub gamma: f64,
    pub lr: f64,
    pub target_sync: usize,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Steps collected before the first gradient update.
    pub learn_start: usize,
    pub max_grad_norm: f64,
    /// Online-network argmax with target-network evaluation.
    pub double: bool,
    pub log_every: usize,
    pub seed: u64,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::default(),
            encoder: EncoderConfig::default(),
            total_steps: 20_000,
            capacity: 10_000,
            batch: 64,
            gamma: 0.99,
            lr: 1e-4,
            target_sync: 500,
            eps_start: 1.0,
            eps_end: 0.05,
            learn_start: 64,
            max_grad_norm: 10.0,
            double: false,
            log_every: 500,
            seed: 0,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.capacity == 0 || self.batch == 0 || self.target_sync == 0 || self.total_steps == 0 || self.log_every == 0 {
            return Err(MascError::Config("DQN sizes and intervals must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.eps_start) || !(0.0..=1.0).contains(&self.eps_end) {
            return Err(MascError::Config("DQN gamma and epsilon must lie in [0, 1]".into()));
        }
        if self.env.reward_mode != RewardMode::Raw {
            return Err(MascError::Config("the value-based baseline trains on raw-reconstruction rewards".into()));
        }
        Ok(())
    }

    /// Linear annealing over the first half of training, then constant.
    pub fn epsilon(&self, step: usize) -> f64 {
        let horizon = (self.total_steps / 2).max(1) as f64;
        let f = (step as f64 / horizon).min(1.0);
        self.eps_start + (self.eps_end - self.eps_start) * f
    }
}

/// Stored transition; observations are rebuilt from the sample and mask on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    pub sample: u32,
    pub mask: LineMask,
    pub action: usize,
    pub reward: f32,
    pub done: bool,
}

/// Fixed-capacity ring buffer.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: Vec<Experience>,
    capacity: usize,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { items: Vec::with_capacity(capacity.min(1 << 16)), capacity, next: 0 }
    }

    pub fn push(&mut self, e: Experience) {
        if self.items.len() < self.capacity {
            self.items.push(e);
        } else {
            self.items[self.next] = e;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, i: usize) -> &Experience {
        &self.items[i]
    }
}

/// Bootstrapped targets `r + γ·(1 − done)·Q'(s', a*)` restricted to unacquired next lines.
///
/// Plain mode takes `a*` and its value from the target network; double mode
/// picks `a*` with the online network and evaluates it with the target network.
pub fn td_targets(
    rewards: &[f32],
    dones: &[bool],
    next_online: &[Vec<f32>],
    next_target: &[Vec<f32>],
    next_masks: &[LineMask],
    gamma: f64,
    double: bool,
) -> Result<Vec<f32>> {
    let mut out = Vec::with_capacity(rewards.len());
    for i in 0..rewards.len() {
        if dones[i] {
            out.push(rewards[i]);
            continue;
        }
        let a = if double { argmax_unacquired(&next_online[i], &next_masks[i])? } else { argmax_unacquired(&next_target[i], &next_masks[i])? };
        out.push(rewards[i] + (gamma as f32) * next_target[i][a]);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DqnLog {
    pub step: usize,
    pub epsilon: f64,
    pub episodes: usize,
    pub mean_return: f64,
    pub mean_loss: f64,
}

impl DqnLog {
    pub const HEADER: [&'static str; 5] = ["step", "epsilon", "episodes", "mean_return", "mean_loss"];

    pub fn fields(&self) -> Vec<String> {
        vec![
            self.step.to_string(),
            format!("{:.9}", self.epsilon),
            self.episodes.to_string(),
            format!("{:.9}", self.mean_return),
            format!("{:.9}", self.mean_loss),
        ]
    }
}

pub struct DqnOutcome {
    pub net: QNet,
    pub log: Vec<DqnLog>,
    pub replay_len: usize,
}

fn rebuild_obs(kspaces: &[KSpaceGrid], e_sample: u32, mask: &LineMask, out: &mut [f32]) -> Result<()> {
    let image = reconstruct(&kspaces[e_sample as usize], mask)?;
    write_observation(&image, mask, out);
    Ok(())
}

/// ε-greedy value-based training on raw-reconstruction rewards.
pub fn dqn_train(train: &[PairedSample], cfg: &DqnConfig, mut on_log: impl FnMut(&DqnLog) -> Result<()>) -> Result<DqnOutcome> {
    cfg.validate()?;
    let first = train.first().ok_or(MascError::EmptySplit("training"))?;
    let (h, w) = (first.height(), first.width());
    cfg.env.validate(w)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = QNet::new(&cfg.encoder, h, w, &mut rng)?;
    let mut adam = AdamState::new(net.params(), cfg.lr);
    let mut replay = ReplayBuffer::new(cfg.capacity);
    let kspaces: Vec<KSpaceGrid> = train.iter().map(|s| s.metal_kspace.scaled(1.0 / s.reference.max())).collect();
    let obs_len = net.obs_len();

    let mut sample = rng.gen_range(0..train.len());
    let mut env = AcquisitionEnv::reset(&train[sample], &cfg.env, None)?;
    let (mut ep_return, mut episodes, mut ret_sum, mut loss_sum, mut updates) = (0.0, 0usize, 0.0, 0.0, 0usize);
    let mut log = Vec::new();
    for step in 0..cfg.total_steps {
        let eps = cfg.epsilon(step);
        let mask = env.state().mask.clone();
        let action = if eps >= 1.0 {
            select_q_action(&[], &mask, 1.0, &mut rng)?
        } else {
            let q = net.q_values(&env.observation(), 1)?;
            select_q_action(&q[0], &mask, eps, &mut rng)?
        };
        let out = env.step(action, None)?;
        ep_return += out.reward;
        replay.push(Experience { sample: sample as u32, mask, action, reward: out.reward as f32, done: out.done });
        if out.done {
            episodes += 1;
            ret_sum += ep_return;
            ep_return = 0.0;
            sample = rng.gen_range(0..train.len());
            env = AcquisitionEnv::reset(&train[sample], &cfg.env, None)?;
        }

        if replay.len() >= cfg.learn_start.max(cfg.batch) {
            let idx: Vec<usize> = (0..cfg.batch).map(|_| rng.gen_range(0..replay.len())).collect();
            let mut obs = vec![0.0f32; cfg.batch * obs_len];
            let mut next_obs = vec![0.0f32; cfg.batch * obs_len];
            let mut next_masks = Vec::with_capacity(cfg.batch);
            for (b, &i) in idx.iter().enumerate() {
                let e = replay.get(i);
                rebuild_obs(&kspaces, e.sample, &e.mask, &mut obs[b * obs_len..(b + 1) * obs_len])?;
                let mut nm = e.mask.clone();
                nm.set(e.action)?;
                rebuild_obs(&kspaces, e.sample, &nm, &mut next_obs[b * obs_len..(b + 1) * obs_len])?;
                next_masks.push(nm);
            }
            let rewards: Vec<f32> = idx.iter().map(|&i| replay.get(i).reward).collect();
            let dones: Vec<bool> = idx.iter().map(|&i| replay.get(i).done).collect();
            let next_target = net.target_q_values(&next_obs, cfg.batch)?;
            let next_online = if cfg.double { net.q_values(&next_obs, cfg.batch)? } else { Vec::new() };
            let targets = td_targets(&rewards, &dones, &next_online, &next_target, &next_masks, cfg.gamma, cfg.double)?;
            let actions: Vec<usize> = idx.iter().map(|&i| replay.get(i).action).collect();

            let mut tape = Tape::new();
            let p = net.params().bind(&mut tape);
            let q = net.forward(&mut tape, &p, &obs, cfg.batch)?;
            let qa = tape.gather(q, &actions)?;
            let y = tape.constant(Tensor::new(vec![cfg.batch], targets)?);
            let d = tape.sub(qa, y)?;
            let sq = tape.square(d);
            let loss = tape.mean(sq);
            let lv = tape.data(loss)[0] as f64;
            if !lv.is_finite() {
                return Err(MascError::NonFinite("DQN loss"));
            }
            tape.backward(loss)?;
            net.params_mut().zero_grad();
            net.params_mut().absorb_grads(&tape, &p);
            net.params_mut().clip_grad_norm(cfg.max_grad_norm);
            adam.step(net.params_mut())?;
            loss_sum += lv;
            updates += 1;
        }
        if (step + 1) % cfg.target_sync == 0 {
            net.sync_target();
        }
        if (step + 1) % cfg.log_every == 0 || step + 1 == cfg.total_steps {
            let row = DqnLog {
                step: step + 1,
                epsilon: eps,
                episodes,
                mean_return: if episodes > 0 { ret_sum / episodes as f64 } else { f64::NAN },
                mean_loss: if updates > 0 { loss_sum / updates as f64 } else { f64::NAN },
            };
            on_log(&row)?;
            log.push(row);
            (episodes, ret_sum, loss_sum, updates) = (0, 0.0, 0.0, 0);
        }
    }
    net.params_mut().zero_grad();
    Ok(DqnOutcome { net, log, replay_len: replay.len() })
}
