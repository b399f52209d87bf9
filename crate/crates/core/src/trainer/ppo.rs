use rand::seq::SliceRandom;
use rand::Rng;

use super::gae::{compute_gae, normalize_advantages};
use crate::diffcore::{AdamState, Tape, Tensor};
use crate::error::{MascError, Result};
use crate::fourier::LineMask;
use crate::policies::PolicyNet;

#[derive(Debug, Clone, PartialEq)]
pub struct PpoConfig {
    pub rollout_len: usize,
    pub epochs: usize,
    pub clip: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub lr: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub minibatch: usize,
    pub max_grad_norm: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            rollout_len: 512,
            epochs: 4,
            clip: 0.2,
            entropy_coef: 0.01,
            value_coef: 0.5,
            lr: 3e-4,
            gamma: 0.99,
            gae_lambda: 0.95,
            minibatch: 64,
            max_grad_norm: 0.5,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return Err(MascError::Config("PPO clip range must lie in (0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(MascError::Config("gamma and GAE lambda must lie in [0, 1]".into()));
        }
        if self.minibatch == 0 || self.rollout_len == 0 || self.rollout_len % self.minibatch != 0 {
            return Err(MascError::Config("rollout length must be a positive multiple of the minibatch size".into()));
        }
        if !(self.lr >= 0.0 && self.max_grad_norm > 0.0 && self.entropy_coef >= 0.0 && self.value_coef >= 0.0) {
            return Err(MascError::Config("PPO coefficients must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f32>,
    pub mask: LineMask,
    pub action: usize,
    pub log_prob: f32,
    pub value: f32,
    pub reward: f64,
    pub done: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutBuffer {
    pub steps: Vec<Transition>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBuffer {
    pub fn with_capacity(n: usize) -> Self {
        Self { steps: Vec::with_capacity(n), advantages: Vec::new(), returns: Vec::new() }
    }

    pub fn push(&mut self, t: Transition) {
        self.steps.push(t);
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Computes GAE advantages (normalized) and returns.
    pub fn finish(&mut self, bootstrap: f64, gamma: f64, lambda: f64) {
        let r: Vec<f64> = self.steps.iter().map(|t| t.reward).collect();
        let v: Vec<f64> = self.steps.iter().map(|t| t.value as f64).collect();
        let d: Vec<bool> = self.steps.iter().map(|t| t.done).collect();
        let (mut adv, ret) = compute_gae(&r, &v, &d, bootstrap, gamma, lambda);
        normalize_advantages(&mut adv);
        self.advantages = adv;
        self.returns = ret;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PpoStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

/// Clipped-surrogate epochs over shuffled minibatches of a finished buffer.
pub fn ppo_update(net: &mut PolicyNet, adam: &mut AdamState<f32>, buf: &RolloutBuffer, cfg: &PpoConfig, rng: &mut impl Rng) -> Result<PpoStats> {
    if buf.advantages.len() != buf.len() {
        return Err(MascError::Config("rollout buffer advantages were not computed".into()));
    }
    let n = buf.len();
    let obs_len = net.obs_len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut stats = PpoStats::default();
    let mut batches = 0usize;
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for idx in order.chunks(cfg.minibatch) {
            let b = idx.len();
            let mut obs = Vec::with_capacity(b * obs_len);
            let mut masks = Vec::with_capacity(b);
            for &i in idx {
                obs.extend_from_slice(&buf.steps[i].obs);
                masks.push(&buf.steps[i].mask);
            }
            let actions: Vec<usize> = idx.iter().map(|&i| buf.steps[i].action).collect();
            let old_lp: Vec<f32> = idx.iter().map(|&i| buf.steps[i].log_prob).collect();
            let adv: Vec<f32> = idx.iter().map(|&i| buf.advantages[i] as f32).collect();
            let ret: Vec<f32> = idx.iter().map(|&i| buf.returns[i] as f32).collect();

            let mut tape = Tape::new();
            let p = net.params().bind(&mut tape);
            let (lp_all, value) = net.forward(&mut tape, &p, &obs, &masks)?;
            let lp = tape.gather(lp_all, &actions)?;
            let old = tape.constant(Tensor::new(vec![b], old_lp.clone())?);
            let a = tape.constant(Tensor::new(vec![b], adv)?);
            let r = tape.constant(Tensor::new(vec![b], ret)?);

            let diff = tape.sub(lp, old)?;
            let ratio = tape.exp(diff);
            let s1 = tape.mul(ratio, a)?;
            let clipped = tape.clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip);
            let s2 = tape.mul(clipped, a)?;
            let surr = tape.minimum(s1, s2)?;
            let surr_mean = tape.mean(surr);
            let policy_loss = tape.scale(surr_mean, -1.0);

            let verr = tape.sub(value, r)?;
            let vsq = tape.square(verr);
            let value_loss = tape.mean(vsq);

            let probs = tape.exp(lp_all);
            let plogp = tape.mul(probs, lp_all)?;
            let neg_ent_sum = tape.sum(plogp);
            let entropy = tape.scale(neg_ent_sum, -1.0 / b as f64);

            let vterm = tape.scale(value_loss, cfg.value_coef);
            let eterm = tape.scale(entropy, -cfg.entropy_coef);
            let total = tape.add(policy_loss, vterm)?;
            let total = tape.add(total, eterm)?;
            let total_value = tape.data(total)[0];
            if !total_value.is_finite() {
                return Err(MascError::NonFinite("PPO loss"));
            }
            stats.policy_loss += tape.data(policy_loss)[0] as f64;
            stats.value_loss += tape.data(value_loss)[0] as f64;
            stats.entropy += tape.data(entropy)[0] as f64;
            let ratios = tape.data(ratio);
            stats.clip_fraction += ratios.iter().filter(|&&q| ((q as f64) - 1.0).abs() > cfg.clip).count() as f64 / b as f64;
            stats.approx_kl += tape.data(lp).iter().zip(&old_lp).map(|(n, o)| (o - n) as f64).sum::<f64>() / b as f64;

            tape.backward(total)?;
            net.params_mut().zero_grad();
            net.params_mut().absorb_grads(&tape, &p);
            net.params_mut().clip_grad_norm(cfg.max_grad_norm);
            adam.step(net.params_mut())?;
            batches += 1;
        }
    }
    if batches > 0 {
        let k = batches as f64;
        stats.policy_loss /= k;
        stats.value_loss /= k;
        stats.entropy /= k;
        stats.approx_kl /= k;
        stats.clip_fraction /= k;
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::NormKind;
    use crate::policies::{sample_from_log_probs, EncoderConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bandit_update_raises_rewarded_line() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = EncoderConfig { channels: vec![4, 4], norm: NormKind::Instance };
        let mut net = PolicyNet::new(&cfg, 8, 8, &mut rng).unwrap();
        let mask = LineMask::from_lines(8, &[4]).unwrap();
        let obs: Vec<f32> = (0..2 * 64).map(|i| if i >= 64 { f32::from(mask.is_acquired(i % 8)) } else { (i % 5) as f32 * 0.2 }).collect();
        let good = 6;
        let prob = |net: &PolicyNet| net.infer(&obs, &[&mask]).unwrap()[0].log_probs[good].exp();
        let before = prob(&net);
        let ppo = PpoConfig { rollout_len: 64, minibatch: 16, lr: 1e-3, ..Default::default() };
        let mut adam = AdamState::new(net.params(), ppo.lr);
        let mut buf = RolloutBuffer::with_capacity(64);
        let out = net.infer(&obs, &[&mask]).unwrap().remove(0);
        for _ in 0..64 {
            let a = sample_from_log_probs(&out.log_probs, &mask, &mut rng).unwrap();
            buf.push(Transition {
                obs: obs.clone(),
                mask: mask.clone(),
                action: a,
                log_prob: out.log_probs[a],
                value: out.value,
                reward: if a == good { 1.0 } else { 0.0 },
                done: true,
            });
        }
        buf.finish(0.0, ppo.gamma, ppo.gae_lambda);
        let stats = ppo_update(&mut net, &mut adam, &buf, &ppo, &mut rng).unwrap();
        assert!(stats.policy_loss.is_finite());
        assert!(prob(&net) > before, "{} <= {before}", prob(&net));
    }

    #[test]
    fn unchanged_policy_gives_zero_surrogate_at_first_minibatch() {
        // with ρ ≡ 1 and normalized advantages over the full batch, −mean(A) = 0
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = EncoderConfig { channels: vec![4], norm: NormKind::None };
        let mut net = PolicyNet::new(&cfg, 4, 4, &mut rng).unwrap();
        let mask = LineMask::empty(4);
        let obs = vec![0.5f32; 32];
        let out = net.infer(&obs, &[&mask]).unwrap().remove(0);
        let mut buf = RolloutBuffer::default();
        for i in 0..8 {
            buf.push(Transition {
                obs: obs.clone(),
                mask: mask.clone(),
                action: i % 4,
                log_prob: out.log_probs[i % 4],
                value: out.value,
                reward: i as f64,
                done: i % 2 == 1,
            });
        }
        buf.finish(0.0, 0.99, 0.95);
        let ppo = PpoConfig { rollout_len: 8, minibatch: 8, epochs: 1, lr: 0.0, entropy_coef: 0.0, ..Default::default() };
        let mut adam = AdamState::new(net.params(), 0.0);
        let stats = ppo_update(&mut net, &mut adam, &buf, &ppo, &mut rng).unwrap();
        assert!(stats.policy_loss.abs() < 1e-6, "{}", stats.policy_loss);
        assert_eq!(stats.clip_fraction, 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(PpoConfig::default().validate().is_ok());
        assert!(PpoConfig { clip: 1.0, ..Default::default() }.validate().is_err());
        assert!(PpoConfig { minibatch: 60, ..Default::default() }.validate().is_err());
    }
}
