use rand::Rng;

use crate::diffcore::{ParamSet, Tape, Tensor, Var};
use crate::error::{MascError, Result};
use crate::fourier::LineMask;
use crate::nn::{ConvUnit, Dense, NormKind};

/// Logit offset applied to acquired lines; its softmax weight underflows to exactly zero.
const MASKED_LOGIT: f32 = -1e9;

const ACTOR_INIT_GAIN: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    /// Output channels of each `conv → norm → ReLU → pool` block.
    pub channels: Vec<usize>,
    pub norm: NormKind,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { channels: vec![16, 32, 64], norm: NormKind::Instance }
    }
}

/// Convolutional feature extractor over the two-channel observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    blocks: Vec<ConvUnit>,
    features: usize,
}

impl Encoder {
    pub fn new(params: &mut ParamSet, cfg: &EncoderConfig, height: usize, width: usize, rng: &mut impl Rng) -> Result<Self> {
        if cfg.channels.is_empty() || cfg.channels.contains(&0) {
            return Err(MascError::Config("encoder needs at least one block with nonzero channels".into()));
        }
        let f = 1usize << cfg.channels.len();
        if height % f != 0 || width % f != 0 {
            return Err(MascError::Config(format!("{height}x{width} observation not divisible by {f}")));
        }
        let mut c_in = 2;
        let mut blocks = Vec::new();
        for (i, &c) in cfg.channels.iter().enumerate() {
            blocks.push(ConvUnit::new(params, &format!("encoder{i}"), c_in, c, 3, cfg.norm, rng));
            c_in = c;
        }
        Ok(Self { blocks, features: (height / f) * (width / f) * c_in })
    }

    pub fn features(&self) -> usize {
        self.features
    }

    /// `[N, 2, H, W]` observations to `[N, F]` features.
    pub fn forward(&self, tape: &mut Tape, p: &[Var], obs: Var) -> Result<Var> {
        let n = tape.shape(obs)[0];
        let mut y = obs;
        for b in &self.blocks {
            y = b.forward(tape, p, y)?;
            y = tape.max_pool2(y)?;
        }
        tape.reshape(y, &[n, self.features])
    }
}

fn obs_tensor(obs: &[f32], n: usize, height: usize, width: usize) -> Result<Tensor> {
    Tensor::new(vec![n, 2, height, width], obs.to_vec())
}

fn mask_offsets(masks: &[&LineMask], n_pe: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(masks.len() * n_pe);
    for m in masks {
        if m.len() != n_pe {
            return Err(MascError::ShapeMismatch { op: "policy mask", lhs: vec![n_pe], rhs: vec![m.len()] });
        }
        if m.count() == n_pe {
            return Err(MascError::NoLinesLeft);
        }
        data.extend(m.as_slice().iter().map(|&a| if a { MASKED_LOGIT } else { 0.0 }));
    }
    Tensor::new(vec![masks.len(), n_pe], data)
}

/// Log-probabilities `[N, n_pe]` with acquired lines pushed to (effectively) −∞.
pub fn masked_log_probs(tape: &mut Tape, logits: Var, masks: &[&LineMask]) -> Result<Var> {
    let n_pe = tape.shape(logits)[1];
    let off = tape.constant(mask_offsets(masks, n_pe)?);
    let masked = tape.add(logits, off)?;
    tape.log_softmax(masked)
}

/// Draws a line from log-probabilities, considering unacquired lines only.
pub fn sample_from_log_probs(log_probs: &[f32], mask: &LineMask, rng: &mut impl Rng) -> Result<usize> {
    let free: Vec<usize> = mask.unacquired().collect();
    let last = *free.last().ok_or(MascError::NoLinesLeft)?;
    let total: f64 = free.iter().map(|&j| (log_probs[j] as f64).exp()).sum();
    let mut u = rng.gen::<f64>() * total;
    for &j in &free {
        u -= (log_probs[j] as f64).exp();
        if u < 0.0 {
            return Ok(j);
        }
    }
    Ok(last)
}

/// Highest-scoring unacquired line, ties toward the lower index.
pub fn argmax_unacquired(scores: &[f32], mask: &LineMask) -> Result<usize> {
    let mut best: Option<usize> = None;
    for j in mask.unacquired() {
        if best.map_or(true, |b| scores[j] > scores[b]) {
            best = Some(j);
        }
    }
    best.ok_or(MascError::NoLinesLeft)
}

/// ε-greedy choice: uniform over unacquired lines with probability ε, else the greedy line.
pub fn select_q_action(q: &[f32], mask: &LineMask, epsilon: f64, rng: &mut impl Rng) -> Result<usize> {
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        let free: Vec<usize> = mask.unacquired().collect();
        if free.is_empty() {
            return Err(MascError::NoLinesLeft);
        }
        return Ok(free[rng.gen_range(0..free.len())]);
    }
    argmax_unacquired(q, mask)
}

/// Actor-critic network sharing one encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    params: ParamSet,
    encoder: Encoder,
    actor: Dense,
    critic: Dense,
    height: usize,
    width: usize,
}

/// Per-sample policy results from an inference pass.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    pub log_probs: Vec<f32>,
    pub value: f32,
}

impl PolicyNet {
    pub fn new(cfg: &EncoderConfig, height: usize, width: usize, rng: &mut impl Rng) -> Result<Self> {
        let mut params = ParamSet::new();
        let encoder = Encoder::new(&mut params, cfg, height, width, rng)?;
        // a small actor gain starts training from a nearly uniform line distribution
        let actor = Dense::with_gain(&mut params, "actor", encoder.features(), width, ACTOR_INIT_GAIN, rng);
        let critic = Dense::new(&mut params, "critic", encoder.features(), 1, rng);
        Ok(Self { params, encoder, actor, critic, height, width })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn n_pe(&self) -> usize {
        self.width
    }

    pub fn obs_len(&self) -> usize {
        2 * self.height * self.width
    }

    /// Masked log-probabilities `[N, n_pe]` and values `[N]` on a tape.
    pub fn forward(&self, tape: &mut Tape, p: &[Var], obs: &[f32], masks: &[&LineMask]) -> Result<(Var, Var)> {
        let n = masks.len();
        if obs.len() != n * self.obs_len() {
            return Err(MascError::InvalidShape { op: "policy_forward", msg: format!("{} values for {n} observations", obs.len()) });
        }
        let x = tape.constant(obs_tensor(obs, n, self.height, self.width)?);
        let feat = self.encoder.forward(tape, p, x)?;
        let logits = self.actor.forward(tape, p, feat)?;
        let log_probs = masked_log_probs(tape, logits, masks)?;
        let v = self.critic.forward(tape, p, feat)?;
        let value = tape.reshape(v, &[n])?;
        Ok((log_probs, value))
    }

    pub fn infer(&self, obs: &[f32], masks: &[&LineMask]) -> Result<Vec<PolicyOutput>> {
        let mut tape = Tape::new();
        let p = self.params.bind_frozen(&mut tape);
        let (lp, v) = self.forward(&mut tape, &p, obs, masks)?;
        let n_pe = self.width;
        Ok(tape
            .data(lp)
            .chunks(n_pe)
            .zip(tape.data(v))
            .map(|(l, &value)| PolicyOutput { log_probs: l.to_vec(), value })
            .collect())
    }
}

/// Action-value network with a target copy for bootstrapped targets.
#[derive(Debug, Clone, PartialEq)]
pub struct QNet {
    params: ParamSet,
    target: ParamSet,
    encoder: Encoder,
    head: Dense,
    height: usize,
    width: usize,
}

impl QNet {
    pub fn new(cfg: &EncoderConfig, height: usize, width: usize, rng: &mut impl Rng) -> Result<Self> {
        let mut params = ParamSet::new();
        let encoder = Encoder::new(&mut params, cfg, height, width, rng)?;
        let head = Dense::new(&mut params, "q_head", encoder.features(), width, rng);
        Ok(Self { target: params.clone(), params, encoder, head, height, width })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn target_params(&self) -> &ParamSet {
        &self.target
    }

    pub fn sync_target(&mut self) {
        self.target.copy_from(&self.params).expect("online and target layouts match");
    }

    pub fn n_pe(&self) -> usize {
        self.width
    }

    pub fn obs_len(&self) -> usize {
        2 * self.height * self.width
    }

    /// Action values `[N, n_pe]` on a tape for the given parameter binding.
    pub fn forward(&self, tape: &mut Tape, p: &[Var], obs: &[f32], n: usize) -> Result<Var> {
        if obs.len() != n * self.obs_len() {
            return Err(MascError::InvalidShape { op: "q_forward", msg: format!("{} values for {n} observations", obs.len()) });
        }
        let x = tape.constant(obs_tensor(obs, n, self.height, self.width)?);
        let feat = self.encoder.forward(tape, p, x)?;
        self.head.forward(tape, p, feat)
    }

    fn values_with(&self, params: &ParamSet, obs: &[f32], n: usize) -> Result<Vec<Vec<f32>>> {
        let mut tape = Tape::new();
        let p = params.bind_frozen(&mut tape);
        let q = self.forward(&mut tape, &p, obs, n)?;
        Ok(tape.data(q).chunks(self.width).map(<[f32]>::to_vec).collect())
    }

    pub fn q_values(&self, obs: &[f32], n: usize) -> Result<Vec<Vec<f32>>> {
        self.values_with(&self.params, obs, n)
    }

    pub fn target_q_values(&self, obs: &[f32], n: usize) -> Result<Vec<Vec<f32>>> {
        self.values_with(&self.target, obs, n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> EncoderConfig {
        EncoderConfig { channels: vec![4, 4, 8], norm: NormKind::Instance }
    }

    fn obs(n: usize, h: usize, w: usize, seed: u64) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n * 2 * h * w).map(|_| rng.gen_range(0.0..1.0)).collect()
    }

    #[test]
    fn masked_distribution_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = PolicyNet::new(&small_cfg(), 16, 16, &mut rng).unwrap();
        let empty = LineMask::empty(16);
        let some = LineMask::from_lines(16, &[0, 7, 8, 15]).unwrap();
        let out = net.infer(&obs(2, 16, 16, 1), &[&empty, &some]).unwrap();
        let total: f64 = out[0].log_probs.iter().map(|&l| (l as f64).exp()).sum();
        assert!((total - 1.0).abs() < 1e-5);
        let total: f64 = out[1].log_probs.iter().map(|&l| (l as f64).exp()).sum();
        assert!((total - 1.0).abs() < 1e-5);
        for j in some.acquired() {
            assert_eq!(out[1].log_probs[j].exp(), 0.0);
        }
        let entropy: f64 = out[1]
            .log_probs
            .iter()
            .map(|&l| l as f64)
            .filter(|l| l.exp() > 0.0)
            .map(|l| -l.exp() * l)
            .sum();
        assert!(entropy <= (12f64).ln() + 1e-6);
        let full = LineMask::full(16);
        assert!(net.infer(&obs(1, 16, 16, 2), &[&full]).is_err());
    }

    #[test]
    fn shifting_logits_leaves_distribution_unchanged() {
        let mask = LineMask::from_lines(6, &[1, 4]).unwrap();
        let logits = vec![0.3f32, -1.2, 2.0, 0.0, 0.7, -0.4];
        let run = |shift: f32| {
            let mut tape = Tape::new();
            let l = tape.constant(Tensor::new(vec![1, 6], logits.iter().map(|v| v + shift).collect()).unwrap());
            let lp = masked_log_probs(&mut tape, l, &[&mask]).unwrap();
            tape.data(lp).to_vec()
        };
        let (a, b) = (run(0.0), run(5.0));
        for j in mask.unacquired() {
            assert!((a[j] - b[j]).abs() < 1e-5);
        }
        assert_eq!(argmax_unacquired(&a, &mask).unwrap(), argmax_unacquired(&b, &mask).unwrap());
    }

    #[test]
    fn sampling_never_picks_acquired_lines() {
        let mask = LineMask::from_lines(8, &[2, 3, 6]).unwrap();
        // a log-prob vector that (incorrectly) favors acquired lines must still be ignored there
        let lp: Vec<f32> = (0..8).map(|j| if mask.is_acquired(j) { 0.0 } else { -3.0 }).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            assert!(!mask.is_acquired(sample_from_log_probs(&lp, &mask, &mut rng).unwrap()));
        }
    }

    #[test]
    fn epsilon_greedy_rules() {
        let mask = LineMask::from_lines(5, &[0]).unwrap();
        let q = vec![9.0f32, 1.0, 3.0, 3.0, 2.0];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert_eq!(select_q_action(&q, &mask, 0.0, &mut rng).unwrap(), 2);
        let mut counts = [0usize; 5];
        let draws = 40_000;
        for _ in 0..draws {
            counts[select_q_action(&q, &mask, 1.0, &mut rng).unwrap()] += 1;
        }
        assert_eq!(counts[0], 0);
        for &c in &counts[1..] {
            assert!((c as f64 / draws as f64 - 0.25).abs() < 0.01);
        }
    }

    #[test]
    fn target_sync_copies_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = QNet::new(&small_cfg(), 16, 16, &mut rng).unwrap();
        net.params_mut().tensors_mut()[0].data_mut()[0] += 1.0;
        assert_ne!(net.params().tensors(), net.target_params().tensors());
        net.sync_target();
        for (a, b) in net.params().tensors().iter().zip(net.target_params().tensors()) {
            assert_eq!(a.shape(), b.shape());
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        let o = obs(3, 16, 16, 4);
        assert_eq!(net.q_values(&o, 3).unwrap(), net.target_q_values(&o, 3).unwrap());
    }
}
