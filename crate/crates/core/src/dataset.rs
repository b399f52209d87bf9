//! Deterministic generation of paired samples and subject-disjoint splits.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{MascError, Result};
use crate::metalsim::{make_paired_sample_from_maps, ImplantConfig, PairedSample};
use crate::phantom::{generate_phantom, PhantomConfig, SequenceParams};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DataConfig {
    pub phantom: PhantomConfig,
    pub implant: ImplantConfig,
    pub sequence: SequenceParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitSizes {
    /// 160/20/20 subjects multiplied by `scale` (at least one subject per split).
    pub fn scaled(scale: f64) -> Self {
        let s = |n: f64| ((n * scale).round() as usize).max(1);
        Self { train: s(160.0), val: s(20.0), test: s(20.0) }
    }

    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }

    /// Subject index ranges of the train, validation and test splits.
    pub fn ranges(&self) -> [std::ops::Range<usize>; 3] {
        let a = self.train;
        let b = a + self.val;
        [0..a, a..b, b..b + self.test]
    }
}

/// Decorrelated per-sample seed from the master seed and a sample index.
pub fn sample_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The sample of one subject (one slice per subject).
pub fn generate_sample(cfg: &DataConfig, master_seed: u64, subject: usize) -> Result<PairedSample> {
    let seed = sample_seed(master_seed, subject as u64);
    let maps = generate_phantom(seed, &cfg.phantom)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    make_paired_sample_from_maps(&maps, &cfg.implant, &cfg.sequence, &mut rng, subject as u32)
}

/// Samples for `subjects`, generated on up to `threads` workers; output order follows `subjects`.
pub fn generate_samples(
    cfg: &DataConfig,
    master_seed: u64,
    subjects: std::ops::Range<usize>,
    threads: usize,
) -> Result<Vec<PairedSample>> {
    let ids: Vec<usize> = subjects.collect();
    let threads = threads.clamp(1, ids.len().max(1));
    if threads == 1 {
        return ids.iter().map(|&s| generate_sample(cfg, master_seed, s)).collect();
    }
    let chunk = ids.len().div_ceil(threads);
    let parts: Vec<Result<Vec<PairedSample>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = ids
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(|&s| generate_sample(cfg, master_seed, s)).collect()))
            .collect();
        handles.into_iter().map(|h| h.join().unwrap_or_else(|_| Err(MascError::Config("generation worker panicked".into())))).collect()
    });
    let mut out = Vec::with_capacity(ids.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_arithmetic() {
        let s = SplitSizes::scaled(1.0);
        assert_eq!((s.train, s.val, s.test, s.total()), (160, 20, 20, 200));
        let s = SplitSizes::scaled(0.1);
        assert_eq!((s.train, s.val, s.test), (16, 2, 2));
        let [a, b, c] = s.ranges();
        assert_eq!((a, b, c), (0..16, 16..18, 18..20));
    }

    #[test]
    fn threaded_generation_matches_sequential() {
        let cfg = DataConfig::default();
        let a = generate_samples(&cfg, 5, 0..5, 1).unwrap();
        let b = generate_samples(&cfg, 5, 0..5, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[3].subject, 3);
        assert_ne!(a[0].reference, a[1].reference);
    }
}
