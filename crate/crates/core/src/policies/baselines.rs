use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use crate::error::{MascError, Result};
use crate::fourier::LineMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BaselineKind {
    /// Nearest unacquired line to DC, ties toward the lower index.
    CenterOut,
    /// Uniform over unacquired lines.
    Random,
    /// Gaussian-weighted around DC with σ = N_pe / 4.
    RandomLowBias,
    /// Fixed equidistant order for the episode's total line count.
    Equispaced,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 4] = [Self::CenterOut, Self::Random, Self::RandomLowBias, Self::Equispaced];

    pub fn name(self) -> &'static str {
        match self {
            Self::CenterOut => "center-out",
            Self::Random => "random",
            Self::RandomLowBias => "random-lowbias",
            Self::Equispaced => "equispaced",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

/// Equidistant lines `round(j · n_pe / total)` for `j < total`.
pub fn equispaced_order(n_pe: usize, total: usize) -> Vec<usize> {
    (0..total).map(|j| ((j as f64 * n_pe as f64 / total as f64).round() as usize).min(n_pe - 1)).collect()
}

/// Unnormalized sampling weights of the low-frequency-biased random policy.
pub fn lowbias_weights(n_pe: usize) -> Vec<f64> {
    let dc = (n_pe / 2) as f64;
    let sigma = n_pe as f64 / 4.0;
    (0..n_pe).map(|j| (-(j as f64 - dc).powi(2) / (2.0 * sigma * sigma)).exp()).collect()
}

fn center_out(mask: &LineMask) -> Option<usize> {
    let dc = mask.len() / 2;
    mask.unacquired().min_by_key(|&j| (j.abs_diff(dc), j))
}

/// Next line for a heuristic policy; `total_lines` sets the equispaced spacing.
pub fn baseline_next_line(kind: BaselineKind, mask: &LineMask, total_lines: usize, rng: &mut impl Rng) -> Result<usize> {
    let free: Vec<usize> = mask.unacquired().collect();
    if free.is_empty() {
        return Err(MascError::NoLinesLeft);
    }
    Ok(match kind {
        BaselineKind::CenterOut => center_out(mask).expect("nonempty"),
        BaselineKind::Random => free[rng.gen_range(0..free.len())],
        BaselineKind::RandomLowBias => {
            let w = lowbias_weights(mask.len());
            let fw: Vec<f64> = free.iter().map(|&j| w[j]).collect();
            let dist = WeightedIndex::new(&fw).map_err(|e| MascError::Config(e.to_string()))?;
            free[dist.sample(rng)]
        }
        BaselineKind::Equispaced => equispaced_order(mask.len(), total_lines.max(1))
            .into_iter()
            .find(|&j| !mask.is_acquired(j))
            // the fixed order is exhausted when initial lines overlap it
            .unwrap_or_else(|| center_out(mask).expect("nonempty")),
    })
}
