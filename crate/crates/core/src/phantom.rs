//! Ellipse-composite tissue phantoms and spin-echo signal synthesis.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::error::{MascError, Result};
use crate::image::Image;

pub const AIR: u8 = 0;

/// Relaxation and susceptibility constants for one tissue class.
#[derive(Debug, Clone, PartialEq)]
pub struct Tissue {
    pub label: u8,
    pub name: String,
    pub pd: f64,
    pub t1_ms: f64,
    pub t2_ms: f64,
    pub chi_ppm: f64,
}

impl Tissue {
    pub fn new(label: u8, name: &str, pd: f64, t1_ms: f64, t2_ms: f64, chi_ppm: f64) -> Self {
        Self { label, name: name.to_string(), pd, t1_ms, t2_ms, chi_ppm }
    }
}

/// Lookup table indexed by label. Label 0 is air.
#[derive(Debug, Clone, PartialEq)]
pub struct TissueTable {
    tissues: Vec<Tissue>,
}

impl Default for TissueTable {
    /// 3 T-typical relaxation values; susceptibilities −9.05 (water/soft
    /// tissue), −8.86 (cortical bone), −5.55 (fat) ppm.
    fn default() -> Self {
        Self {
            tissues: vec![
                Tissue::new(0, "air", 0.0, 1.0, 1.0, 0.0),
                Tissue::new(1, "fat", 0.9, 380.0, 130.0, -5.55),
                Tissue::new(2, "muscle", 0.7, 1400.0, 50.0, -9.05),
                Tissue::new(3, "bone", 0.05, 1200.0, 5.0, -8.86),
                Tissue::new(4, "marrow", 0.85, 550.0, 70.0, -5.55),
                Tissue::new(5, "water", 1.0, 3000.0, 1500.0, -9.05),
            ],
        }
    }
}

impl TissueTable {
    pub fn new(tissues: Vec<Tissue>) -> Result<Self> {
        let table = Self { tissues };
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tissues.is_empty() || self.tissues[0].pd != 0.0 {
            return Err(MascError::Config("tissue table must start with air (PD = 0)".into()));
        }
        for (i, t) in self.tissues.iter().enumerate() {
            if t.label as usize != i {
                return Err(MascError::Config(format!("tissue `{}` has label {} at index {i}", t.name, t.label)));
            }
            if !(t.t1_ms > 0.0 && t.t2_ms > 0.0 && t.t1_ms >= t.t2_ms) {
                return Err(MascError::Config(format!("tissue `{}` needs T1 >= T2 > 0", t.name)));
            }
            if !(0.0..=1.0).contains(&t.pd) {
                return Err(MascError::Config(format!("tissue `{}` PD outside [0, 1]", t.name)));
            }
        }
        Ok(())
    }

    pub fn get(&self, label: u8) -> Option<&Tissue> {
        self.tissues.get(label as usize)
    }

    pub fn tissues(&self) -> &[Tissue] {
        &self.tissues
    }

    pub fn by_name(&self, name: &str) -> Option<&Tissue> {
        self.tissues.iter().find(|t| t.name == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomConfig {
    pub height: usize,
    pub width: usize,
    pub min_interior: usize,
    pub max_interior: usize,
    /// Label filling the body ellipse before interior shapes are drawn.
    pub body_label: u8,
    pub table: TissueTable,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self { height: 64, width: 64, min_interior: 3, max_interior: 6, body_label: 2, table: TissueTable::default() }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        for n in [self.height, self.width] {
            if !n.is_power_of_two() {
                return Err(MascError::NotPowerOfTwo(n));
            }
        }
        if self.min_interior == 0 || self.min_interior > self.max_interior {
            return Err(MascError::Config("interior ellipse count range is empty".into()));
        }
        if self.table.get(self.body_label).is_none() || self.body_label == AIR {
            return Err(MascError::Config(format!("body label {} is not a tissue", self.body_label)));
        }
        if self.table.tissues().len() < 2 {
            return Err(MascError::Config("tissue table has no non-air tissue".into()));
        }
        self.table.validate()
    }
}

/// Per-pixel tissue property maps.
#[derive(Debug, Clone, PartialEq)]
pub struct TissueMaps {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u8>,
    pub pd: Vec<f32>,
    pub t1_ms: Vec<f32>,
    pub t2_ms: Vec<f32>,
    pub table: TissueTable,
}

impl TissueMaps {
    pub fn from_labels(height: usize, width: usize, labels: Vec<u8>, table: &TissueTable) -> Result<Self> {
        if labels.len() != height * width {
            return Err(MascError::InvalidShape { op: "tissue_maps", msg: "label grid size".into() });
        }
        let lookup = |l: u8| table.get(l).ok_or_else(|| MascError::Config(format!("label {l} missing from tissue table")));
        let mut pd = Vec::with_capacity(labels.len());
        let mut t1 = Vec::with_capacity(labels.len());
        let mut t2 = Vec::with_capacity(labels.len());
        for &l in &labels {
            let t = lookup(l)?;
            pd.push(t.pd as f32);
            t1.push(t.t1_ms as f32);
            t2.push(t.t2_ms as f32);
        }
        Ok(Self { height, width, labels, pd, t1_ms: t1, t2_ms: t2, table: table.clone() })
    }

    /// Susceptibility per pixel in ppm.
    pub fn chi_ppm(&self) -> Vec<f64> {
        self.labels.iter().map(|&l| self.table.get(l).map_or(0.0, |t| t.chi_ppm)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub center_row: f64,
    pub center_col: f64,
    pub semi_rows: f64,
    pub semi_cols: f64,
    pub angle_rad: f64,
}

impl Ellipse {
    pub fn contains(&self, row: f64, col: f64) -> bool {
        let (dy, dx) = (row - self.center_row, col - self.center_col);
        let (s, c) = self.angle_rad.sin_cos();
        let u = c * dy + s * dx;
        let v = -s * dy + c * dx;
        (u / self.semi_rows).powi(2) + (v / self.semi_cols).powi(2) <= 1.0
    }
}

/// Sequence timing and bandwidth parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceParams {
    pub tr_ms: f64,
    pub te_ms: f64,
    pub readout_bw_hz_per_px: f64,
    pub rf_bw_hz: f64,
    pub field_strength_t: f64,
}

impl Default for SequenceParams {
    fn default() -> Self {
        Self { tr_ms: 4050.0, te_ms: 32.0, readout_bw_hz_per_px: 710.0, rf_bw_hz: 1000.0, field_strength_t: 3.0 }
    }
}

impl SequenceParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.tr_ms, self.te_ms, self.readout_bw_hz_per_px, self.rf_bw_hz, self.field_strength_t];
        if all.iter().any(|v| !(*v > 0.0)) {
            return Err(MascError::Config("sequence parameters must be positive".into()));
        }
        if self.te_ms >= self.tr_ms {
            return Err(MascError::Config("TE must be shorter than TR".into()));
        }
        Ok(())
    }
}

fn rasterize(e: &Ellipse, h: usize, w: usize) -> Vec<usize> {
    (0..h * w).filter(|&i| e.contains((i / w) as f64, (i % w) as f64)).collect()
}

/// Deterministic ellipse-composite phantom for `seed`.
pub fn generate_phantom(seed: u64, cfg: &PhantomConfig) -> Result<TissueMaps> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (cfg.height, cfg.width);
    let (hf, wf) = (h as f64, w as f64);
    let mut labels = vec![AIR; h * w];

    let body = Ellipse {
        center_row: hf / 2.0 + rng.gen_range(-0.03..0.03) * hf,
        center_col: wf / 2.0 + rng.gen_range(-0.03..0.03) * wf,
        semi_rows: rng.gen_range(0.36..0.45) * hf,
        semi_cols: rng.gen_range(0.40..0.47) * wf,
        angle_rad: rng.gen_range(-10f64..10.0).to_radians(),
    };
    let body_px = rasterize(&body, h, w);
    let mut in_body = vec![false; h * w];
    for &i in &body_px {
        labels[i] = cfg.body_label;
        in_body[i] = true;
    }

    let n_tissues = cfg.table.tissues().len() as u8;
    let count = rng.gen_range(cfg.min_interior..=cfg.max_interior);
    for _ in 0..count {
        let label = rng.gen_range(1..n_tissues);
        // redraw shapes that cover no body pixel
        let mut drawn = false;
        for _ in 0..100 {
            let r = rng.gen_range(0.0..0.6f64).sqrt();
            let t = rng.gen_range(0.0..std::f64::consts::TAU);
            let e = Ellipse {
                center_row: body.center_row + r * t.sin() * body.semi_rows,
                center_col: body.center_col + r * t.cos() * body.semi_cols,
                semi_rows: rng.gen_range(0.08..0.32) * body.semi_rows,
                semi_cols: rng.gen_range(0.08..0.32) * body.semi_cols,
                angle_rad: rng.gen_range(0.0..std::f64::consts::PI),
            };
            let px: Vec<usize> = rasterize(&e, h, w).into_iter().filter(|&i| in_body[i]).collect();
            if px.is_empty() {
                continue;
            }
            for i in px {
                labels[i] = label;
            }
            drawn = true;
            break;
        }
        if !drawn {
            return Err(MascError::Config("could not place a non-degenerate interior ellipse".into()));
        }
    }
    TissueMaps::from_labels(h, w, labels, &cfg.table)
}

/// Single spin-echo signal `PD·(1 − e^{−TR/T1})·e^{−TE/T2}` for one voxel.
pub fn spin_echo(pd: f64, t1_ms: f64, t2_ms: f64, seq: &SequenceParams) -> f64 {
    if pd == 0.0 {
        return 0.0;
    }
    pd * (1.0 - (-seq.tr_ms / t1_ms).exp()) * (-seq.te_ms / t2_ms).exp()
}

pub fn spin_echo_signal(maps: &TissueMaps, seq: &SequenceParams) -> Image {
    let data = (0..maps.labels.len())
        .map(|i| spin_echo(maps.pd[i] as f64, maps.t1_ms[i] as f64, maps.t2_ms[i] as f64, seq) as f32)
        .collect();
    Image { height: maps.height, width: maps.width, data }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_maps() {
        let cfg = PhantomConfig::default();
        assert_eq!(generate_phantom(9, &cfg).unwrap(), generate_phantom(9, &cfg).unwrap());
        assert_ne!(generate_phantom(9, &cfg).unwrap().labels, generate_phantom(10, &cfg).unwrap().labels);
    }

    #[test]
    fn air_has_zero_pd_and_signal() {
        let maps = generate_phantom(1, &PhantomConfig::default()).unwrap();
        let s = spin_echo_signal(&maps, &SequenceParams::default());
        let mut air = 0;
        for i in 0..maps.labels.len() {
            if maps.labels[i] == AIR {
                assert_eq!(maps.pd[i], 0.0);
                assert_eq!(s.data[i], 0.0);
                air += 1;
            }
        }
        assert!(air > 0);
    }

    #[test]
    fn every_pixel_matches_a_table_row() {
        let cfg = PhantomConfig::default();
        for seed in 0..20 {
            let maps = generate_phantom(seed, &cfg).unwrap();
            for i in 0..maps.labels.len() {
                let (pd, t1, t2) = (maps.pd[i], maps.t1_ms[i], maps.t2_ms[i]);
                assert!(cfg
                    .table
                    .tissues()
                    .iter()
                    .any(|t| t.pd as f32 == pd && t.t1_ms as f32 == t1 && t.t2_ms as f32 == t2));
            }
        }
    }

    #[test]
    fn interior_tissues_appear() {
        let maps = generate_phantom(4, &PhantomConfig::default()).unwrap();
        let distinct: std::collections::BTreeSet<u8> = maps.labels.iter().copied().collect();
        assert!(distinct.len() >= 3, "{distinct:?}");
    }

    #[test]
    fn signal_limits_and_reference_value() {
        let long = SequenceParams { tr_ms: 1e9, te_ms: 1e-9, ..Default::default() };
        assert!((spin_echo(1.0, 1000.0, 100.0, &long) - 1.0).abs() < 1e-9);
        let s = spin_echo(1.0, 1000.0, 100.0, &SequenceParams::default());
        let expected = (1.0 - (-4.05f64).exp()) * (-0.32f64).exp();
        assert!((s - expected).abs() < 1e-12);
        assert!((s - 0.7135).abs() < 5e-4);
        assert_eq!(spin_echo(0.0, 1000.0, 100.0, &SequenceParams::default()), 0.0);
    }

    #[test]
    fn signal_monotone_in_te_and_tr() {
        let base = SequenceParams::default();
        for t in TissueTable::default().tissues().iter().skip(1) {
            let s0 = spin_echo(t.pd, t.t1_ms, t.t2_ms, &base);
            let later_te = SequenceParams { te_ms: 40.0, ..base.clone() };
            let longer_tr = SequenceParams { tr_ms: 5000.0, ..base.clone() };
            assert!(spin_echo(t.pd, t.t1_ms, t.t2_ms, &later_te) < s0);
            assert!(spin_echo(t.pd, t.t1_ms, t.t2_ms, &longer_tr) > s0);
            assert!((0.0..=1.0).contains(&s0));
        }
    }

    #[test]
    fn rejects_bad_tables_and_geometry() {
        let bad = vec![Tissue::new(0, "air", 0.0, 1.0, 1.0, 0.0), Tissue::new(1, "x", 0.5, 10.0, 20.0, 0.0)];
        assert!(TissueTable::new(bad).is_err());
        let cfg = PhantomConfig { height: 48, ..Default::default() };
        assert!(generate_phantom(0, &cfg).is_err());
        assert!(SequenceParams { te_ms: 5000.0, ..Default::default() }.validate().is_err());
    }
}
