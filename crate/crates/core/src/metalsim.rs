//! Metal-implant artifact synthesis with exactly matched clean/metal pairs.
//!
//! A susceptibility map is convolved with a 2D dipole kernel to obtain an
//! off-resonance field. The clean spin-echo image is then voided inside the
//! implant, attenuated by the excitation profile, displaced along the readout
//! axis (rows) and given the accrued phase before transforming to k-space.

use num_complex::{Complex32, Complex64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{MascError, Result};
use crate::fourier::{fft2, fft2_real, reconstruct, transform_2d, KSpaceGrid, LineMask};
use crate::image::Image;
use crate::phantom::{generate_phantom, spin_echo_signal, PhantomConfig, SequenceParams, TissueMaps};

/// FWHM of a Gaussian divided by its standard deviation, `2√(2 ln 2)`.
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ImplantShape {
    Disc { radius: f64 },
    /// Segment of length `2·half_length` thickened by `radius`.
    Capsule { radius: f64, half_length: f64 },
}

impl ImplantShape {
    /// Largest distance from the center reached by the shape along rows and columns.
    fn extent(&self, rotation_deg: f64) -> (f64, f64) {
        match *self {
            ImplantShape::Disc { radius } => (radius, radius),
            ImplantShape::Capsule { radius, half_length } => {
                let (s, c) = rotation_deg.to_radians().sin_cos();
                (half_length * c.abs() + radius, half_length * s.abs() + radius)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImplantSpec {
    pub shape: ImplantShape,
    pub center_row: f64,
    pub center_col: f64,
    /// Angle between the capsule axis and the row axis.
    pub rotation_deg: f64,
    pub delta_chi_ppm: f64,
    pub peak_df_hz: f64,
}

impl ImplantSpec {
    pub fn contains(&self, row: f64, col: f64) -> bool {
        let (dy, dx) = (row - self.center_row, col - self.center_col);
        match self.shape {
            ImplantShape::Disc { radius } => dy * dy + dx * dx <= radius * radius,
            ImplantShape::Capsule { radius, half_length } => {
                let (s, c) = self.rotation_deg.to_radians().sin_cos();
                let along = (dy * c + dx * s).clamp(-half_length, half_length);
                let (py, px) = (dy - along * c, dx - along * s);
                py * py + px * px <= radius * radius
            }
        }
    }

    /// True when the whole shape lies within a `height × width` pixel grid.
    pub fn fits(&self, height: usize, width: usize) -> bool {
        let (er, ec) = self.shape.extent(self.rotation_deg);
        self.center_row - er >= 0.0
            && self.center_col - ec >= 0.0
            && self.center_row + er <= (height - 1) as f64
            && self.center_col + ec <= (width - 1) as f64
    }

    pub fn mask(&self, height: usize, width: usize) -> Vec<bool> {
        (0..height * width).map(|i| self.contains((i / width) as f64, (i % width) as f64)).collect()
    }
}

/// Implant randomization and artifact strength settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ImplantConfig {
    pub shape: ImplantShape,
    pub delta_chi_ppm: f64,
    pub peak_df_hz: f64,
    pub rf_fwhm_hz: f64,
    pub max_rotation_deg: f64,
    /// Half-width of the translation box in pixels; `None` uses `width / 4`.
    pub max_translation_px: Option<f64>,
    /// Standard deviation of complex Gaussian noise added to the metal k-space.
    pub noise_std: f64,
}

impl Default for ImplantConfig {
    fn default() -> Self {
        Self {
            shape: ImplantShape::Capsule { radius: 2.5, half_length: 4.0 },
            delta_chi_ppm: 900.0,
            peak_df_hz: 4000.0,
            rf_fwhm_hz: 2250.0,
            max_rotation_deg: 45.0,
            max_translation_px: None,
            noise_std: 0.0,
        }
    }
}

impl ImplantConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = match self.shape {
            ImplantShape::Disc { radius } => radius > 0.0,
            ImplantShape::Capsule { radius, half_length } => radius > 0.0 && half_length >= 0.0,
        };
        if !positive {
            return Err(MascError::Config("implant dimensions must be positive".into()));
        }
        if !(self.delta_chi_ppm >= 0.0 && self.peak_df_hz >= 0.0 && self.rf_fwhm_hz > 0.0) {
            return Err(MascError::Config("implant susceptibility, peak field and RF FWHM must be non-negative".into()));
        }
        if !(self.max_rotation_deg >= 0.0 && self.noise_std >= 0.0) {
            return Err(MascError::Config("rotation range and noise level must be non-negative".into()));
        }
        if matches!(self.max_translation_px, Some(t) if !(t >= 0.0)) {
            return Err(MascError::Config("translation box must be non-negative".into()));
        }
        Ok(())
    }

    pub fn translation_box(&self, width: usize) -> f64 {
        self.max_translation_px.unwrap_or(width as f64 / 4.0)
    }
}

/// Off-resonance frequency per pixel in Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldMap {
    pub height: usize,
    pub width: usize,
    pub df_hz: Vec<f64>,
}

impl FieldMap {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, df_hz: vec![0.0; height * width] }
    }

    pub fn max_abs(&self) -> f64 {
        self.df_hz.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Draws a placement uniformly in rotation and translation, retrying up to 100 times.
pub fn place_implant(cfg: &ImplantConfig, height: usize, width: usize, rng: &mut impl Rng) -> Result<ImplantSpec> {
    const TRIES: usize = 100;
    let t = cfg.translation_box(width);
    for _ in 0..TRIES {
        let rotation_deg = if cfg.max_rotation_deg > 0.0 {
            rng.gen_range(-cfg.max_rotation_deg..=cfg.max_rotation_deg)
        } else {
            0.0
        };
        let (dr, dc) = if t > 0.0 { (rng.gen_range(-t..=t), rng.gen_range(-t..=t)) } else { (0.0, 0.0) };
        let spec = ImplantSpec {
            shape: cfg.shape,
            center_row: height as f64 / 2.0 + dr,
            center_col: width as f64 / 2.0 + dc,
            rotation_deg,
            delta_chi_ppm: cfg.delta_chi_ppm,
            peak_df_hz: cfg.peak_df_hz,
        };
        if spec.fits(height, width) && spec.mask(height, width).iter().any(|&b| b) {
            return Ok(spec);
        }
    }
    Err(MascError::PlacementFailed(TRIES))
}

/// Dipole response of a susceptibility map (zero-padded to twice the size), unscaled.
pub fn raw_dipole_field(chi: &[f64], height: usize, width: usize) -> Result<Vec<f64>> {
    if chi.len() != height * width {
        return Err(MascError::InvalidShape { op: "dipole_field", msg: "susceptibility map size".into() });
    }
    let (ph, pw) = (2 * height, 2 * width);
    let mut buf = vec![Complex64::new(0.0, 0.0); ph * pw];
    for r in 0..height {
        for c in 0..width {
            buf[r * pw + c] = Complex64::new(chi[r * width + c], 0.0);
        }
    }
    transform_2d(&mut buf, ph, pw, false);
    let freq = |i: usize, n: usize| if i < n / 2 { i as f64 } else { i as f64 - n as f64 } / n as f64;
    for r in 0..ph {
        let ky = freq(r, ph);
        for c in 0..pw {
            let kx = freq(c, pw);
            let k2 = ky * ky + kx * kx;
            let d = if k2 == 0.0 { 0.0 } else { 1.0 / 3.0 - ky * ky / k2 };
            buf[r * pw + c] *= d;
        }
    }
    transform_2d(&mut buf, ph, pw, true);
    Ok((0..height * width).map(|i| buf[(i / width) * pw + i % width].re).collect())
}

/// Susceptibility map (ppm): tissue values with the implant's Δχ inside its mask.
pub fn susceptibility_map(implant: &ImplantSpec, maps: &TissueMaps) -> Vec<f64> {
    let mask = implant.mask(maps.height, maps.width);
    maps.chi_ppm().into_iter().zip(mask).map(|(chi, m)| if m { implant.delta_chi_ppm } else { chi }).collect()
}

/// Off-resonance field rescaled so its peak magnitude equals `implant.peak_df_hz`.
///
/// An implant with Δχ = 0 yields a zero field: the peak calibration refers to
/// the metal, so rescaling the weak tissue background alone would be meaningless.
pub fn dipole_field(implant: &ImplantSpec, maps: &TissueMaps) -> Result<FieldMap> {
    let (h, w) = (maps.height, maps.width);
    if !implant.fits(h, w) {
        return Err(MascError::PlacementFailed(0));
    }
    if implant.delta_chi_ppm == 0.0 {
        return Ok(FieldMap::zeros(h, w));
    }
    let raw = raw_dipole_field(&susceptibility_map(implant, maps), h, w)?;
    let peak = raw.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 || !peak.is_finite() {
        return Ok(FieldMap::zeros(h, w));
    }
    let s = implant.peak_df_hz / peak;
    Ok(FieldMap { height: h, width: w, df_hz: raw.into_iter().map(|v| v * s).collect() })
}

/// Excitation profile `exp(−df²/2σ²)` with σ derived from the FWHM.
pub fn rf_profile(df_hz: f64, fwhm_hz: f64) -> f64 {
    let sigma = fwhm_hz / FWHM_PER_SIGMA;
    (-df_hz * df_hz / (2.0 * sigma * sigma)).exp()
}

/// Moves each pixel `shift[i]` rows with linear weights; weight landing outside
/// the grid is clamped to the nearest edge row so the total is conserved.
pub fn splat_rows(values: &[f64], shift: &[f64], height: usize, width: usize) -> Vec<f64> {
    let mut out = vec![0.0; height * width];
    let last = (height - 1) as f64;
    for r in 0..height {
        for c in 0..width {
            let i = r * width + c;
            let v = values[i];
            if v == 0.0 {
                continue;
            }
            let pos = (r as f64 + shift[i]).clamp(0.0, last);
            let lo = pos.floor();
            let frac = pos - lo;
            let lo = lo as usize;
            out[lo * width + c] += v * (1.0 - frac);
            if frac > 0.0 {
                out[(lo + 1) * width + c] += v * frac;
            }
        }
    }
    out
}

/// Corrupted complex image: void, RF attenuation, readout displacement, phase.
pub fn apply_metal_artifacts(
    clean: &Image,
    field: &FieldMap,
    implant_mask: &[bool],
    seq: &SequenceParams,
    rf_fwhm_hz: f64,
) -> Result<Vec<Complex32>> {
    let (h, w) = (clean.height, clean.width);
    if field.height != h || field.width != w || implant_mask.len() != h * w {
        return Err(MascError::ShapeMismatch {
            op: "apply_metal_artifacts",
            lhs: vec![h, w],
            rhs: vec![field.height, field.width],
        });
    }
    let attenuated: Vec<f64> = (0..h * w)
        .map(|i| if implant_mask[i] { 0.0 } else { clean.data[i] as f64 * rf_profile(field.df_hz[i], rf_fwhm_hz) })
        .collect();
    let shift: Vec<f64> = field.df_hz.iter().map(|df| df / seq.readout_bw_hz_per_px).collect();
    let displaced = splat_rows(&attenuated, &shift, h, w);
    let te_s = seq.te_ms / 1000.0;
    Ok(displaced
        .iter()
        .zip(&field.df_hz)
        .map(|(&v, &df)| {
            let p = Complex64::from_polar(v, 2.0 * std::f64::consts::PI * df * te_s);
            Complex32::new(p.re as f32, p.im as f32)
        })
        .collect())
}

/// Matched clean/metal acquisition of one slice.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    /// DC-centered k-space of the clean image.
    pub clean_kspace: KSpaceGrid,
    /// DC-centered k-space of the metal-corrupted image.
    pub metal_kspace: KSpaceGrid,
    pub implant_mask: Vec<bool>,
    /// Fully sampled clean magnitude image.
    pub reference: Image,
    /// Fully sampled metal-corrupted magnitude image.
    pub metal_image: Image,
    pub subject: u32,
}

impl PairedSample {
    pub fn height(&self) -> usize {
        self.reference.height
    }

    pub fn width(&self) -> usize {
        self.reference.width
    }

    /// Rebuilds a sample from its DC-centered k-spaces; the images are the full-sampling reconstructions.
    pub fn from_kspaces(clean_kspace: KSpaceGrid, metal_kspace: KSpaceGrid, implant_mask: Vec<bool>, subject: u32) -> Result<Self> {
        let (h, w) = (clean_kspace.height(), clean_kspace.width());
        if metal_kspace.height() != h || metal_kspace.width() != w || implant_mask.len() != h * w {
            return Err(MascError::ShapeMismatch {
                op: "paired sample",
                lhs: vec![h, w],
                rhs: vec![metal_kspace.height(), metal_kspace.width(), implant_mask.len()],
            });
        }
        let full = LineMask::full(w);
        let reference = reconstruct(&clean_kspace, &full)?;
        let metal_image = reconstruct(&metal_kspace, &full)?;
        Ok(Self { clean_kspace, metal_kspace, implant_mask, reference, metal_image, subject })
    }
}

/// Builds a paired sample from existing tissue maps, drawing placement and noise from `rng`.
pub fn make_paired_sample_from_maps(
    maps: &TissueMaps,
    implant_cfg: &ImplantConfig,
    seq: &SequenceParams,
    rng: &mut impl Rng,
    subject: u32,
) -> Result<PairedSample> {
    implant_cfg.validate()?;
    seq.validate()?;
    let (h, w) = (maps.height, maps.width);
    let clean = spin_echo_signal(maps, seq);
    let implant = place_implant(implant_cfg, h, w, rng)?;
    let mask = implant.mask(h, w);
    let field = dipole_field(&implant, maps)?;
    let corrupted = apply_metal_artifacts(&clean, &field, &mask, seq, implant_cfg.rf_fwhm_hz)?;

    let clean_kspace = fft2_real(&clean)?.centered();
    let mut metal_kspace = fft2(&corrupted, h, w)?.centered();
    if implant_cfg.noise_std > 0.0 {
        let noise = Normal::new(0.0, implant_cfg.noise_std).map_err(|e| MascError::Config(e.to_string()))?;
        let noisy = metal_kspace
            .data()
            .iter()
            .map(|v| v + Complex32::new(noise.sample(rng) as f32, noise.sample(rng) as f32))
            .collect();
        metal_kspace = KSpaceGrid::new(h, w, noisy, metal_kspace.layout())?;
    }
    PairedSample::from_kspaces(clean_kspace, metal_kspace, mask, subject)
}

/// Deterministic paired sample: the phantom and the implant placement are both derived from `seed`.
pub fn make_paired_sample(
    seed: u64,
    phantom_cfg: &PhantomConfig,
    implant_cfg: &ImplantConfig,
    seq: &SequenceParams,
) -> Result<PairedSample> {
    let maps = generate_phantom(seed, phantom_cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    make_paired_sample_from_maps(&maps, implant_cfg, seq, &mut rng, 0)
}
