//! Image quality metrics, the composite quality score and paired t-tests.

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::diffcore::gaussian_taps;
use crate::error::{MascError, Result};
use crate::image::Image;

/// Reported in tables when two images are identical and PSNR is infinite.
pub const PSNR_CAP: f64 = 99.0;

#[derive(Debug, Clone, PartialEq)]
pub struct QualityConfig {
    pub lambda_ssim: f64,
    pub lambda_nmse: f64,
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub data_range: f64,
}

impl Default for QualityConfig {
    fn default() -> Self {
        Self { lambda_ssim: 0.5, lambda_nmse: 0.5, window: 11, sigma: 1.5, k1: 0.01, k2: 0.03, data_range: 1.0 }
    }
}

impl QualityConfig {
    pub fn validate(&self) -> Result<()> {
        if (self.lambda_ssim + self.lambda_nmse - 1.0).abs() > 1e-9 {
            return Err(MascError::Config(format!(
                "lambda_ssim + lambda_nmse must be 1, got {}",
                self.lambda_ssim + self.lambda_nmse
            )));
        }
        if self.window % 2 == 0 || self.window == 0 {
            return Err(MascError::Config(format!("SSIM window must be odd, got {}", self.window)));
        }
        if !(self.data_range > 0.0) || !(self.sigma > 0.0) {
            return Err(MascError::Config("SSIM data range and sigma must be positive".into()));
        }
        Ok(())
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.data_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.data_range).powi(2)
    }
}

fn check_dims(x: &Image, y: &Image) -> Result<()> {
    if !x.same_dims(y) {
        return Err(MascError::ShapeMismatch { op: "metric", lhs: vec![x.height, x.width], rhs: vec![y.height, y.width] });
    }
    Ok(())
}

/// Separable valid-mode Gaussian filter in f64.
fn filter_valid(src: &[f64], h: usize, w: usize, taps: &[f64]) -> (Vec<f64>, usize, usize) {
    let s = taps.len();
    let (ho, wo) = (h + 1 - s, w + 1 - s);
    let mut tmp = vec![0.0; h * wo];
    for i in 0..h {
        for j in 0..wo {
            tmp[i * wo + j] = taps.iter().enumerate().map(|(b, t)| t * src[i * w + j + b]).sum();
        }
    }
    let mut out = vec![0.0; ho * wo];
    for i in 0..ho {
        for j in 0..wo {
            out[i * wo + j] = taps.iter().enumerate().map(|(a, t)| t * tmp[(i + a) * wo + j]).sum();
        }
    }
    (out, ho, wo)
}

/// Local SSIM values at every valid window position.
pub fn ssim_map(x: &Image, y: &Image, cfg: &QualityConfig) -> Result<Vec<f64>> {
    check_dims(x, y)?;
    if cfg.window > x.height || cfg.window > x.width {
        return Err(MascError::InvalidShape {
            op: "ssim",
            msg: format!("window {} larger than {}x{}", cfg.window, x.height, x.width),
        });
    }
    let taps = gaussian_taps(cfg.window, cfg.sigma);
    let (h, w) = (x.height, x.width);
    let xs: Vec<f64> = x.data.iter().map(|&v| v as f64).collect();
    let ys: Vec<f64> = y.data.iter().map(|&v| v as f64).collect();
    let xx: Vec<f64> = xs.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = ys.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = xs.iter().zip(&ys).map(|(a, b)| a * b).collect();
    let (mx, _, _) = filter_valid(&xs, h, w, &taps);
    let (my, _, _) = filter_valid(&ys, h, w, &taps);
    let (sxx, _, _) = filter_valid(&xx, h, w, &taps);
    let (syy, _, _) = filter_valid(&yy, h, w, &taps);
    let (sxy, _, _) = filter_valid(&xy, h, w, &taps);
    let (c1, c2) = (cfg.c1(), cfg.c2());
    Ok((0..mx.len())
        .map(|i| {
            let (a, b) = (mx[i], my[i]);
            let vx = sxx[i] - a * a;
            let vy = syy[i] - b * b;
            let cxy = sxy[i] - a * b;
            ((2.0 * a * b + c1) * (2.0 * cxy + c2)) / ((a * a + b * b + c1) * (vx + vy + c2))
        })
        .collect())
}

/// Mean SSIM with Gaussian-weighted local statistics over valid windows.
pub fn ssim(x: &Image, y: &Image, cfg: &QualityConfig) -> Result<f64> {
    let map = ssim_map(x, y, cfg)?;
    Ok(map.iter().sum::<f64>() / map.len() as f64)
}

pub fn mse(x: &Image, y: &Image) -> Result<f64> {
    check_dims(x, y)?;
    let s: f64 = x.data.iter().zip(&y.data).map(|(a, b)| ((a - b) as f64).powi(2)).sum();
    Ok(s / x.data.len() as f64)
}

pub fn mae(x: &Image, y: &Image) -> Result<f64> {
    check_dims(x, y)?;
    let s: f64 = x.data.iter().zip(&y.data).map(|(a, b)| ((a - b) as f64).abs()).sum();
    Ok(s / x.data.len() as f64)
}

/// `‖x − reference‖² / ‖reference‖²`.
pub fn nmse(x: &Image, reference: &Image) -> Result<f64> {
    check_dims(x, reference)?;
    let den: f64 = reference.data.iter().map(|&v| (v as f64).powi(2)).sum();
    if den == 0.0 {
        return Err(MascError::ZeroReference);
    }
    let num: f64 = x.data.iter().zip(&reference.data).map(|(a, b)| ((a - b) as f64).powi(2)).sum();
    Ok(num / den)
}

/// `10·log10(range² / mse)`; `+∞` for identical images.
pub fn psnr(x: &Image, y: &Image, data_range: f64) -> Result<f64> {
    let m = mse(x, y)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (data_range * data_range / m).log10())
}

/// Composite reconstruction quality `λ_ssim·SSIM + λ_nmse·(1 − NMSE)`.
pub fn quality(x: &Image, reference: &Image, cfg: &QualityConfig) -> Result<f64> {
    let s = ssim(x, reference, cfg)?;
    let n = nmse(x, reference)?;
    Ok(combine_quality(s, n, cfg))
}

pub fn combine_quality(ssim: f64, nmse: f64, cfg: &QualityConfig) -> f64 {
    cfg.lambda_ssim * ssim + cfg.lambda_nmse * (1.0 - nmse)
}

/// The five reported metrics for one reconstruction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSet {
    pub ssim: f64,
    pub psnr: f64,
    pub mse: f64,
    pub nmse: f64,
    pub mae: f64,
}

impl MetricSet {
    pub fn evaluate(x: &Image, reference: &Image, cfg: &QualityConfig) -> Result<Self> {
        Ok(Self {
            ssim: ssim(x, reference, cfg)?,
            psnr: psnr(x, reference, cfg.data_range)?.min(PSNR_CAP),
            mse: mse(x, reference)?,
            nmse: nmse(x, reference)?,
            mae: mae(x, reference)?,
        })
    }

    pub fn quality(&self, cfg: &QualityConfig) -> f64 {
        combine_quality(self.ssim, self.nmse, cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t: f64,
    /// Two-sided p-value.
    pub p: f64,
    pub df: f64,
}

/// Paired two-sided t-test on `a − b`.
///
/// Zero-variance differences give `p = 0` (infinite `t`) when the mean
/// difference is nonzero and `p = 1` (`t = 0`) otherwise.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(MascError::ShapeMismatch { op: "paired_t_test", lhs: vec![a.len()], rhs: vec![b.len()] });
    }
    let n = a.len();
    if n < 2 {
        return Err(MascError::TooFewSamples { needed: 2, got: n });
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let df = (n - 1) as f64;
    if var == 0.0 {
        return Ok(if mean == 0.0 {
            TTest { t: 0.0, p: 1.0, df }
        } else {
            TTest { t: mean.signum() * f64::INFINITY, p: 0.0, df }
        });
    }
    let t = mean / (var.sqrt() / (n as f64).sqrt());
    Ok(TTest { t, p: student_t_two_sided(t, df)?, df })
}

/// `P(|T| ≥ |t|)` for Student's t with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> Result<f64> {
    if !t.is_finite() {
        return Ok(0.0);
    }
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| MascError::Config(e.to_string()))?;
    Ok((2.0 * dist.sf(t.abs())).clamp(0.0, 1.0))
}

/// Mean and sample standard deviation (n − 1).
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
    (m, var.sqrt())
}
