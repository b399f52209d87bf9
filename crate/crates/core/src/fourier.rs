//! Unitary 2D DFT, centering shifts and phase-encode line masking.
//!
//! Phase-encode lines are the columns of the grid: acquiring line `j`
//! acquires every row of k-space column `j`.

use std::cell::RefCell;

use num_complex::{Complex32, Complex64};
use rustfft::FftPlanner;

use crate::error::{MascError, Result};
use crate::image::Image;

/// Where the zero-frequency sample sits in a [`KSpaceGrid`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    DcAtOrigin,
    /// DC at `(H/2, W/2)`.
    DcCentered,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KSpaceGrid {
    height: usize,
    width: usize,
    data: Vec<Complex32>,
    layout: Layout,
}

impl KSpaceGrid {
    pub fn new(height: usize, width: usize, data: Vec<Complex32>, layout: Layout) -> Result<Self> {
        check_pow2(height)?;
        check_pow2(width)?;
        if data.len() != height * width {
            return Err(MascError::InvalidShape {
                op: "kspace",
                msg: format!("{height}x{width} grid needs {} samples, got {}", height * width, data.len()),
            });
        }
        Ok(Self { height, width, data, layout })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn data(&self) -> &[Complex32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<Complex32> {
        self.data
    }

    pub fn scaled(&self, s: f32) -> Self {
        Self { data: self.data.iter().map(|c| c * s).collect(), ..self.clone() }
    }

    /// Moves DC from the origin to the center. No-op when already centered.
    pub fn centered(self) -> Self {
        match self.layout {
            Layout::DcCentered => self,
            Layout::DcAtOrigin => Self {
                data: fftshift(&self.data, self.height, self.width),
                layout: Layout::DcCentered,
                ..self
            },
        }
    }

    /// Moves DC from the center to the origin. No-op when already at the origin.
    pub fn uncentered(self) -> Self {
        match self.layout {
            Layout::DcAtOrigin => self,
            Layout::DcCentered => Self {
                data: ifftshift(&self.data, self.height, self.width),
                layout: Layout::DcAtOrigin,
                ..self
            },
        }
    }
}

/// Binary selection over phase-encode lines (grid columns).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LineMask {
    lines: Vec<bool>,
}

impl LineMask {
    pub fn empty(n_pe: usize) -> Self {
        Self { lines: vec![false; n_pe] }
    }

    pub fn full(n_pe: usize) -> Self {
        Self { lines: vec![true; n_pe] }
    }

    pub fn from_lines(n_pe: usize, acquired: &[usize]) -> Result<Self> {
        let mut m = Self::empty(n_pe);
        for &l in acquired {
            m.set(l)?;
        }
        Ok(m)
    }

    pub fn from_bools(lines: Vec<bool>) -> Self {
        Self { lines }
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn is_acquired(&self, line: usize) -> bool {
        self.lines.get(line).copied().unwrap_or(false)
    }

    pub fn set(&mut self, line: usize) -> Result<()> {
        let n_pe = self.lines.len();
        *self.lines.get_mut(line).ok_or(MascError::LineOutOfRange { line, n_pe })? = true;
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.lines.iter().filter(|&&b| b).count()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.lines
    }

    pub fn acquired(&self) -> impl Iterator<Item = usize> + '_ {
        self.lines.iter().enumerate().filter_map(|(i, &b)| b.then_some(i))
    }

    pub fn unacquired(&self) -> impl Iterator<Item = usize> + '_ {
        self.lines.iter().enumerate().filter_map(|(i, &b)| (!b).then_some(i))
    }

    /// Zeroes every unacquired column of a grid with `width == len()`.
    pub fn apply(&self, k: &KSpaceGrid) -> Result<KSpaceGrid> {
        if k.width != self.lines.len() {
            return Err(MascError::ShapeMismatch { op: "mask", lhs: vec![k.height, k.width], rhs: vec![self.lines.len()] });
        }
        let mut out = k.clone();
        for row in out.data.chunks_mut(k.width) {
            for (v, &keep) in row.iter_mut().zip(&self.lines) {
                if !keep {
                    *v = Complex32::new(0.0, 0.0);
                }
            }
        }
        Ok(out)
    }
}

fn check_pow2(n: usize) -> Result<()> {
    if n == 0 || !n.is_power_of_two() {
        return Err(MascError::NotPowerOfTwo(n));
    }
    Ok(())
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Unnormalized in-place 1D transform of every contiguous `n`-chunk of `buf`.
fn fft_rows(buf: &mut [Complex64], n: usize, inverse: bool) {
    let plan = PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(n)
        } else {
            p.plan_fft_forward(n)
        }
    });
    plan.process(buf);
}

pub(crate) fn transform_2d(data: &mut [Complex64], h: usize, w: usize, inverse: bool) {
    fft_rows(data, w, inverse);
    let mut cols = vec![Complex64::new(0.0, 0.0); h * w];
    for r in 0..h {
        for c in 0..w {
            cols[c * h + r] = data[r * w + c];
        }
    }
    fft_rows(&mut cols, h, inverse);
    for r in 0..h {
        for c in 0..w {
            data[r * w + c] = cols[c * h + r];
        }
    }
    let norm = 1.0 / ((h * w) as f64).sqrt();
    data.iter_mut().for_each(|v| *v *= norm);
}

/// Unitary forward DFT of a complex image; result has DC at the origin.
pub fn fft2(image: &[Complex32], height: usize, width: usize) -> Result<KSpaceGrid> {
    check_pow2(height)?;
    check_pow2(width)?;
    if image.len() != height * width {
        return Err(MascError::InvalidShape { op: "fft2", msg: format!("{} samples for {height}x{width}", image.len()) });
    }
    let mut buf: Vec<Complex64> = image.iter().map(|c| Complex64::new(c.re as f64, c.im as f64)).collect();
    transform_2d(&mut buf, height, width, false);
    let data = buf.into_iter().map(|c| Complex32::new(c.re as f32, c.im as f32)).collect();
    KSpaceGrid::new(height, width, data, Layout::DcAtOrigin)
}

pub fn fft2_real(image: &Image) -> Result<KSpaceGrid> {
    let c: Vec<Complex32> = image.data.iter().map(|&v| Complex32::new(v, 0.0)).collect();
    fft2(&c, image.height, image.width)
}

/// Unitary inverse DFT; accepts either layout.
pub fn ifft2(k: &KSpaceGrid) -> Vec<Complex32> {
    let origin = k.clone().uncentered();
    let mut buf: Vec<Complex64> = origin.data.iter().map(|c| Complex64::new(c.re as f64, c.im as f64)).collect();
    transform_2d(&mut buf, k.height, k.width, true);
    buf.into_iter().map(|c| Complex32::new(c.re as f32, c.im as f32)).collect()
}

fn roll<T: Copy>(data: &[T], h: usize, w: usize, dy: usize, dx: usize) -> Vec<T> {
    let mut out = data.to_vec();
    for r in 0..h {
        for c in 0..w {
            out[((r + dy) % h) * w + (c + dx) % w] = data[r * w + c];
        }
    }
    out
}

/// Moves sample `(0, 0)` to `(h/2, w/2)`.
pub fn fftshift<T: Copy>(data: &[T], h: usize, w: usize) -> Vec<T> {
    roll(data, h, w, h / 2, w / 2)
}

/// Inverse of [`fftshift`]; identical to it for even extents.
pub fn ifftshift<T: Copy>(data: &[T], h: usize, w: usize) -> Vec<T> {
    roll(data, h, w, h - h / 2, w - w / 2)
}

/// `|F⁻¹(K ⊙ M)|` for a DC-centered grid.
pub fn reconstruct(k: &KSpaceGrid, mask: &LineMask) -> Result<Image> {
    if k.layout != Layout::DcCentered {
        return Err(MascError::Config("reconstruct expects DC-centered k-space".into()));
    }
    let masked = mask.apply(k)?;
    let img = ifft2(&masked);
    Image::new(k.height, k.width, img.iter().map(|c| c.norm()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(h: usize, w: usize, seed: u64) -> Vec<Complex32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..h * w).map(|_| Complex32::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect()
    }

    /// Direct O(N²) DFT, the independent oracle for the radix-2 path.
    fn naive_dft2(x: &[Complex32], h: usize, w: usize) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); h * w];
        for u in 0..h {
            for v in 0..w {
                let mut acc = Complex64::new(0.0, 0.0);
                for r in 0..h {
                    for c in 0..w {
                        let ph = -2.0 * std::f64::consts::PI * ((u * r) as f64 / h as f64 + (v * c) as f64 / w as f64);
                        let s = x[r * w + c];
                        acc += Complex64::new(s.re as f64, s.im as f64) * Complex64::from_polar(1.0, ph);
                    }
                }
                out[u * w + v] = acc / ((h * w) as f64).sqrt();
            }
        }
        out
    }

    #[test]
    fn matches_direct_dft() {
        let x = random_image(8, 4, 3);
        let k = fft2(&x, 8, 4).unwrap();
        let oracle = naive_dft2(&x, 8, 4);
        for (a, b) in k.data().iter().zip(&oracle) {
            assert!((a.re as f64 - b.re).abs() < 1e-5 && (a.im as f64 - b.im).abs() < 1e-5);
        }
    }

    #[test]
    fn zero_image_has_zero_spectrum() {
        let k = fft2(&vec![Complex32::new(0.0, 0.0); 16 * 8], 16, 8).unwrap();
        assert!(k.data().iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn impulse_gives_flat_spectrum() {
        let mut x = vec![Complex32::new(0.0, 0.0); 16 * 8];
        x[0] = Complex32::new(1.0, 0.0);
        let k = fft2(&x, 16, 8).unwrap();
        let expect = 1.0 / (128f32).sqrt();
        assert!(k.data().iter().all(|c| (c.re - expect).abs() < 1e-7 && c.im.abs() < 1e-7));
    }

    #[test]
    fn round_trip_64() {
        let x = random_image(64, 64, 11);
        let back = ifft2(&fft2(&x, 64, 64).unwrap());
        let err = x.iter().zip(&back).map(|(a, b)| (a - b).norm()).fold(0.0, f32::max);
        assert!(err < 1e-5, "round-trip error {err}");
    }

    #[test]
    fn rejects_non_power_of_two() {
        assert!(matches!(fft2(&vec![Complex32::new(0.0, 0.0); 12], 3, 4), Err(MascError::NotPowerOfTwo(3))));
    }

    #[test]
    fn dc_moves_to_center() {
        let mut x = vec![0u8; 8 * 4];
        x[0] = 1;
        let s = fftshift(&x, 8, 4);
        assert_eq!(s[4 * 4 + 2], 1);
        assert_eq!(ifftshift(&s, 8, 4), x);
        assert_eq!(fftshift(&s, 8, 4), x);
    }

    #[test]
    fn full_mask_recovers_magnitude() {
        let img = Image::new(16, 16, (0..256).map(|i| ((i * 37) % 17) as f32 / 17.0).collect()).unwrap();
        let k = fft2_real(&img).unwrap().centered();
        let rec = reconstruct(&k, &LineMask::full(16)).unwrap();
        for (a, b) in rec.data.iter().zip(&img.data) {
            assert!((a - b).abs() < 1e-5);
        }
        let empty = reconstruct(&k, &LineMask::empty(16)).unwrap();
        assert!(empty.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mask_length_must_match_width() {
        let k = fft2(&vec![Complex32::new(1.0, 0.0); 64], 8, 8).unwrap().centered();
        assert!(reconstruct(&k, &LineMask::full(4)).is_err());
    }
}
