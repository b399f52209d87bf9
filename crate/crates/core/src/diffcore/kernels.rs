//! Slice-level forward/backward kernels used by the tape.
//!
//! Layout is NCHW row-major throughout. Convolutions use im2col + GEMM.

use super::Scalar;

pub(crate) fn im2col<T: Scalar>(x: &[T], ci: usize, h: usize, w: usize, k: usize, cols: &mut [T]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for c in 0..ci {
        let plane = &x[c * hw..(c + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for oy in 0..h {
                    let iy = oy as isize + dy;
                    let out = &mut dst[oy * w..(oy + 1) * w];
                    if iy < 0 || iy >= h as isize {
                        out.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, o) in out.iter_mut().enumerate() {
                        let ix = ox as isize + dx;
                        *o = if ix < 0 || ix >= w as isize { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

pub(crate) fn col2im_add<T: Scalar>(cols: &[T], ci: usize, h: usize, w: usize, k: usize, x: &mut [T]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for c in 0..ci {
        let plane = &mut x[c * hw..(c + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for oy in 0..h {
                    let iy = oy as isize + dy;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..w {
                        let ix = ox as isize + dx;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += src[oy * w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Geometry of a stride-1, extent-preserving convolution.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub ci: usize,
    pub co: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.ci * self.k * self.k
    }
}

pub(crate) fn conv2d_forward<T: Scalar>(g: ConvGeom, x: &[T], weight: &[T], bias: Option<&[T]>, out: &mut [T]) {
    let hw = g.h * g.w;
    let patch = g.patch();
    let mut cols = if g.k == 1 { Vec::new() } else { vec![T::zero(); patch * hw] };
    for n in 0..g.n {
        let xn = &x[n * g.ci * hw..(n + 1) * g.ci * hw];
        let on = &mut out[n * g.co * hw..(n + 1) * g.co * hw];
        let b_mat: &[T] = if g.k == 1 {
            xn
        } else {
            im2col(xn, g.ci, g.h, g.w, g.k, &mut cols);
            &cols
        };
        T::gemm(g.co, patch, hw, weight, (patch as isize, 1), b_mat, (hw as isize, 1), T::zero(), on, (hw as isize, 1));
        if let Some(b) = bias {
            for (co, &bv) in b.iter().enumerate() {
                on[co * hw..(co + 1) * hw].iter_mut().for_each(|v| *v += bv);
            }
        }
    }
}

/// Accumulates gradients for input, weight and bias (each optional).
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward<T: Scalar>(
    g: ConvGeom,
    x: &[T],
    weight: &[T],
    dy: &[T],
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
    mut db: Option<&mut [T]>,
) {
    let hw = g.h * g.w;
    let patch = g.patch();
    let mut cols = if g.k == 1 { Vec::new() } else { vec![T::zero(); patch * hw] };
    let mut dcols = if g.k == 1 || dx.is_none() { Vec::new() } else { vec![T::zero(); patch * hw] };
    for n in 0..g.n {
        let xn = &x[n * g.ci * hw..(n + 1) * g.ci * hw];
        let dyn_ = &dy[n * g.co * hw..(n + 1) * g.co * hw];
        if let Some(dw) = dw.as_deref_mut() {
            let b_mat: &[T] = if g.k == 1 {
                xn
            } else {
                im2col(xn, g.ci, g.h, g.w, g.k, &mut cols);
                &cols
            };
            // dW[co, p] += sum_s dy[co, s] * cols[p, s]
            T::gemm(g.co, hw, patch, dyn_, (hw as isize, 1), b_mat, (1, hw as isize), T::one(), dw, (patch as isize, 1));
        }
        if let Some(db) = db.as_deref_mut() {
            for (co, d) in db.iter_mut().enumerate() {
                *d += dyn_[co * hw..(co + 1) * hw].iter().copied().sum::<T>();
            }
        }
        if let Some(dx) = dx.as_deref_mut() {
            let dxn = &mut dx[n * g.ci * hw..(n + 1) * g.ci * hw];
            if g.k == 1 {
                T::gemm(patch, g.co, hw, weight, (1, patch as isize), dyn_, (hw as isize, 1), T::one(), dxn, (hw as isize, 1));
            } else {
                T::gemm(patch, g.co, hw, weight, (1, patch as isize), dyn_, (hw as isize, 1), T::zero(), &mut dcols, (hw as isize, 1));
                col2im_add(&dcols, g.ci, g.h, g.w, g.k, dxn);
            }
        }
    }
}

/// 2×2 max pooling; returns the flat argmax index of every output cell.
pub(crate) fn maxpool2_forward<T: Scalar>(planes: usize, h: usize, w: usize, x: &[T], out: &mut [T]) -> Vec<u32> {
    let (ho, wo) = (h / 2, w / 2);
    let mut arg = vec![0u32; planes * ho * wo];
    for p in 0..planes {
        let base = p * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                let o = p * ho * wo + oy * wo + ox;
                out[o] = x[best];
                arg[o] = best as u32;
            }
        }
    }
    arg
}

fn bilinear_taps(dst: usize, src_len: usize) -> (usize, usize, f64) {
    // half-pixel centers, scale factor 2
    let s = ((dst as f64 + 0.5) / 2.0 - 0.5).max(0.0);
    let i0 = (s.floor() as usize).min(src_len - 1);
    let i1 = (i0 + 1).min(src_len - 1);
    (i0, i1, s - i0 as f64)
}

pub(crate) fn upsample2_forward<T: Scalar>(planes: usize, h: usize, w: usize, x: &[T], out: &mut [T]) {
    let (ho, wo) = (2 * h, 2 * w);
    let ytaps: Vec<_> = (0..ho).map(|y| bilinear_taps(y, h)).collect();
    let xtaps: Vec<_> = (0..wo).map(|x| bilinear_taps(x, w)).collect();
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * ho * wo..(p + 1) * ho * wo];
        for (oy, &(y0, y1, fy)) in ytaps.iter().enumerate() {
            let fy = T::lit(fy);
            for (ox, &(x0, x1, fx)) in xtaps.iter().enumerate() {
                let fx = T::lit(fx);
                let top = src[y0 * w + x0] * (T::one() - fx) + src[y0 * w + x1] * fx;
                let bot = src[y1 * w + x0] * (T::one() - fx) + src[y1 * w + x1] * fx;
                dst[oy * wo + ox] = top * (T::one() - fy) + bot * fy;
            }
        }
    }
}

pub(crate) fn upsample2_backward<T: Scalar>(planes: usize, h: usize, w: usize, dy: &[T], dx: &mut [T]) {
    let (ho, wo) = (2 * h, 2 * w);
    let ytaps: Vec<_> = (0..ho).map(|y| bilinear_taps(y, h)).collect();
    let xtaps: Vec<_> = (0..wo).map(|x| bilinear_taps(x, w)).collect();
    for p in 0..planes {
        let g = &dy[p * ho * wo..(p + 1) * ho * wo];
        let d = &mut dx[p * h * w..(p + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ytaps.iter().enumerate() {
            let fy = T::lit(fy);
            for (ox, &(x0, x1, fx)) in xtaps.iter().enumerate() {
                let fx = T::lit(fx);
                let v = g[oy * wo + ox];
                let top = v * (T::one() - fy);
                let bot = v * fy;
                d[y0 * w + x0] += top * (T::one() - fx);
                d[y0 * w + x1] += top * fx;
                d[y1 * w + x0] += bot * (T::one() - fx);
                d[y1 * w + x1] += bot * fx;
            }
        }
    }
}

/// Normalized 1D Gaussian taps; the 2D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size).map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Separable "valid" Gaussian filtering of every plane.
pub(crate) fn gaussian_valid_forward<T: Scalar>(planes: usize, h: usize, w: usize, taps: &[f64], x: &[T], out: &mut [T]) {
    let s = taps.len();
    let (ho, wo) = (h + 1 - s, w + 1 - s);
    let taps: Vec<T> = taps.iter().map(|&t| T::lit(t)).collect();
    let mut tmp = vec![T::zero(); h * wo];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        for i in 0..h {
            for j in 0..wo {
                let mut acc = T::zero();
                for (b, &t) in taps.iter().enumerate() {
                    acc += t * src[i * w + j + b];
                }
                tmp[i * wo + j] = acc;
            }
        }
        let dst = &mut out[p * ho * wo..(p + 1) * ho * wo];
        for i in 0..ho {
            for j in 0..wo {
                let mut acc = T::zero();
                for (a, &t) in taps.iter().enumerate() {
                    acc += t * tmp[(i + a) * wo + j];
                }
                dst[i * wo + j] = acc;
            }
        }
    }
}

pub(crate) fn gaussian_valid_backward<T: Scalar>(planes: usize, h: usize, w: usize, taps: &[f64], dy: &[T], dx: &mut [T]) {
    let s = taps.len();
    let (ho, wo) = (h + 1 - s, w + 1 - s);
    let taps: Vec<T> = taps.iter().map(|&t| T::lit(t)).collect();
    let mut dtmp = vec![T::zero(); h * wo];
    for p in 0..planes {
        let g = &dy[p * ho * wo..(p + 1) * ho * wo];
        dtmp.iter_mut().for_each(|v| *v = T::zero());
        for i in 0..ho {
            for j in 0..wo {
                let v = g[i * wo + j];
                for (a, &t) in taps.iter().enumerate() {
                    dtmp[(i + a) * wo + j] += t * v;
                }
            }
        }
        let d = &mut dx[p * h * w..(p + 1) * h * w];
        for i in 0..h {
            for j in 0..wo {
                let v = dtmp[i * wo + j];
                for (b, &t) in taps.iter().enumerate() {
                    d[i * w + j + b] += t * v;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn taps_are_normalized_and_symmetric() {
        let t = gaussian_taps(11, 1.5);
        assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for i in 0..11 {
            assert!((t[i] - t[10 - i]).abs() < 1e-15);
        }
    }

    #[test]
    fn upsample_of_constant_is_constant() {
        let x = vec![3.0f64; 4 * 4];
        let mut out = vec![0.0; 8 * 8];
        upsample2_forward(1, 4, 4, &x, &mut out);
        assert!(out.iter().all(|&v| (v - 3.0).abs() < 1e-12));
    }

    #[test]
    fn im2col_then_col2im_counts_taps() {
        // col2im(im2col(ones)) counts how many windows touch each pixel.
        let (h, w, k) = (4, 5, 3);
        let x = vec![1.0f64; h * w];
        let mut cols = vec![0.0; k * k * h * w];
        im2col(&x, 1, h, w, k, &mut cols);
        let mut back = vec![0.0; h * w];
        col2im_add(&cols, 1, h, w, k, &mut back);
        assert_eq!(back[0], 4.0);
        assert_eq!(back[w + 1], 9.0);
        assert_eq!(back[1], 6.0);
    }
}
