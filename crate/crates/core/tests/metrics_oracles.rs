use masc_core::metrics::{mae, mse, paired_t_test, psnr, ssim, QualityConfig};
use masc_core::Image;
use proptest::prelude::*;

/// SSIM evaluated window by window with explicit 2D Gaussian weights.
fn brute_force_ssim(x: &Image, y: &Image, cfg: &QualityConfig) -> f64 {
    let s = cfg.window;
    let c = (s as f64 - 1.0) / 2.0;
    let mut w2 = vec![0.0; s * s];
    for a in 0..s {
        for b in 0..s {
            w2[a * s + b] = (-((a as f64 - c).powi(2) + (b as f64 - c).powi(2)) / (2.0 * cfg.sigma * cfg.sigma)).exp();
        }
    }
    let total: f64 = w2.iter().sum();
    w2.iter_mut().for_each(|v| *v /= total);
    let (c1, c2) = ((cfg.k1 * cfg.data_range).powi(2), (cfg.k2 * cfg.data_range).powi(2));
    let mut acc = 0.0;
    let mut count = 0;
    for i in 0..=x.height - s {
        for j in 0..=x.width - s {
            let (mut mx, mut my) = (0.0, 0.0);
            for a in 0..s {
                for b in 0..s {
                    let wt = w2[a * s + b];
                    mx += wt * x.at(i + a, j + b) as f64;
                    my += wt * y.at(i + a, j + b) as f64;
                }
            }
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for a in 0..s {
                for b in 0..s {
                    let wt = w2[a * s + b];
                    let dx = x.at(i + a, j + b) as f64 - mx;
                    let dy = y.at(i + a, j + b) as f64 - my;
                    vx += wt * dx * dx;
                    vy += wt * dy * dy;
                    cxy += wt * dx * dy;
                }
            }
            acc += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    acc / count as f64
}

fn checkerboard(n: usize, period: usize) -> Image {
    Image::new(n, n, (0..n * n).map(|i| (((i / n) / period + (i % n) / period) % 2) as f32).collect()).unwrap()
}

#[test]
fn ssim_matches_windowed_oracle() {
    let cfg = QualityConfig::default();
    let x = Image::new(24, 20, (0..480).map(|i| ((i * 31 % 97) as f32) / 97.0).collect()).unwrap();
    let y = Image::new(24, 20, (0..480).map(|i| ((i * 17 % 89) as f32) / 89.0).collect()).unwrap();
    let fast = ssim(&x, &y, &cfg).unwrap();
    let slow = brute_force_ssim(&x, &y, &cfg);
    assert!((fast - slow).abs() < 1e-10, "{fast} vs {slow}");
}

#[test]
fn inverted_binary_image_has_nonpositive_ssim() {
    let cfg = QualityConfig::default();
    // period-2 checkerboard: every 11x11 window contains both values
    let x = checkerboard(32, 2);
    let inv = Image::new(32, 32, x.data.iter().map(|v| 1.0 - v).collect()).unwrap();
    let fast = ssim(&x, &inv, &cfg).unwrap();
    let slow = brute_force_ssim(&x, &inv, &cfg);
    assert!((fast - slow).abs() < 1e-10);
    assert!(fast <= 0.0, "ssim = {fast}");
}

/// Two-sided Student-t tail by quadrature: substituting x = sqrt(df)·tan(θ)
/// turns the density into cos^(df-1)(θ) on [0, π/2], integrated with Simpson's rule.
fn two_sided_tail(t: f64, df: u32) -> f64 {
    let integral = |upper: f64| {
        let n = 200_000;
        let h = upper / n as f64;
        let f = |th: f64| th.cos().powi(df as i32 - 1);
        let inner: f64 = (1..n).map(|i| f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 }).sum();
        (f(0.0) + inner + f(upper)) * h / 3.0
    };
    let theta = (t.abs() / (df as f64).sqrt()).atan();
    1.0 - integral(theta) / integral(std::f64::consts::FRAC_PI_2)
}

#[test]
fn t_test_matches_reference_distribution() {
    let d = [1.0, 2.0, 3.0, 4.0, 5.0];
    let r = paired_t_test(&d, &[0.0; 5]).unwrap();
    assert!((r.t - 4.242_640_687).abs() < 1e-8);
    assert!((r.p - two_sided_tail(r.t, 4)).abs() < 1e-10, "{} vs {}", r.p, two_sided_tail(r.t, 4));
    assert!((r.p - 0.0132).abs() < 1e-4);

    let a = [0.71, 0.64, 0.69, 0.73, 0.70, 0.66, 0.68, 0.72];
    let b = [0.65, 0.66, 0.61, 0.70, 0.64, 0.65, 0.60, 0.69];
    let r = paired_t_test(&a, &b).unwrap();
    assert!((r.p - two_sided_tail(r.t, 7)).abs() < 1e-10);
}

fn image_pair() -> impl Strategy<Value = (Image, Image)> {
    let n = 16 * 16;
    (proptest::collection::vec(0.0f32..1.0, n), proptest::collection::vec(0.0f32..1.0, n))
        .prop_map(|(a, b)| (Image::new(16, 16, a).unwrap(), Image::new(16, 16, b).unwrap()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn symmetric_metrics((x, y) in image_pair()) {
        let cfg = QualityConfig::default();
        prop_assert!((ssim(&x, &y, &cfg).unwrap() - ssim(&y, &x, &cfg).unwrap()).abs() < 1e-12);
        prop_assert_eq!(mse(&x, &y).unwrap(), mse(&y, &x).unwrap());
        prop_assert_eq!(mae(&x, &y).unwrap(), mae(&y, &x).unwrap());
        let s = ssim(&x, &y, &cfg).unwrap();
        prop_assert!((-1.0..=1.0).contains(&s));
    }

    #[test]
    fn psnr_mse_identity((x, y) in image_pair()) {
        let m = mse(&x, &y).unwrap();
        prop_assume!(m > 0.0);
        prop_assert!((psnr(&x, &y, 1.0).unwrap() - 10.0 * (1.0 / m).log10()).abs() < 1e-12);
    }
}
