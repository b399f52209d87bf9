//! Finite-difference gradient cases covering every autodiff operator (64-bit, h = 1e-4).

use masc_core::diffcore::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-4;
/// Relative-error bound every operator must meet.
pub const TOL: f64 = 1e-5;

type Build = dyn Fn(&mut Tape<f64>, &[Var]) -> Var;

fn loss_value(inputs: &[Tensor<f64>], weights: &Tensor<f64>, build: &Build) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &vars);
    tape.data(out).iter().zip(weights.data()).map(|(a, b)| a * b).sum()
}

/// Records the worst relative error over all inputs.
fn gradcheck(out: &mut Vec<(String, f64)>, name: &str, inputs: Vec<Tensor<f64>>, build: &Build, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let y = build(&mut tape, &vars);
    let weights = Tensor::from_fn(tape.shape(y), |_| rng.gen_range(-1.0..1.0));
    let w = tape.constant(weights.clone());
    let prod = tape.mul(y, w).unwrap();
    let loss = tape.sum(prod);
    tape.backward(loss).unwrap();

    let mut worst = 0.0f64;
    for (i, v) in vars.iter().enumerate() {
        let analytic = tape.grad(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; inputs[i].numel()]);
        let mut numeric = vec![0.0; analytic.len()];
        for j in 0..numeric.len() {
            let mut plus = inputs.clone();
            plus[i].data_mut()[j] += H;
            let mut minus = inputs.clone();
            minus[i].data_mut()[j] -= H;
            numeric[j] = (loss_value(&plus, &weights, build) - loss_value(&minus, &weights, build)) / (2.0 * H);
        }
        let diff: f64 = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let scale = analytic.iter().map(|a| a * a).sum::<f64>().sqrt().max(numeric.iter().map(|n| n * n).sum::<f64>().sqrt());
        let rel = if scale < 1e-12 { diff } else { diff / scale };
        worst = worst.max(rel);
    }
    out.push((name.to_string(), worst));
}

/// Uniform values with magnitude at least `margin` (keeps kinks out of the FD stencil).
fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng, margin: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.gen_range(margin..1.0);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

pub fn uniform(shape: &[usize], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

fn elementwise_binary_ops(out: &mut Vec<(String, f64)>) {
    for seed in 0..3 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = uniform(&[2, 3], &mut rng, -1.0, 1.0);
        let b = uniform(&[2, 3], &mut rng, 0.5, 1.5);
        gradcheck(out, "add", vec![a.clone(), b.clone()], &|t, v| t.add(v[0], v[1]).unwrap(), seed);
        gradcheck(out, "sub", vec![a.clone(), b.clone()], &|t, v| t.sub(v[0], v[1]).unwrap(), seed);
        gradcheck(out, "mul", vec![a.clone(), b.clone()], &|t, v| t.mul(v[0], v[1]).unwrap(), seed);
        gradcheck(out, "div", vec![a.clone(), b.clone()], &|t, v| t.div(v[0], v[1]).unwrap(), seed);
        // minimum: operands separated by at least 0.05
        let offs = away_from_zero(&[2, 3], &mut rng, 0.05);
        let c = Tensor::new(vec![2, 3], a.data().iter().zip(offs.data()).map(|(x, o)| x + o).collect()).unwrap();
        gradcheck(out, "minimum", vec![a.clone(), c], &|t, v| t.minimum(v[0], v[1]).unwrap(), seed);
    }
}

fn elementwise_unary_ops(out: &mut Vec<(String, f64)>) {
    for seed in 0..3 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let x = away_from_zero(&[3, 4], &mut rng, 0.05);
        let pos = uniform(&[3, 4], &mut rng, 0.2, 2.0);
        gradcheck(out, "scale", vec![x.clone()], &|t, v| t.scale(v[0], -1.7), seed);
        gradcheck(out, "add_scalar", vec![x.clone()], &|t, v| t.add_scalar(v[0], 0.3), seed);
        gradcheck(out, "relu", vec![x.clone()], &|t, v| t.relu(v[0]), seed);
        gradcheck(out, "exp", vec![x.clone()], &|t, v| t.exp(v[0]), seed);
        gradcheck(out, "ln", vec![pos.clone()], &|t, v| t.ln(v[0]), seed);
        gradcheck(out, "abs", vec![x.clone()], &|t, v| t.abs(v[0]), seed);
        gradcheck(out, "square", vec![x.clone()], &|t, v| t.square(v[0]), seed);
        // clamp bounds sit between the sampled magnitudes and never within 1e-3 of a sample
        let clamp_in = Tensor::from_fn(&[3, 4], |i| -1.0 + 0.17 * i as f64 + 0.01);
        gradcheck(out, "clamp", vec![clamp_in], &|t, v| t.clamp(v[0], -0.5, 0.6), seed);
    }
}

fn reductions_and_reshape(out: &mut Vec<(String, f64)>) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = uniform(&[2, 3, 2], &mut rng, -1.0, 1.0);
    gradcheck(out, "sum", vec![x.clone()], &|t, v| t.sum(v[0]), 1);
    gradcheck(out, "mean", vec![x.clone()], &|t, v| t.mean(v[0]), 2);
    gradcheck(out, "reshape", vec![x], &|t, v| t.reshape(v[0], &[3, 4]).unwrap(), 3);
}

fn linear_layer(out: &mut Vec<(String, f64)>) {
    for seed in 0..3 {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let x = uniform(&[3, 5], &mut rng, -1.0, 1.0);
        let w = uniform(&[4, 5], &mut rng, -1.0, 1.0);
        let b = uniform(&[4], &mut rng, -1.0, 1.0);
        gradcheck(out, "linear", vec![x.clone(), w.clone(), b], &|t, v| t.linear(v[0], v[1], Some(v[2])).unwrap(), seed);
        gradcheck(out, "linear/nobias", vec![x, w], &|t, v| t.linear(v[0], v[1], None).unwrap(), seed);
    }
}

fn convolution(out: &mut Vec<(String, f64)>) {
    for seed in 0..3 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let x = uniform(&[2, 2, 5, 4], &mut rng, -1.0, 1.0);
        let w3 = uniform(&[3, 2, 3, 3], &mut rng, -1.0, 1.0);
        let w1 = uniform(&[3, 2, 1, 1], &mut rng, -1.0, 1.0);
        let b = uniform(&[3], &mut rng, -1.0, 1.0);
        gradcheck(out, "conv2d/3x3", vec![x.clone(), w3, b.clone()], &|t, v| t.conv2d(v[0], v[1], Some(v[2])).unwrap(), seed);
        gradcheck(out, "conv2d/1x1", vec![x, w1, b], &|t, v| t.conv2d(v[0], v[1], Some(v[2])).unwrap(), seed);
    }
}

fn pooling_and_upsampling(out: &mut Vec<(String, f64)>) {
    for seed in 0..3 {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        // distinct values spaced 0.01 apart so each window has a clear maximum
        let mut vals: Vec<f64> = (0..2 * 2 * 4 * 6).map(|i| i as f64 * 0.01).collect();
        for i in (1..vals.len()).rev() {
            vals.swap(i, rng.gen_range(0..=i));
        }
        let x = Tensor::new(vec![2, 2, 4, 6], vals).unwrap();
        gradcheck(out, "max_pool2", vec![x], &|t, v| t.max_pool2(v[0]).unwrap(), seed);
        let y = uniform(&[2, 2, 3, 4], &mut rng, -1.0, 1.0);
        gradcheck(out, "upsample2", vec![y], &|t, v| t.upsample2(v[0]).unwrap(), seed);
    }
}

fn channel_concatenation(out: &mut Vec<(String, f64)>) {
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    let a = uniform(&[2, 1, 3, 3], &mut rng, -1.0, 1.0);
    let b = uniform(&[2, 2, 3, 3], &mut rng, -1.0, 1.0);
    gradcheck(out, "concat_channels", vec![a, b], &|t, v| t.concat_channels(v[0], v[1]).unwrap(), 5);
}

fn softmax_family_and_gather(out: &mut Vec<(String, f64)>) {
    for seed in 0..3 {
        let mut rng = ChaCha8Rng::seed_from_u64(600 + seed);
        let x = uniform(&[3, 5], &mut rng, -2.0, 2.0);
        gradcheck(out, "log_softmax", vec![x.clone()], &|t, v| t.log_softmax(v[0]).unwrap(), seed);
        gradcheck(out, "softmax", vec![x.clone()], &|t, v| t.softmax(v[0]).unwrap(), seed);
        gradcheck(out, "gather", vec![x], &|t, v| t.gather(v[0], &[4, 0, 2]).unwrap(), seed);
    }
}

fn gaussian_window_statistics(out: &mut Vec<(String, f64)>) {
    for seed in 0..2 {
        let mut rng = ChaCha8Rng::seed_from_u64(700 + seed);
        let x = uniform(&[1, 2, 9, 8], &mut rng, 0.0, 1.0);
        gradcheck(out, "gaussian_window", vec![x.clone()], &|t, v| t.gaussian_window(v[0], 5, 1.5).unwrap(), seed);
        // local variance: G(x*x) - G(x)^2
        gradcheck(
            out,
            "gaussian_variance",
            vec![x],
            &|t, v| {
                let xx = t.mul(v[0], v[0]).unwrap();
                let gxx = t.gaussian_window(xx, 5, 1.5).unwrap();
                let gx = t.gaussian_window(v[0], 5, 1.5).unwrap();
                let gx2 = t.square(gx);
                t.sub(gxx, gx2).unwrap()
            },
            seed,
        );
    }
}

fn instance_normalization(out: &mut Vec<(String, f64)>) {
    for seed in 0..3 {
        let mut rng = ChaCha8Rng::seed_from_u64(800 + seed);
        let x = uniform(&[2, 3, 3, 4], &mut rng, -1.0, 1.0);
        let g = uniform(&[3], &mut rng, 0.5, 1.5);
        let b = uniform(&[3], &mut rng, -0.5, 0.5);
        gradcheck(
            out,
            "instance_norm/affine",
            vec![x.clone(), g, b],
            &|t, v| t.instance_norm(v[0], Some(v[1]), Some(v[2]), 1e-5).unwrap(),
            seed,
        );
        gradcheck(out, "instance_norm/plain", vec![x], &|t, v| t.instance_norm(v[0], None, None, 1e-5).unwrap(), seed);
    }
}

/// Worst relative gradient error of every operator case, by case name.
pub fn operator_errors() -> Vec<(String, f64)> {
    let mut out = Vec::new();
    elementwise_binary_ops(&mut out);
    elementwise_unary_ops(&mut out);
    reductions_and_reshape(&mut out);
    linear_layer(&mut out);
    convolution(&mut out);
    pooling_and_upsampling(&mut out);
    channel_concatenation(&mut out);
    softmax_family_and_gather(&mut out);
    gaussian_window_statistics(&mut out);
    instance_normalization(&mut out);
    out
}
