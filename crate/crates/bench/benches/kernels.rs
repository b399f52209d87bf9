//! Throughput of the FFT, convolution, restoration forward pass and SSIM.

use criterion::{criterion_group, criterion_main, Criterion};
use masc_core::diffcore::{Tape, Tensor};
use masc_core::fourier::{fft2, ifft2};
use masc_core::marnet::{MarConfig, MarNet};
use masc_core::metrics::{ssim, QualityConfig};
use masc_core::nn::NormKind;
use masc_core::{Complex32, Image};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const N: usize = 64;

fn image(rng: &mut ChaCha8Rng) -> Image {
    Image::new(N, N, (0..N * N).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
}

fn fourier(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x: Vec<Complex32> = (0..N * N).map(|_| Complex32::new(rng.gen(), rng.gen())).collect();
    c.bench_function("fft2 64x64", |b| b.iter(|| fft2(&x, N, N).unwrap()));
    let k = fft2(&x, N, N).unwrap();
    c.bench_function("ifft2 64x64", |b| b.iter(|| ifft2(&k)));
}

fn convolution(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut random = |shape: Vec<usize>| {
        let n = shape.iter().product();
        Tensor::<f32>::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    };
    let (x, w) = (random(vec![4, 16, N, N]), random(vec![16, 16, 3, 3]));
    c.bench_function("conv2d 4x16x64x64 3x3x16", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let (xv, wv) = (tape.constant(x.clone()), tape.leaf(w.clone()));
            let y = tape.conv2d(xv, wv, None).unwrap();
            let loss = tape.sum(y);
            tape.backward(loss).unwrap();
        })
    });
}

fn restoration(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let net = MarNet::<f32>::new(&MarConfig { depth: 3, base_channels: 16, norm: NormKind::Instance }, &mut rng).unwrap();
    let batch: Vec<Image> = (0..8).map(|_| image(&mut rng)).collect();
    c.bench_function("restoration forward 8x64x64", |b| b.iter(|| net.restore_batch(&batch).unwrap()));
}

fn structural_similarity(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (x, y) = (image(&mut rng), image(&mut rng));
    let cfg = QualityConfig::default();
    c.bench_function("ssim 64x64", |b| b.iter(|| ssim(&x, &y, &cfg).unwrap()));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = fourier, convolution, restoration, structural_similarity
}
criterion_main!(benches);
