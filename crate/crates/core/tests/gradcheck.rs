//! Analytic gradients vs central finite differences (64-bit, h = 1e-4).

#[path = "support/op_cases.rs"]
mod op_cases;

use masc_core::diffcore::Tape;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn every_operator_matches_finite_differences() {
    let errors = op_cases::operator_errors();
    assert!(errors.len() > 30);
    for (name, err) in errors {
        assert!(err < op_cases::TOL, "{name}: relative gradient error {err:e}");
    }
}

#[test]
fn forward_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(900);
    let x = op_cases::uniform(&[1, 2, 8, 8], &mut rng, -1.0, 1.0).cast::<f32>();
    let w = op_cases::uniform(&[4, 2, 3, 3], &mut rng, -1.0, 1.0).cast::<f32>();
    let run = || {
        let mut t = Tape::<f32>::new();
        let xv = t.constant(x.clone());
        let wv = t.constant(w.clone());
        let y = t.conv2d(xv, wv, None).unwrap();
        let n = t.instance_norm(y, None, None, 1e-5).unwrap();
        let p = t.max_pool2(n).unwrap();
        let u = t.upsample2(p).unwrap();
        t.data(u).to_vec()
    };
    assert_eq!(run(), run());
}
