mod common;

use common::{fd_check, gradient_suite, random_tensor};
use eisgan_soh::ndgrad::{Tape, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn every_op_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cases = gradient_suite(10, 1e-5, &mut rng);
    assert!(cases.len() >= 100);
    for c in &cases {
        assert!(c.rel_err < 1e-4, "{}: relative error {:.3e}", c.op, c.rel_err);
    }
}

#[test]
fn leaky_relu_slope_on_each_side() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![-2.0, 3.0])).unwrap();
    let y = tape.leaky_relu(x, 0.1).unwrap();
    let s = tape.sum(y).unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(g.wrt(x).data(), &[0.1, 1.0]);
}

#[test]
fn replaying_a_tape_is_bit_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random_tensor(&[2, 3, 12], &mut rng);
    let k = random_tensor(&[4, 3, 5], &mut rng);
    let b = random_tensor(&[4], &mut rng);
    let run = || {
        let mut t = Tape::new();
        let (xv, kv, bv) = (t.leaf(x.clone()).unwrap(), t.leaf(k.clone()).unwrap(), t.leaf(b.clone()).unwrap());
        let y = t.conv1d(xv, kv, bv, 2).unwrap();
        let y = t.leaky_relu(y, 0.2).unwrap();
        let l = t.mean(y).unwrap();
        let g = t.backward(l).unwrap();
        (t.value(l).clone(), g.wrt(xv), g.wrt(kv), g.wrt(bv))
    };
    assert_eq!(run(), run());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn conv_then_pool_gradients(seed in any::<u64>(), w in 1usize..5, l in 6usize..12, pad in 0usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = vec![
            random_tensor(&[2, 2, l], &mut rng),
            random_tensor(&[3, 2, w], &mut rng),
            random_tensor(&[3], &mut rng),
        ];
        prop_assume!(l + 2 * pad > w);
        let err = fd_check(
            &|t: &mut Tape, v| {
                let y = t.conv1d(v[0], v[1], v[2], pad)?;
                let y = t.avg_pool(y, 2)?;
                let n = t.value(y).len();
                let y = t.reshape(y, vec![n])?;
                t.gaussian_nll(y, Tensor::filled(&[n], 0.3), 1.3)
            },
            &inputs,
            1e-5,
            1e-6,
        );
        prop_assert!(err < 1e-4, "relative error {err:.3e}");
    }
}
