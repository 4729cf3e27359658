mod common;

use common::{conv_brute, random_tensor};
use eisgan_soh::ndgrad::{ConvKernelBank, Tape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn conv1d_matches_direct_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let (b, r, k) = (rng.random_range(1..4), rng.random_range(1..5), rng.random_range(1..5));
        let w = rng.random_range(1..8usize);
        let l = rng.random_range(w..w + 20);
        let pad = rng.random_range(0..w);
        let x = random_tensor(&[b, r, l], &mut rng);
        let kern = random_tensor(&[k, r, w], &mut rng);
        let bias = random_tensor(&[k], &mut rng);
        let mut tape = Tape::new();
        let (xv, kv, bv) = (
            tape.leaf(x.clone()).unwrap(),
            tape.leaf(kern.clone()).unwrap(),
            tape.leaf(bias.clone()).unwrap(),
        );
        let y = tape.conv1d(xv, kv, bv, pad).unwrap();
        let expected = conv_brute(&x, &kern, &bias, pad);
        assert_eq!(tape.value(y).shape(), &[b, k, l + 2 * pad - w + 1]);
        for (a, e) in tape.value(y).data().iter().zip(&expected) {
            assert!((a - e).abs() <= 1e-12, "{a} vs {e}");
        }
    }
}

#[test]
fn unbatched_input_and_kernel_bank() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random_tensor(&[2, 9], &mut rng);
    let kern = random_tensor(&[3, 2, 4], &mut rng);
    let bias = random_tensor(&[3], &mut rng);
    let bank = ConvKernelBank::new(kern.clone(), bias.clone()).unwrap();
    let y = bank.apply(&x, 1).unwrap();
    assert_eq!(y.shape(), &[3, 8]);
    let batched = x.clone().reshaped(vec![1, 2, 9]).unwrap();
    let expected = conv_brute(&batched, &kern, &bias, 1);
    for (a, e) in y.data().iter().zip(&expected) {
        assert!((a - e).abs() <= 1e-12);
    }
    assert!(ConvKernelBank::new(kern, random_tensor(&[2], &mut rng)).is_err());
}
