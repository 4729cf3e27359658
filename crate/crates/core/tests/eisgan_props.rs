use eisgan_soh::eisdata::NormStats;
use eisgan_soh::eisgan::{
    extract_latents, generate, init_from_seed, latent_sweep, pearson, sweep_grid, train_step, GanConfig, LatentCode,
    Optimizers,
};
use eisgan_soh::ndgrad::{gaussian_nll, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn dist(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[test]
fn generator_is_continuous_in_the_code() {
    let nets = init_from_seed(&GanConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10 {
        let code = LatentCode::sample(9, 16, &mut rng);
        let base = generate(&nets, &code).unwrap();
        let dir: Vec<f64> = (0..9).map(|_| rng.sample(StandardNormal)).collect();
        let mut ratios = Vec::new();
        for eps in [1e-3, 1e-5, 1e-7] {
            let mut moved = code.clone();
            for (c, d) in moved.c.iter_mut().zip(&dir) {
                *c += eps * d;
            }
            ratios.push(dist(&generate(&nets, &moved).unwrap(), &base) / eps);
        }
        // A piecewise-linear map: the difference quotient stays bounded.
        assert!(ratios.iter().all(|r| r.is_finite() && *r < 1e3), "{ratios:?}");
    }
}

#[test]
fn white_noise_latents_do_not_track_capacity() {
    let nets = init_from_seed(&GanConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let n = 300;
    let capacity: Vec<f64> = (0..n).map(|i| 45.0 - 0.03 * i as f64).collect();
    let latents: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let data: Vec<f64> = (0..120).map(|_| rng.sample(StandardNormal)).collect();
            extract_latents(&nets, &Tensor::new(vec![2, 60], data).unwrap()).unwrap()
        })
        .collect();
    for d in 0..9 {
        let col: Vec<f64> = latents.iter().map(|v| v[d]).collect();
        let r = pearson(&col, &capacity).unwrap();
        assert!(r.abs() < 0.3, "latent {d}: {r}");
    }
}

#[test]
fn mi_surrogate_is_an_affine_function_of_squared_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (b, l) = (5, 9);
    let q: Vec<f64> = (0..b * l).map(|_| rng.sample(StandardNormal)).collect();
    let c: Vec<f64> = (0..b * l).map(|_| rng.sample(StandardNormal)).collect();
    let sq: f64 = q.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum();
    let expected = l as f64 / 2.0 * (2.0 * std::f64::consts::PI).ln() + sq / (2.0 * b as f64);
    assert!((gaussian_nll(&q, &c, 1.0) / b as f64 - expected).abs() < 1e-12);
    let mut tape = Tape::new();
    let qv = tape.leaf(Tensor::new(vec![b, l], q).unwrap()).unwrap();
    let loss = tape.gaussian_nll(qv, Tensor::new(vec![b, l], c).unwrap(), 1.0).unwrap();
    assert!((tape.value(loss).data()[0] - expected).abs() < 1e-12);
}

#[test]
fn reported_mi_loss_scales_with_lambda() {
    let step = |lambda: f64| {
        let cfg = GanConfig {
            lambda_mi: lambda,
            batch_size: 4,
            ..GanConfig::default()
        };
        let mut nets = init_from_seed(&cfg).unwrap();
        let mut opts = Optimizers::new(&nets);
        let mut data_rng = ChaCha8Rng::seed_from_u64(1);
        let data: Vec<f64> = (0..4 * 120).map(|_| data_rng.sample(StandardNormal)).collect();
        let batch = Tensor::new(vec![4, 2, 60], data).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        train_step(&mut nets, &mut opts, &batch, &mut rng).unwrap()
    };
    let (a, b) = (step(0.1), step(0.4));
    assert_eq!((a.loss_d, a.loss_g), (b.loss_d, b.loss_g));
    assert!((b.loss_mi - 4.0 * a.loss_mi).abs() < 1e-12 * b.loss_mi.abs().max(1.0));
}

#[test]
fn sweeps_refine_continuously() {
    let nets = init_from_seed(&GanConfig::default()).unwrap();
    let stats = NormStats::new([1.0, -0.2], [0.3, 0.1]).unwrap();
    let max_step = |n| {
        let curves = latent_sweep(&nets, 0, &sweep_grid(n), &stats).unwrap();
        assert!(curves.iter().all(Tensor::is_finite));
        curves.windows(2).map(|w| dist(&w[0], &w[1])).fold(0.0, f64::max)
    };
    let (coarse, fine) = (max_step(9), max_step(17));
    assert!(coarse > 0.0 && fine < coarse, "{coarse} vs {fine}");
    assert!(latent_sweep(&nets, 9, &sweep_grid(3), &stats).is_err());
}
