//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use eisgan_soh::gpr::Hyperparams;
use eisgan_soh::ndgrad::{GradError, Tape, Tensor, Var};
use rand::Rng;

/// Builds a scalar loss from leaves holding `inputs`.
pub type Build<'a> = dyn Fn(&mut Tape, &[Var]) -> Result<Var, GradError> + 'a;

fn eval(build: &Build, inputs: &[Tensor]) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone()).unwrap()).collect();
    let out = build(&mut tape, &vars).unwrap();
    tape.value(out).data()[0]
}

/// Largest relative error between tape gradients and central differences
/// over every input element. Values below `floor` in magnitude are compared
/// absolutely.
pub fn fd_check(build: &Build, inputs: &[Tensor], h: f64, floor: f64) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone()).unwrap()).collect();
    let out = build(&mut tape, &vars).unwrap();
    let grads = tape.backward(out).unwrap();
    let mut worst = 0.0f64;
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.wrt(*v);
        for j in 0..inputs[i].len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += h;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= h;
            let numeric = (eval(build, &plus) - eval(build, &minus)) / (2.0 * h);
            let a = analytic.data()[j];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            worst = worst.max(err);
        }
    }
    worst
}

pub fn random_tensor<R: Rng>(shape: &[usize], rng: &mut R) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Like [`random_tensor`] but keeps every entry at least `gap` away from 0.
pub fn random_away_from_zero<R: Rng>(shape: &[usize], gap: f64, rng: &mut R) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m: f64 = rng.random_range(gap..1.0);
            if rng.random::<bool>() { m } else { -m }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Direct-loop convolution: `out[b,k,t] = bias[k] + sum_r sum_w x[b,r,t+w-p] * kern[k,r,w]`.
pub fn conv_brute(x: &Tensor, kern: &Tensor, bias: &Tensor, pad: usize) -> Vec<f64> {
    let (b, r, l) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (k, w) = (kern.shape()[0], kern.shape()[2]);
    let l_out = l + 2 * pad - w + 1;
    let mut out = vec![0.0; b * k * l_out];
    for bi in 0..b {
        for ki in 0..k {
            for t in 0..l_out {
                let mut acc = bias.data()[ki];
                for ri in 0..r {
                    for wi in 0..w {
                        let src = t as isize + wi as isize - pad as isize;
                        if src >= 0 && (src as usize) < l {
                            acc += x.data()[(bi * r + ri) * l + src as usize] * kern.data()[(ki * r + ri) * w + wi];
                        }
                    }
                }
                out[(bi * k + ki) * l_out + t] = acc;
            }
        }
    }
    out
}

/// Inverse by Gauss-Jordan elimination with partial pivoting.
pub fn gauss_jordan_inverse(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs()))
            .unwrap();
        m.swap(col, pivot);
        let p = m[col][col];
        assert!(p.abs() > 1e-300, "singular matrix");
        for v in m[col].iter_mut() {
            *v /= p;
        }
        let pivot_row = m[col].clone();
        for (r, row) in m.iter_mut().enumerate() {
            if r != col {
                let f = row[col];
                if f != 0.0 {
                    for (v, pv) in row.iter_mut().zip(&pivot_row) {
                        *v -= f * pv;
                    }
                }
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

pub fn se(a: &[f64], b: &[f64], hp: &Hyperparams) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    hp.sigma_f.powi(2) * (-d2 / (2.0 * hp.length_scale.powi(2))).exp()
}

/// Posterior mean and variance in target units by explicit inversion,
/// with the same target standardization the library applies.
pub fn dense_gp_predict(c: &[Vec<f64>], y: &[f64], hp: &Hyperparams, x: &[f64]) -> (f64, f64) {
    let n = c.len();
    let mean_y = y.iter().sum::<f64>() / n as f64;
    let sd = (y.iter().map(|v| (v - mean_y).powi(2)).sum::<f64>() / n as f64).sqrt();
    let sd = if sd > 1e-12 { sd } else { 1.0 };
    let ys: Vec<f64> = y.iter().map(|v| (v - mean_y) / sd).collect();
    let a: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| se(&c[i], &c[j], hp) + if i == j { hp.sigma_n.powi(2) } else { 0.0 })
                .collect()
        })
        .collect();
    let inv = gauss_jordan_inverse(&a);
    let k: Vec<f64> = c.iter().map(|ci| se(ci, x, hp)).collect();
    let mut mean = 0.0;
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            mean += k[i] * inv[i][j] * ys[j];
            quad += k[i] * inv[i][j] * k[j];
        }
    }
    (mean_y + sd * mean, sd * sd * (hp.sigma_f.powi(2) - quad))
}

/// Finite-difference result of one randomized case.
pub struct GradCase {
    pub op: &'static str,
    pub rel_err: f64,
}

fn nll_readout(tape: &mut Tape, out: Var, code: &Tensor) -> Result<Var, GradError> {
    let n = tape.value(out).len();
    let flat = tape.reshape(out, vec![n])?;
    tape.gaussian_nll(flat, code.clone(), 0.7)
}

fn code_for<R: Rng>(n: usize, rng: &mut R) -> Tensor {
    random_tensor(&[n], rng)
}

/// `per_op` random cases for every differentiable tape op plus a small
/// end-to-end network, each checked with central differences of step `h`.
pub fn gradient_suite<R: Rng>(per_op: usize, h: f64, rng: &mut R) -> Vec<GradCase> {
    let floor = 1e-6;
    let mut cases = Vec::new();
    let mut push = |op, build: &Build, inputs: Vec<Tensor>| {
        cases.push(GradCase {
            op,
            rel_err: fd_check(build, &inputs, h, floor),
        });
    };
    for _ in 0..per_op {
        let b = rng.random_range(1..3);
        let r = rng.random_range(1..4);
        let l = rng.random_range(4..10);

        let k = rng.random_range(1..4);
        let w = rng.random_range(1..=l.min(5));
        let pad = rng.random_range(0..w);
        let l_out = l + 2 * pad - w + 1;
        let code = code_for(b * k * l_out, rng);
        push(
            "conv1d",
            &|t: &mut Tape, v: &[Var]| {
                let y = t.conv1d(v[0], v[1], v[2], pad)?;
                nll_readout(t, y, &code)
            },
            vec![random_tensor(&[b, r, l], rng), random_tensor(&[k, r, w], rng), random_tensor(&[k], rng)],
        );

        let n = rng.random_range(1..7);
        let m = rng.random_range(1..5);
        let code = code_for(b * m, rng);
        push(
            "dense",
            &|t: &mut Tape, v: &[Var]| {
                let y = t.dense(v[0], v[1], v[2])?;
                nll_readout(t, y, &code)
            },
            vec![random_tensor(&[b, n], rng), random_tensor(&[m, n], rng), random_tensor(&[m], rng)],
        );

        let alpha = rng.random_range(0.01..0.5);
        let code = code_for(b * r * l, rng);
        push(
            "leaky_relu",
            &|t: &mut Tape, v: &[Var]| {
                let y = t.leaky_relu(v[0], alpha)?;
                nll_readout(t, y, &code)
            },
            vec![random_away_from_zero(&[b, r, l], 1e-3, rng)],
        );

        let factor = rng.random_range(2..4);
        let code = code_for(b * r * (l / factor), rng);
        push(
            "avg_pool",
            &|t: &mut Tape, v: &[Var]| {
                let y = t.avg_pool(v[0], factor)?;
                nll_readout(t, y, &code)
            },
            vec![random_tensor(&[b, r, l], rng)],
        );

        let code = code_for(b * r * l * factor, rng);
        push(
            "upsample",
            &|t: &mut Tape, v: &[Var]| {
                let y = t.upsample(v[0], factor)?;
                nll_readout(t, y, &code)
            },
            vec![random_tensor(&[b, r, l], rng)],
        );

        let code = code_for(b * r * l, rng);
        push(
            "reshape",
            &|t: &mut Tape, v: &[Var]| {
                let y = t.reshape(v[0], vec![b * r, l])?;
                nll_readout(t, y, &code)
            },
            vec![random_tensor(&[b, r, l], rng)],
        );

        let s = rng.random_range(-2.0..2.0);
        let code = code_for(b * r * l, rng);
        push(
            "add_scale",
            &|t: &mut Tape, v: &[Var]| {
                let y = t.add(v[0], v[1])?;
                let y = t.scale(y, s)?;
                nll_readout(t, y, &code)
            },
            vec![random_tensor(&[b, r, l], rng), random_tensor(&[b, r, l], rng)],
        );

        push(
            "sum_mean",
            &|t: &mut Tape, v: &[Var]| {
                let a = t.sum(v[0])?;
                let m = t.mean(v[1])?;
                let y = t.add(a, m)?;
                t.scale(y, 0.5)
            },
            vec![random_tensor(&[b, l], rng), random_tensor(&[r, l], rng)],
        );

        let real = rng.random::<bool>();
        push(
            "bce_logit",
            &|t: &mut Tape, v: &[Var]| {
                let x = t.scale(v[0], 4.0)?;
                t.bce_logit_loss(x, real)
            },
            vec![random_tensor(&[b, m], rng)],
        );

        let sigma = rng.random_range(0.3..2.0);
        let code = random_tensor(&[b, m], rng);
        push(
            "gaussian_nll",
            &|t: &mut Tape, v: &[Var]| t.gaussian_nll(v[0], code.clone(), sigma),
            vec![random_tensor(&[b, m], rng)],
        );

        // dense -> reshape -> upsample -> conv -> leaky -> pool -> dense -> both losses
        let code = random_tensor(&[b, 2], rng);
        let inputs = vec![
            random_tensor(&[b, 3], rng),
            random_tensor(&[8, 3], rng),
            random_tensor(&[8], rng),
            random_tensor(&[2, 2, 3], rng),
            random_tensor(&[2], rng),
            random_tensor(&[2, 8], rng),
            random_tensor(&[2], rng),
            random_tensor(&[1, 8], rng),
            random_tensor(&[1], rng),
        ];
        push(
            "network",
            &|t: &mut Tape, v: &[Var]| {
                let h = t.dense(v[0], v[1], v[2])?;
                let h = t.reshape(h, vec![b, 2, 4])?;
                let h = t.upsample(h, 2)?;
                let h = t.conv1d(h, v[3], v[4], 1)?;
                let h = t.leaky_relu(h, 0.2)?;
                let h = t.avg_pool(h, 2)?;
                let f = t.reshape(h, vec![b, 8])?;
                let q = t.dense(f, v[5], v[6])?;
                let d = t.dense(f, v[7], v[8])?;
                let l1 = t.gaussian_nll(q, code.clone(), 1.0)?;
                let l2 = t.bce_logit_loss(d, true)?;
                t.add(l1, l2)
            },
            inputs,
        );
    }
    cases
}

/// Log determinant and inverse-quadratic form by Gaussian elimination.
fn logdet_and_quad(a: &[Vec<f64>], y: &[f64]) -> (f64, f64) {
    let inv = gauss_jordan_inverse(a);
    let n = a.len();
    let mut m = a.to_vec();
    let mut logdet = 0.0;
    for col in 0..n {
        let pivot = (col..n).max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs())).unwrap();
        m.swap(col, pivot);
        logdet += m[col][col].abs().ln();
        for r in col + 1..n {
            let f = m[r][col] / m[col][col];
            for c in col..n {
                m[r][c] -= f * m[col][c];
            }
        }
    }
    let quad = (0..n).map(|i| (0..n).map(|j| y[i] * inv[i][j] * y[j]).sum::<f64>()).sum();
    (logdet, quad)
}

/// Log marginal likelihood of `y` as given (no standardization).
pub fn dense_lml(c: &[Vec<f64>], y: &[f64], hp: &Hyperparams) -> f64 {
    let n = c.len();
    let a: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| se(&c[i], &c[j], hp) + if i == j { hp.sigma_n.powi(2) } else { 0.0 })
                .collect()
        })
        .collect();
    let (logdet, quad) = logdet_and_quad(&a, y);
    -0.5 * quad - 0.5 * logdet - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
}

/// Disagreement between the library and the dense oracle for one random
/// instance: worst absolute error of predictive mean and variance, and the
/// relative error of the log likelihood.
pub struct GpOracleCase {
    pub dim: usize,
    pub n: usize,
    pub abs_err: f64,
    pub lml_rel_err: f64,
}

pub fn gp_oracle_suite<R: Rng>(instances: usize, rng: &mut R) -> Vec<GpOracleCase> {
    use eisgan_soh::gpr::{log_marginal_likelihood, GprModel};
    let dims = [1usize, 9, 120];
    let mut out = Vec::with_capacity(instances);
    for i in 0..instances {
        let d = dims[i % dims.len()];
        let n = rng.random_range(1..=50);
        let c: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let hp = Hyperparams::new(
            rng.random_range(0.05..1.0),
            rng.random_range(0.3..3.0),
            (d as f64).sqrt() * rng.random_range(0.3..2.0),
        )
        .unwrap();
        let model = GprModel::with_hyperparams(c.clone(), y.clone(), hp).unwrap();
        let mut abs_err = 0.0f64;
        for k in 0..5 {
            // Every other query sits on a training input.
            let x: Vec<f64> = if k % 2 == 1 {
                c[rng.random_range(0..n)].clone()
            } else {
                (0..d).map(|_| rng.random_range(-2.5..2.5)).collect()
            };
            let p = model.predict(&x).unwrap();
            let (m, v) = dense_gp_predict(&c, &y, &hp, &x);
            abs_err = abs_err.max((p.mean - m).abs()).max((p.variance - v.max(0.0)).abs());
        }
        let lib = log_marginal_likelihood(&c, &y, &hp).unwrap().value;
        let dense = dense_lml(&c, &y, &hp);
        let lml_rel_err = (lib - dense).abs() / dense.abs().max(1.0);
        out.push(GpOracleCase { dim: d, n, abs_err, lml_rel_err });
    }
    out
}

/// A run small enough for a unit-test budget: two stages, 2 + 2 cells,
/// 20 cycles, two GAN epochs.
pub fn tiny_config(out: &std::path::Path) -> eisgan_soh::pipeline::PipelineConfig {
    let mut cfg = eisgan_soh::pipeline::PipelineConfig::default();
    cfg.seed = 7;
    cfg.out_dir = out.to_path_buf();
    cfg.stages = vec![3, 5];
    cfg.synth.n_train = 2;
    cfg.synth.n_test = 2;
    cfg.synth.n_cycles = 20;
    cfg.gan.epochs = 2;
    cfg.gpr.restarts = 2;
    cfg.perturb.samples = 20;
    cfg.perturb.cycle = 10;
    cfg
}
