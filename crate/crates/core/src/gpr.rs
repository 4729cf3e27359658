//! Exact Gaussian process regression with an isotropic squared-exponential
//! kernel.
//!
//! Targets are standardized before fitting so the zero-mean prior is
//! appropriate; predictions are mapped back to the original units.
//! Hyperparameters are fitted by maximizing the log marginal likelihood in
//! log space with BFGS and a backtracking line search, from several starts.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeding;

#[derive(Debug, Error)]
pub enum GprError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("kernel matrix is not positive definite even with jitter {0:e}")]
    NotPositiveDefinite(f64),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("all {restarts} optimizer starts failed; best log-likelihood {best:?}: {last_error}")]
    Diverged {
        restarts: usize,
        best: Option<f64>,
        last_error: String,
    },
}

/// Diagonal jitter tried, in order, when the Cholesky factorization fails.
pub const JITTER_LADDER: [f64; 6] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];
const LOG_BOUND: f64 = 12.0;

/// Noise std, signal std and length scale; all positive.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub sigma_n: f64,
    pub sigma_f: f64,
    pub length_scale: f64,
}

impl Hyperparams {
    pub fn new(sigma_n: f64, sigma_f: f64, length_scale: f64) -> Result<Self, GprError> {
        let hp = Self {
            sigma_n,
            sigma_f,
            length_scale,
        };
        if hp.to_log().iter().all(|v| v.is_finite()) {
            Ok(hp)
        } else {
            Err(GprError::Invalid(format!(
                "hyperparameters must be positive and finite: {hp:?}"
            )))
        }
    }

    pub fn to_log(&self) -> [f64; 3] {
        [self.sigma_n.ln(), self.sigma_f.ln(), self.length_scale.ln()]
    }

    pub fn from_log(log: [f64; 3]) -> Self {
        Self {
            sigma_n: log[0].exp(),
            sigma_f: log[1].exp(),
            length_scale: log[2].exp(),
        }
    }
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            sigma_n: 0.1,
            sigma_f: 1.0,
            length_scale: 1.0,
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `sigma_f^2 exp(-|ci - cj|^2 / (2 l^2))`.
pub fn se_kernel(ci: &[f64], cj: &[f64], hp: &Hyperparams) -> f64 {
    assert_eq!(ci.len(), cj.len(), "kernel inputs must have equal dimension");
    hp.sigma_f * hp.sigma_f * (-sq_dist(ci, cj) / (2.0 * hp.length_scale * hp.length_scale)).exp()
}

/// Gram matrix `K(C, C)`, filled symmetrically.
pub fn kernel_matrix(inputs: &[Vec<f64>], hp: &Hyperparams) -> DMatrix<f64> {
    let n = inputs.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = hp.sigma_f * hp.sigma_f;
        for j in 0..i {
            let v = se_kernel(&inputs[i], &inputs[j], hp);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

fn check_inputs(inputs: &[Vec<f64>], targets: &[f64]) -> Result<usize, GprError> {
    if inputs.is_empty() {
        return Err(GprError::Invalid("at least one training point is required".into()));
    }
    if inputs.len() != targets.len() {
        return Err(GprError::Dimension(format!(
            "{} inputs but {} targets",
            inputs.len(),
            targets.len()
        )));
    }
    let d = inputs[0].len();
    if d == 0 || inputs.iter().any(|r| r.len() != d) {
        return Err(GprError::Dimension("inputs must share one positive dimension".into()));
    }
    let finite = inputs.iter().flatten().chain(targets).all(|v| v.is_finite());
    if !finite {
        return Err(GprError::Invalid("non-finite training value".into()));
    }
    Ok(d)
}

fn factorize(a: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64), GprError> {
    for jitter in JITTER_LADDER {
        let mut m = a.clone();
        if jitter > 0.0 {
            for i in 0..m.nrows() {
                m[(i, i)] += jitter;
            }
        }
        if let Some(chol) = Cholesky::new(m) {
            return Ok((chol, jitter));
        }
    }
    Err(GprError::NotPositiveDefinite(JITTER_LADDER[JITTER_LADDER.len() - 1]))
}

/// Log marginal likelihood and its gradient with respect to
/// `(ln sigma_n, ln sigma_f, ln l)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogLikelihood {
    pub value: f64,
    pub grad_log: [f64; 3],
    /// Diagonal jitter that was needed for the factorization.
    pub jitter: f64,
}

/// `-1/2 ln det(K + sigma_n^2 I) - 1/2 y^T (K + sigma_n^2 I)^-1 y - n/2 ln 2 pi`.
pub fn log_marginal_likelihood(
    inputs: &[Vec<f64>],
    targets: &[f64],
    hp: &Hyperparams,
) -> Result<LogLikelihood, GprError> {
    lml(inputs, targets, hp, true)
}

fn lml(
    inputs: &[Vec<f64>],
    targets: &[f64],
    hp: &Hyperparams,
    with_grad: bool,
) -> Result<LogLikelihood, GprError> {
    check_inputs(inputs, targets)?;
    lml_dist(&distance_matrix(inputs), targets, hp, with_grad)
}

fn distance_matrix(inputs: &[Vec<f64>]) -> DMatrix<f64> {
    let n = inputs.len();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..i {
            let v = sq_dist(&inputs[i], &inputs[j]);
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    d
}

/// Likelihood from precomputed squared distances.
fn lml_dist(
    dist: &DMatrix<f64>,
    targets: &[f64],
    hp: &Hyperparams,
    with_grad: bool,
) -> Result<LogLikelihood, GprError> {
    let n = targets.len();
    let sf2 = hp.sigma_f * hp.sigma_f;
    let inv_2l2 = 0.5 / (hp.length_scale * hp.length_scale);
    let k = dist.map(|d| sf2 * (-d * inv_2l2).exp());
    let mut a = k.clone();
    let noise = hp.sigma_n * hp.sigma_n;
    for i in 0..n {
        a[(i, i)] += noise;
    }
    let (chol, jitter) = factorize(&a)?;
    let y = DVector::from_column_slice(targets);
    let alpha = chol.solve(&y);
    let log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let value = -0.5 * log_det - 0.5 * y.dot(&alpha) - 0.5 * n as f64 * (2.0 * PI).ln();

    let mut grad_log = [0.0; 3];
    if with_grad {
        // dL/dtheta = 1/2 tr((alpha alpha^T - A^-1) dA/dtheta)
        let a_inv = chol.inverse();
        let inv_l2 = 2.0 * inv_2l2;
        let (mut g_n, mut g_f, mut g_l) = (0.0, 0.0, 0.0);
        for j in 0..n {
            for i in 0..n {
                let w = alpha[i] * alpha[j] - a_inv[(i, j)];
                let kij = k[(i, j)];
                g_f += w * 2.0 * kij;
                g_l += w * kij * dist[(i, j)] * inv_l2;
            }
            g_n += (alpha[j] * alpha[j] - a_inv[(j, j)]) * 2.0 * noise;
        }
        grad_log = [0.5 * g_n, 0.5 * g_f, 0.5 * g_l];
    }
    Ok(LogLikelihood {
        value,
        grad_log,
        jitter,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    /// Number of optimizer starts; the first start is the supplied initial point.
    pub restarts: usize,
    pub max_iterations: usize,
    /// Stop when every gradient component is below this.
    pub grad_tolerance: f64,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            restarts: 10,
            max_iterations: 200,
            grad_tolerance: 1e-6,
            seed: 0,
        }
    }
}

/// A fitted GP: training data, hyperparameters and cached factorization.
#[derive(Clone, Debug)]
pub struct GprModel {
    inputs: Vec<Vec<f64>>,
    targets: Vec<f64>,
    hyperparams: Hyperparams,
    y_mean: f64,
    y_scale: f64,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    jitter: f64,
    log_likelihood: f64,
}

/// Predictive mean and variance of the latent function.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub mean: f64,
    pub variance: f64,
}

impl Prediction {
    pub fn std(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// Mean and population standard deviation; a constant target gets unit scale.
fn target_stats(y: &[f64]) -> (f64, f64) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let sd = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    (mean, if sd > 1e-12 { sd } else { 1.0 })
}

impl GprModel {
    /// Builds the model at fixed hyperparameters (given in standardized-target units).
    pub fn with_hyperparams(
        inputs: Vec<Vec<f64>>,
        targets: Vec<f64>,
        hyperparams: Hyperparams,
    ) -> Result<Self, GprError> {
        check_inputs(&inputs, &targets)?;
        let (y_mean, y_scale) = target_stats(&targets);
        Self::assemble(inputs, targets, hyperparams, y_mean, y_scale)
    }

    /// Zero-mean GP on the targets as given, without centering or scaling.
    pub fn unscaled(inputs: Vec<Vec<f64>>, targets: Vec<f64>, hyperparams: Hyperparams) -> Result<Self, GprError> {
        check_inputs(&inputs, &targets)?;
        Self::assemble(inputs, targets, hyperparams, 0.0, 1.0)
    }

    fn assemble(
        inputs: Vec<Vec<f64>>,
        targets: Vec<f64>,
        hyperparams: Hyperparams,
        y_mean: f64,
        y_scale: f64,
    ) -> Result<Self, GprError> {
        let n = inputs.len();
        let mut a = kernel_matrix(&inputs, &hyperparams);
        for i in 0..n {
            a[(i, i)] += hyperparams.sigma_n * hyperparams.sigma_n;
        }
        let (chol, jitter) = factorize(&a)?;
        let y = DVector::from_iterator(n, targets.iter().map(|v| (v - y_mean) / y_scale));
        let alpha = chol.solve(&y);
        let log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let log_likelihood = -0.5 * log_det - 0.5 * y.dot(&alpha) - 0.5 * n as f64 * (2.0 * PI).ln();
        Ok(Self {
            inputs,
            targets,
            hyperparams,
            y_mean,
            y_scale,
            chol,
            alpha,
            jitter,
            log_likelihood,
        })
    }

    pub fn hyperparams(&self) -> Hyperparams {
        self.hyperparams
    }

    /// Log marginal likelihood of the standardized targets.
    pub fn log_likelihood(&self) -> f64 {
        self.log_likelihood
    }

    pub fn dim(&self) -> usize {
        self.inputs[0].len()
    }

    pub fn n_train(&self) -> usize {
        self.inputs.len()
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn standardized_targets(&self) -> Vec<f64> {
        self.targets.iter().map(|v| (v - self.y_mean) / self.y_scale).collect()
    }

    pub fn target_mean(&self) -> f64 {
        self.y_mean
    }

    pub fn target_scale(&self) -> f64 {
        self.y_scale
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Posterior in standardized units.
    pub fn predict_standardized(&self, c_star: &[f64]) -> Result<Prediction, GprError> {
        if c_star.len() != self.dim() {
            return Err(GprError::Dimension(format!(
                "query has dimension {}, model expects {}",
                c_star.len(),
                self.dim()
            )));
        }
        let hp = &self.hyperparams;
        let k_star = DVector::from_iterator(
            self.inputs.len(),
            self.inputs.iter().map(|c| se_kernel(c, c_star, hp)),
        );
        let mean = k_star.dot(&self.alpha);
        let v = self
            .chol
            .l_dirty()
            .lower_triangle()
            .solve_lower_triangular(&k_star)
            .expect("cholesky factor has a positive diagonal");
        let mut variance = hp.sigma_f * hp.sigma_f - v.norm_squared();
        if variance < 0.0 && variance > -1e-10 {
            variance = 0.0;
        }
        Ok(Prediction { mean, variance })
    }

    /// Posterior in target units.
    pub fn predict(&self, c_star: &[f64]) -> Result<Prediction, GprError> {
        let p = self.predict_standardized(c_star)?;
        Ok(Prediction {
            mean: self.y_mean + self.y_scale * p.mean,
            variance: self.y_scale * self.y_scale * p.variance,
        })
    }

    pub fn to_file(&self) -> GprFile {
        GprFile {
            format: GPR_FORMAT.to_string(),
            hyperparams: self.hyperparams,
            inputs: self.inputs.clone(),
            targets: self.targets.clone(),
            target_mean: self.y_mean,
            target_scale: self.y_scale,
        }
    }

    pub fn from_file(file: GprFile) -> Result<Self, GprError> {
        if file.format != GPR_FORMAT {
            return Err(GprError::Invalid(format!(
                "unsupported model format `{}`",
                file.format
            )));
        }
        check_inputs(&file.inputs, &file.targets)?;
        Self::assemble(
            file.inputs,
            file.targets,
            file.hyperparams,
            file.target_mean,
            file.target_scale,
        )
    }
}

pub const GPR_FORMAT: &str = "eisgan-soh/gpr/v1";

/// Serialized form of a [`GprModel`]; the factorization is rebuilt on load.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GprFile {
    pub format: String,
    pub hyperparams: Hyperparams,
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    pub target_mean: f64,
    pub target_scale: f64,
}

pub fn predict(model: &GprModel, c_star: &[f64]) -> Result<Prediction, GprError> {
    model.predict(c_star)
}

/// Fits hyperparameters by maximizing the log marginal likelihood.
pub fn fit(
    inputs: &[Vec<f64>],
    targets: &[f64],
    init: Hyperparams,
    opts: &FitOptions,
) -> Result<GprModel, GprError> {
    check_inputs(inputs, targets)?;
    let (y_mean, y_scale) = target_stats(targets);
    let y: Vec<f64> = targets.iter().map(|v| (v - y_mean) / y_scale).collect();

    let dist = distance_matrix(inputs);
    let mut rng = seeding::stream(opts.seed, &[seeding::tag("gpr-restarts")]);
    let (lo, hi) = (0.01f64.ln(), 10f64.ln());
    let mut best: Option<([f64; 3], f64)> = None;
    let mut last_error = String::new();
    for start in 0..opts.restarts.max(1) {
        let x0 = if start == 0 {
            init.to_log()
        } else {
            [
                rng.random_range(lo..hi),
                rng.random_range(lo..hi),
                rng.random_range(lo..hi),
            ]
        };
        match maximize(&dist, &y, x0, opts) {
            Ok((x, value)) => {
                if best.is_none_or(|(_, b)| value > b) {
                    best = Some((x, value));
                }
            }
            Err(e) => last_error = e.to_string(),
        }
    }
    let Some((x, _)) = best else {
        return Err(GprError::Diverged {
            restarts: opts.restarts,
            best: None,
            last_error,
        });
    };
    GprModel::assemble(
        inputs.to_vec(),
        targets.to_vec(),
        Hyperparams::from_log(x),
        y_mean,
        y_scale,
    )
}

fn clamp_log(x: [f64; 3]) -> [f64; 3] {
    x.map(|v| v.clamp(-LOG_BOUND, LOG_BOUND))
}

/// BFGS ascent on the log-hyperparameters from `x0`.
fn maximize(
    dist: &DMatrix<f64>,
    y: &[f64],
    x0: [f64; 3],
    opts: &FitOptions,
) -> Result<([f64; 3], f64), GprError> {
    let eval = |x: [f64; 3], grad: bool| lml_dist(dist, y, &Hyperparams::from_log(x), grad);
    let mut x = clamp_log(x0);
    let mut cur = eval(x, true)?;
    // Inverse Hessian approximation of -L.
    let mut h = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

    for _ in 0..opts.max_iterations {
        let g = cur.grad_log;
        if g.iter().all(|v| v.abs() < opts.grad_tolerance) {
            break;
        }
        // Ascent direction d = H g.
        let mut d = [0.0; 3];
        for i in 0..3 {
            d[i] = (0..3).map(|j| h[i][j] * g[j]).sum();
        }
        let mut slope: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
        if !(slope > 0.0) {
            h = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
            d = g;
            slope = g.iter().map(|v| v * v).sum();
        }
        let max_step = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut step = if max_step > 2.0 { 2.0 / max_step } else { 1.0 };

        let mut accepted = None;
        for _ in 0..40 {
            let trial = clamp_log([x[0] + step * d[0], x[1] + step * d[1], x[2] + step * d[2]]);
            if let Ok(v) = eval(trial, false) {
                if v.value >= cur.value + 1e-4 * step * slope {
                    accepted = Some(trial);
                    break;
                }
            }
            step *= 0.5;
        }
        let Some(x_new) = accepted else {
            break;
        };
        let next = eval(x_new, true)?;
        let s = [x_new[0] - x[0], x_new[1] - x[1], x_new[2] - x[2]];
        // Gradient of the minimized objective (-L) changes by -(g_new - g).
        let yv = [
            g[0] - next.grad_log[0],
            g[1] - next.grad_log[1],
            g[2] - next.grad_log[2],
        ];
        let sy: f64 = s.iter().zip(&yv).map(|(a, b)| a * b).sum();
        let improvement = next.value - cur.value;
        x = x_new;
        cur = next;
        if sy > 1e-12 {
            bfgs_update(&mut h, &s, &yv, sy);
        }
        if improvement.abs() < 1e-13 * (1.0 + cur.value.abs()) {
            break;
        }
    }
    if !cur.value.is_finite() {
        return Err(GprError::Invalid("log-likelihood became non-finite".into()));
    }
    Ok((x, cur.value))
}

fn bfgs_update(h: &mut [[f64; 3]; 3], s: &[f64; 3], y: &[f64; 3], sy: f64) {
    let rho = 1.0 / sy;
    let mut hy = [0.0; 3];
    for i in 0..3 {
        hy[i] = (0..3).map(|j| h[i][j] * y[j]).sum();
    }
    let yhy: f64 = (0..3).map(|i| y[i] * hy[i]).sum();
    for i in 0..3 {
        for j in 0..3 {
            h[i][j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_values() {
        let hp = Hyperparams::new(0.1, 2.0, 0.5).unwrap();
        assert_eq!(se_kernel(&[1.0, 2.0], &[1.0, 2.0], &hp), 4.0);
        // |d|^2 = 2 l^2 -> sigma_f^2 / e
        let d = (2.0f64).sqrt() * 0.5;
        let v = se_kernel(&[0.0], &[d], &hp);
        assert!((v - 4.0 * (-1.0f64).exp()).abs() < 1e-14);
        assert!((v / 4.0 - 0.3679).abs() < 1e-4);
        let far = se_kernel(&[0.0], &[100.0], &hp);
        assert!(far >= 0.0 && far < 1e-300);
    }

    #[test]
    fn single_point_likelihood_closed_form() {
        let hp = Hyperparams::new(0.3, 1.7, 0.9).unwrap();
        let y1 = 0.8;
        let s = hp.sigma_f.powi(2) + hp.sigma_n.powi(2);
        let expected = -0.5 * s.ln() - y1 * y1 / (2.0 * s) - 0.5 * (2.0 * PI).ln();
        let got = log_marginal_likelihood(&[vec![0.2, 0.4]], &[y1], &hp).unwrap();
        assert!((got.value - expected).abs() < 1e-14);
    }

    #[test]
    fn zero_targets_leave_only_determinant() {
        let hp = Hyperparams::default();
        let c = vec![vec![0.0], vec![0.5], vec![2.0]];
        let got = log_marginal_likelihood(&c, &[0.0; 3], &hp).unwrap();
        let mut a = kernel_matrix(&c, &hp);
        for i in 0..3 {
            a[(i, i)] += hp.sigma_n.powi(2);
        }
        let expected = -0.5 * a.determinant().ln() - 1.5 * (2.0 * PI).ln();
        assert!((got.value - expected).abs() < 1e-12);
    }

    #[test]
    fn kernel_matrix_is_symmetric() {
        let c: Vec<Vec<f64>> = (0..7).map(|i| vec![i as f64 * 0.3, (i * i) as f64 * 0.01]).collect();
        let k = kernel_matrix(&c, &Hyperparams::default());
        assert!((k.clone() - k.transpose()).amax() <= 1e-14);
    }

    #[test]
    fn prediction_dimension_is_checked() {
        let m = GprModel::with_hyperparams(vec![vec![0.0, 1.0], vec![1.0, 0.0]], vec![1.0, 2.0], Hyperparams::default()).unwrap();
        assert!(matches!(m.predict(&[0.0]), Err(GprError::Dimension(_))));
    }

    #[test]
    fn far_query_reverts_to_prior() {
        let hp = Hyperparams::new(0.1, 1.3, 0.5).unwrap();
        let m = GprModel::with_hyperparams(vec![vec![0.0], vec![1.0]], vec![3.0, 5.0], hp).unwrap();
        let p = m.predict_standardized(&[1e3]).unwrap();
        assert!(p.mean.abs() < 1e-12);
        assert!((p.variance - 1.69).abs() < 1e-12);
        let raw = m.predict(&[1e3]).unwrap();
        assert!((raw.mean - 4.0).abs() < 1e-12);
    }

    #[test]
    fn non_finite_inputs_are_rejected() {
        assert!(fit(&[vec![f64::NAN]], &[1.0], Hyperparams::default(), &FitOptions::default()).is_err());
        assert!(fit(&[vec![1.0], vec![2.0, 3.0]], &[1.0, 2.0], Hyperparams::default(), &FitOptions::default()).is_err());
    }
}
